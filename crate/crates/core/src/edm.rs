//! Dense symmetric linear algebra for Euclidean distance matrices.
//!
//! `kappa` maps a Gram matrix `Y` to the squared-distance matrix
//! `diag(Y) e^T + e diag(Y)^T - 2Y`; `kappa_pinv` is its Moore-Penrose
//! inverse `-1/2 J offDiag(D) J` with `J = I - ee^T/n`. Together they are
//! inverse bijections between centered PSD matrices and EDMs.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SnlError};
use crate::tolerance::RankTolerance;

/// A dense symmetric matrix. Construction symmetrizes as `(A + A^T) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetric matrix must be square");
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Gram matrix `P P^T` of the rows of `points`.
    pub fn gram(points: &DMatrix<f64>) -> Self {
        Self::new(points * points.transpose())
    }

    /// Squared-distance matrix of the rows of `points`.
    pub fn edm_of_points(points: &DMatrix<f64>) -> Self {
        kappa(&Self::gram(points))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn principal(&self, idx: &[usize]) -> Self {
        Self(DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.0[(idx[a], idx[b])]))
    }

    /// Trace inner product `<A, B>`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPair {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_i max(lambda_i, 0) v_i v_i^T`.
    pub fn compose(&self, n: usize) -> SymMatrix {
        let mut out = DMatrix::zeros(n, n);
        for (i, &lam) in self.values.iter().enumerate() {
            if lam > 0.0 {
                let v = self.vectors.column(i);
                out += lam * v * v.transpose();
            }
        }
        SymMatrix::new(out)
    }
}

/// Full symmetric eigendecomposition, eigenvalues sorted descending.
pub fn sym_eigen(b: &SymMatrix) -> EigenPair {
    let n = b.order();
    if n == 0 {
        return EigenPair {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(b.0.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |row, col| eig.eigenvectors[(row, order[col])]);
    EigenPair { values, vectors }
}

/// `K(Y) = diag(Y) e^T + e diag(Y)^T - 2Y`.
pub fn kappa(y: &SymMatrix) -> SymMatrix {
    let n = y.order();
    let mut d = DMatrix::from_fn(n, n, |i, j| y[(i, i)] + y[(j, j)] - 2.0 * y[(i, j)]);
    d.fill_diagonal(0.0);
    SymMatrix(d)
}

/// `K*(D) = 2 (Diag(D e) - D)`.
pub fn kappa_adjoint(d: &SymMatrix) -> SymMatrix {
    let n = d.order();
    let row_sums: Vec<f64> = (0..n).map(|i| d.row(i).sum()).collect();
    let mut out = -2.0 * &d.0;
    for (i, s) in row_sums.into_iter().enumerate() {
        out[(i, i)] += 2.0 * s;
    }
    SymMatrix(out)
}

/// `J X J` with `J = I - ee^T/n`: subtract row and column means.
pub fn double_center(x: &SymMatrix) -> SymMatrix {
    let n = x.order();
    if n == 0 {
        return x.clone();
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| x.row(i).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    SymMatrix::new(DMatrix::from_fn(n, n, |i, j| {
        x[(i, j)] - row_means[i] - row_means[j] + grand
    }))
}

/// `T(D) = -1/2 J offDiag(D) J`, the Moore-Penrose inverse of `kappa`.
pub fn kappa_pinv(d: &SymMatrix) -> SymMatrix {
    let mut off = d.0.clone();
    off.fill_diagonal(0.0);
    let centered = double_center(&SymMatrix(off));
    SymMatrix(centered.0 * -0.5)
}

/// Number of eigenvalues above the tolerance threshold.
pub fn numerical_rank(eig: &EigenPair, tol: RankTolerance) -> usize {
    let lmax = eig.values.iter().copied().fold(0.0_f64, f64::max);
    let cut = tol.threshold(lmax);
    eig.values.iter().filter(|&&l| l > cut).count()
}

/// Best PSD approximation of rank at most `r` in Frobenius norm
/// (Eckart-Young): keep the `r` largest eigenvalues, clipped at zero.
///
/// The returned eigenpair holds only the kept eigenvalues that pass the rank
/// threshold; an all-negative spectrum yields an empty pair and a zero matrix.
pub fn best_psd_rank_r(b: &SymMatrix, r: usize, tol: RankTolerance) -> (EigenPair, SymMatrix) {
    let n = b.order();
    let eig = sym_eigen(b);
    let lmax = eig.values.iter().copied().fold(0.0_f64, f64::max);
    let cut = tol.threshold(lmax);
    let keep = eig
        .values
        .iter()
        .take(r)
        .take_while(|&&l| l > cut && l > 0.0)
        .count();
    let truncated = EigenPair {
        values: eig.values.rows(0, keep).into_owned(),
        vectors: eig.vectors.columns(0, keep).into_owned(),
    };
    // Eigenvalues at or below the cut still contribute their positive part.
    let mut approx = DMatrix::zeros(n, n);
    for i in 0..r.min(n) {
        let lam = eig.values[i];
        if lam > 0.0 {
            let v = eig.vectors.column(i);
            approx += lam * v * v.transpose();
        }
    }
    (truncated, SymMatrix::new(approx))
}

/// Rank-`r` factor `F = Q D^{1/2}` of `B` (top `r` eigenpairs), so that
/// `F F^T` is the best rank-`r` approximation of `B`. Columns are orthogonal.
pub fn full_rank_factor(b: &SymMatrix, r: usize, tol: RankTolerance) -> Result<DMatrix<f64>> {
    let (eig, _) = best_psd_rank_r(b, r, tol);
    if eig.len() < r {
        return Err(SnlError::RankDeficient {
            needed: r,
            found: eig.len(),
        });
    }
    let mut f = eig.vectors;
    for (j, lam) in eig.values.iter().enumerate() {
        f.column_mut(j).scale_mut(lam.sqrt());
    }
    Ok(f)
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(z: &SymMatrix) -> DMatrix<f64> {
    let eig = sym_eigen(z);
    let n = z.order();
    let mut out = DMatrix::zeros(n, n);
    for (i, &lam) in eig.values.iter().enumerate() {
        if lam > 0.0 {
            let v = eig.vectors.column(i);
            out += lam.sqrt() * v * v.transpose();
        }
    }
    out
}

/// Subtract the column means of `m` (left-multiplication by `J`).
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let k = m.nrows() as f64;
    if m.nrows() == 0 {
        return out;
    }
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / k;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Thin SVD returning singular values (descending), left vectors and right
/// vectors transposed. Computed with faer: nalgebra's SVD loses accuracy when
/// singular values cluster.
pub(crate) fn thin_svd(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (DVector::zeros(0), DMatrix::zeros(rows, 0), DMatrix::zeros(0, cols));
    }
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = f.thin_svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sv = DVector::from_iterator(k, idx.iter().map(|&i| s[i]));
    let u = DMatrix::from_fn(rows, k, |r, c| u[(r, idx[c])]);
    let vt = DMatrix::from_fn(k, cols, |r, c| v[(c, idx[r])]);
    (sv, u, vt)
}

/// Full right singular basis (`ncols x ncols`), ordered by descending
/// singular value; columns beyond the row count span the null space.
pub(crate) fn right_singular_basis(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    if m.nrows() >= m.ncols() {
        let (sv, _, vt) = thin_svd(m);
        return (sv, vt.transpose());
    }
    // Wide matrix: m^T m gives the complete basis.
    let gram = SymMatrix::new(m.transpose() * m);
    let eig = sym_eigen(&gram);
    let sv = eig.values.map(|l| l.max(0.0).sqrt());
    (sv, eig.vectors)
}

/// Numerical rank from singular values with a relative cut.
pub(crate) fn rank_from_singular(sv: &DVector<f64>, relative_cut: f64) -> usize {
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > relative_cut * smax).count()
}

/// Pseudo-inverse keeping exactly the `rank` largest singular values.
pub(crate) fn pinv_rank(m: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let (sv, u, vt) = thin_svd(m);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for i in 0..rank.min(sv.len()) {
        if sv[i] > 0.0 {
            out += (vt.row(i).transpose() / sv[i]) * u.column(i).transpose();
        }
    }
    out
}

/// Orthonormal basis of the range of `m`, of the given dimension.
pub(crate) fn range_basis(m: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let (_, u, _) = thin_svd(m);
    u.columns(0, dim.min(u.ncols())).into_owned()
}

/// Sine of the largest principal angle between the ranges of two matrices
/// with orthonormal columns and equal column count.
pub(crate) fn sin_largest_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    let residual = q2 - q1 * (q1.transpose() * q2);
    let (sv, _, _) = thin_svd(&residual);
    sv.iter().copied().fold(0.0, f64::max).min(1.0)
}

//! Faces of the PSD cone attached to cliques, and their intersections.
//!
//! A clique on `k` nodes with embedding dimension `r` is represented by a
//! `k x (r+1)` matrix `U = [V | e/sqrt(k)]` with orthonormal columns and `V`
//! orthogonal to `e`. Every centered Gram matrix completing the clique has the
//! form `V Z V^T` with `Z` PSD, so the face is all we need to carry around.

use nalgebra::{DMatrix, DVector};

use crate::edm::{
    best_psd_rank_r, center_columns, kappa_pinv, pinv_rank, range_basis, rank_from_singular,
    right_singular_basis, sin_largest_angle, thin_svd, SymMatrix,
};
use crate::error::{Result, SnlError};
use crate::instance::PartialEdm;
use crate::tolerance::Tolerances;

#[derive(Clone, Debug, PartialEq)]
pub struct FaceRep {
    /// Sorted ascending.
    pub nodes: Vec<usize>,
    /// `k x (t+1)`; the last column is `alpha * e`.
    pub basis: DMatrix<f64>,
    pub alpha: f64,
}

/// Result of merging two faces whose shared nodes only span `r - 1`
/// dimensions: the union face has one extra column.
#[derive(Clone, Debug)]
pub struct ExtendedFaceRep {
    /// Sorted ascending.
    pub nodes: Vec<usize>,
    /// `k x (r+2)` orthonormal; columns `0..=r` are orthogonal to `e`, the
    /// last is `e/sqrt(k)`.
    pub basis: DMatrix<f64>,
    /// Unit vectors `n_i` in `R^{r+1}` with `J Q[alpha_i] n_i = 0`, where `Q`
    /// is the first `r+1` columns of `basis` and `alpha_i` the node set of the
    /// `i`-th input face.
    pub null_dirs: [nalgebra::DVector<f64>; 2],
    /// Unit null vectors of the shared blocks of the two input bases.
    pub middle_nulls: [nalgebra::DVector<f64>; 2],
    /// Node sets of the two inputs.
    pub parts: [Vec<usize>; 2],
}

impl FaceRep {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Embedding dimension carried by the face (columns minus one).
    pub fn dim(&self) -> usize {
        self.basis.ncols() - 1
    }

    /// Row position of `node` in the basis.
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn rows(&self, nodes: &[usize]) -> Option<Vec<usize>> {
        nodes.iter().map(|&v| self.row_of(v)).collect()
    }

    /// Columns `0..t` of the basis (the part orthogonal to `e`).
    pub fn centered_part(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.dim()).into_owned()
    }
}

impl ExtendedFaceRep {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn r(&self) -> usize {
        self.basis.ncols() - 2
    }

    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn centered_part(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.basis.ncols() - 1).into_owned()
    }
}

fn ones_column(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(k, 1, 1.0 / (k as f64).sqrt())
}

/// `[orth(J X) | e/sqrt(k)]` where `orth` keeps `dim` directions chosen by a
/// column-pivoted QR of the centered columns.
fn normalize_with_ones(x: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let k = x.nrows();
    let centered = center_columns(x);
    let qr = centered.col_piv_qr();
    let q = qr.q();
    let mut basis = DMatrix::zeros(k, dim + 1);
    basis.columns_mut(0, dim).copy_from(&q.columns(0, dim));
    // QR does not see e; project it out once more against round-off.
    let centered_q = center_columns(&basis.columns(0, dim).into_owned());
    let (_, u, _) = thin_svd(&centered_q);
    basis.columns_mut(0, dim).copy_from(&u.columns(0, dim));
    basis.column_mut(dim).copy_from(&ones_column(k));
    basis
}

/// Face of a clique given its dense squared-distance matrix. Noisy data is
/// projected onto the nearest rank-`r` PSD matrix first.
pub fn face_from_sub_edm(nodes: &[usize], d: &SymMatrix, r: usize, tol: &Tolerances) -> Result<FaceRep> {
    let k = nodes.len();
    debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    if k == 1 {
        return Ok(FaceRep {
            nodes: nodes.to_vec(),
            basis: DMatrix::from_element(1, 1, 1.0),
            alpha: 1.0,
        });
    }
    let b = kappa_pinv(d);
    let (eig, _) = best_psd_rank_r(&b, r, tol.rank);
    if eig.len() < r {
        return Err(SnlError::RankDeficient {
            needed: r,
            found: eig.len(),
        });
    }
    Ok(FaceRep {
        nodes: nodes.to_vec(),
        basis: normalize_with_ones(&eig.vectors, r),
        alpha: 1.0 / (k as f64).sqrt(),
    })
}

/// Face of a clique of measured distances. `clique` must be sorted.
pub fn face_from_clique(pedm: &PartialEdm, clique: &[usize], r: usize, tol: &Tolerances) -> Result<FaceRep> {
    let d = pedm.sub_edm(clique)?;
    face_from_sub_edm(clique, &d, r, tol)
}

/// Face spanned by a point configuration (`nodes` sorted, one row per node).
pub fn face_from_points(nodes: &[usize], points: &DMatrix<f64>, tol: &Tolerances) -> Result<FaceRep> {
    let r = points.ncols();
    let centered = center_columns(points);
    let (sv, _, _) = thin_svd(&centered);
    let rank = rank_from_singular(&sv, tol.rank.relative_cut().sqrt());
    if rank < r {
        return Err(SnlError::RankDeficient { needed: r, found: rank });
    }
    Ok(FaceRep {
        nodes: nodes.to_vec(),
        basis: normalize_with_ones(points, r),
        alpha: 1.0 / (nodes.len() as f64).sqrt(),
    })
}

/// Row layout of two faces: nodes only in the first, shared, only in the second.
struct Split {
    union: Vec<usize>,
    only1: Vec<usize>,
    common: Vec<usize>,
    only2: Vec<usize>,
}

fn split(a: &[usize], b: &[usize]) -> Split {
    let (mut i, mut j) = (0, 0);
    let mut s = Split {
        union: Vec::with_capacity(a.len() + b.len()),
        only1: Vec::new(),
        common: Vec::new(),
        only2: Vec::new(),
    };
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            s.only1.push(a[i]);
            s.union.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            s.only2.push(b[j]);
            s.union.push(b[j]);
            j += 1;
        } else {
            s.common.push(a[i]);
            s.union.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    s
}

fn select_rows(face_nodes: &[usize], basis: &DMatrix<f64>, nodes: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(nodes.len(), basis.ncols());
    let mut pos = 0;
    for (row, &v) in nodes.iter().enumerate() {
        // both lists are sorted
        while face_nodes[pos] != v {
            pos += 1;
        }
        out.row_mut(row).copy_from(&basis.row(pos));
    }
    out
}

/// Stack the three row blocks back into sorted union order.
fn assemble(s: &Split, top: &DMatrix<f64>, mid: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = mid.ncols();
    let mut out = DMatrix::zeros(s.union.len(), cols);
    let (mut a, mut b, mut c) = (0, 0, 0);
    for (row, &v) in s.union.iter().enumerate() {
        if a < s.only1.len() && s.only1[a] == v {
            out.row_mut(row).copy_from(&top.row(a));
            a += 1;
        } else if b < s.common.len() && s.common[b] == v {
            out.row_mut(row).copy_from(&mid.row(b));
            b += 1;
        } else {
            out.row_mut(row).copy_from(&bottom.row(c));
            c += 1;
        }
    }
    out
}

struct Middle {
    u1: DMatrix<f64>,
    u2: DMatrix<f64>,
    rank: usize,
    smin1: f64,
    smin2: f64,
}

fn middle_blocks(f1: &FaceRep, f2: &FaceRep, s: &Split, tol: &Tolerances) -> Result<Middle> {
    let u1 = select_rows(&f1.nodes, &f1.basis, &s.common);
    let u2 = select_rows(&f2.nodes, &f2.basis, &s.common);
    let (sv1, _, _) = thin_svd(&u1);
    let (sv2, _, _) = thin_svd(&u2);
    let rank1 = rank_from_singular(&sv1, tol.middle_rank_cut);
    let rank2 = rank_from_singular(&sv2, tol.middle_rank_cut);
    let cols = u1.ncols();
    let smin = |sv: &nalgebra::DVector<f64>, rank: usize| {
        if rank == 0 || sv.len() < rank {
            0.0
        } else {
            sv[rank - 1]
        }
    };
    let rank = rank1.min(rank2).min(cols);
    Ok(Middle {
        smin1: smin(&sv1, rank),
        smin2: smin(&sv2, rank),
        u1,
        u2,
        rank,
    })
}

fn check_ranges(m: &Middle, dim: usize, tol: &Tolerances) -> Result<()> {
    let q1 = range_basis(&m.u1, dim);
    let q2 = range_basis(&m.u2, dim);
    let angle = sin_largest_angle(&q1, &q2).asin();
    if angle > tol.range_angle {
        return Err(SnlError::RangeMismatch { angle });
    }
    Ok(())
}

/// How far the shared nodes are from lying on a lower dimensional affine
/// set, as the smallest over largest singular value of the centered shared
/// rows, taking the better of the two faces.
fn overlap_spread(m: &Middle, r: usize) -> f64 {
    let ratio = |u: &DMatrix<f64>| {
        let (sv, _, _) = thin_svd(&center_columns(u));
        if sv.len() < r || sv[0] <= 0.0 {
            0.0
        } else {
            sv[r - 1] / sv[0]
        }
    };
    ratio(&m.u1).max(ratio(&m.u2))
}

fn require_full(f: &FaceRep, r: usize) -> Result<()> {
    if f.dim() != r {
        return Err(SnlError::RankDeficient {
            needed: r,
            found: f.dim(),
        });
    }
    Ok(())
}

/// Face of the union of two cliques whose shared nodes span all `r`
/// dimensions. Each input row block is expressed in the other's coordinates
/// through the shared rows, using the better conditioned of the two blocks.
pub fn intersect_faces_rigid(f1: &FaceRep, f2: &FaceRep, tol: &Tolerances) -> Result<FaceRep> {
    let r = f1.dim();
    require_full(f1, r)?;
    require_full(f2, r)?;
    let s = split(&f1.nodes, &f2.nodes);
    if s.common.len() < r + 1 {
        return Err(SnlError::IntersectionRankLoss {
            rank: s.common.len().min(r + 1),
            needed: r + 1,
        });
    }
    let mid = middle_blocks(f1, f2, &s, tol)?;
    if mid.rank < r + 1 {
        return Err(SnlError::IntersectionRankLoss {
            rank: mid.rank,
            needed: r + 1,
        });
    }
    check_ranges(&mid, r + 1, tol)?;
    if tol.min_overlap_spread > 0.0 && overlap_spread(&mid, r) < tol.min_overlap_spread {
        return Err(SnlError::IllConditionedOverlap);
    }

    let top1 = select_rows(&f1.nodes, &f1.basis, &s.only1);
    let bottom2 = select_rows(&f2.nodes, &f2.basis, &s.only2);
    let merged = if mid.smin2 >= mid.smin1 {
        // coordinates of the first face
        let map = pinv_rank(&mid.u2, r + 1) * &mid.u1;
        assemble(&s, &top1, &mid.u1, &(bottom2 * map))
    } else {
        let map = pinv_rank(&mid.u1, r + 1) * &mid.u2;
        assemble(&s, &(top1 * map), &mid.u2, &bottom2)
    };
    let k = s.union.len();
    Ok(FaceRep {
        basis: normalize_with_ones(&merged, r),
        nodes: s.union,
        alpha: 1.0 / (k as f64).sqrt(),
    })
}

/// Union face when the shared nodes span only `r - 1` dimensions. The result
/// has one more column than a clique face and leaves a one-parameter family
/// of completions; see `recovery::two_completions`.
pub fn intersect_faces_nonrigid(f1: &FaceRep, f2: &FaceRep, tol: &Tolerances) -> Result<ExtendedFaceRep> {
    let r = f1.dim();
    require_full(f1, r)?;
    require_full(f2, r)?;
    let s = split(&f1.nodes, &f2.nodes);
    let mid = middle_blocks(f1, f2, &s, tol)?;
    if mid.rank > r {
        return Err(SnlError::RigidIntersection { rank: mid.rank });
    }
    if mid.rank < r || s.common.len() < r {
        return Err(SnlError::IntersectionRankLoss {
            rank: mid.rank,
            needed: r,
        });
    }
    check_ranges(&mid, r, tol)?;

    let null_of = |m: &DMatrix<f64>| {
        let (_, v) = right_singular_basis(m);
        v.column(r).into_owned()
    };
    let u1n = null_of(&mid.u1);
    let u2n = null_of(&mid.u2);
    let as_col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());

    let top1 = select_rows(&f1.nodes, &f1.basis, &s.only1);
    let bottom2 = select_rows(&f2.nodes, &f2.basis, &s.only2);
    let k = s.union.len();
    let mut x = DMatrix::zeros(k, r + 2);
    let (main, extra) = if mid.smin2 >= mid.smin1 {
        let map = pinv_rank(&mid.u2, r) * &mid.u1;
        let main = assemble(&s, &top1, &mid.u1, &(&bottom2 * map));
        let zeros1 = DMatrix::zeros(s.only1.len(), 1);
        let zerosc = DMatrix::zeros(s.common.len(), 1);
        let extra = assemble(&s, &zeros1, &zerosc, &(&bottom2 * as_col(&u2n)));
        (main, extra)
    } else {
        let map = pinv_rank(&mid.u1, r) * &mid.u2;
        let main = assemble(&s, &(&top1 * map), &mid.u2, &bottom2);
        let zerosc = DMatrix::zeros(s.common.len(), 1);
        let zeros2 = DMatrix::zeros(s.only2.len(), 1);
        let extra = assemble(&s, &(&top1 * as_col(&u1n)), &zerosc, &zeros2);
        (main, extra)
    };
    x.columns_mut(0, r + 1).copy_from(&main);
    x.column_mut(r + 1).copy_from(&extra.column(0));

    let centered = center_columns(&x);
    let (sv, u, _) = thin_svd(&centered);
    let rank = rank_from_singular(&sv, tol.middle_rank_cut);
    if rank < r + 1 {
        return Err(SnlError::IntersectionRankLoss { rank, needed: r + 1 });
    }
    let mut basis = DMatrix::zeros(k, r + 2);
    basis.columns_mut(0, r + 1).copy_from(&u.columns(0, r + 1));
    basis.column_mut(r + 1).copy_from(&ones_column(k));

    let q = basis.columns(0, r + 1).into_owned();
    let part_null = |part: &[usize]| {
        let rows = select_rows(&s.union, &q, part);
        null_of(&center_columns(&rows))
    };
    let null_dirs = [part_null(&f1.nodes), part_null(&f2.nodes)];
    Ok(ExtendedFaceRep {
        nodes: s.union,
        basis,
        null_dirs,
        middle_nulls: [u1n, u2n],
        parts: [f1.nodes.clone(), f2.nodes.clone()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::SymMatrix;
    use approx::assert_relative_eq;

    fn tol() -> Tolerances {
        Tolerances::noiseless()
    }

    fn face_of(nodes: &[usize], pts: &DMatrix<f64>) -> FaceRep {
        let sub = DMatrix::from_fn(nodes.len(), pts.ncols(), |i, j| pts[(nodes[i], j)]);
        face_from_sub_edm(nodes, &SymMatrix::edm_of_points(&sub), pts.ncols(), &tol()).unwrap()
    }

    fn check_invariants(f: &FaceRep) {
        let k = f.len();
        let t = f.basis.ncols();
        assert_relative_eq!(f.basis.transpose() * &f.basis, DMatrix::identity(t, t), epsilon = 1e-9);
        for i in 0..k {
            assert!((f.basis[(i, t - 1)] - f.alpha).abs() <= 1e-9);
        }
    }

    #[test]
    fn collinear_clique_in_one_dimension() {
        let pts = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let f = face_of(&[0, 1, 2], &pts);
        check_invariants(&f);
        let c = nalgebra::DVector::from_row_slice(&[-4.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0]).normalize();
        let v = f.basis.column(0);
        assert_relative_eq!(v.dot(&c).abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.alpha, 1.0 / 3.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn singleton_face() {
        let f = face_from_sub_edm(&[4], &SymMatrix::zeros(1), 2, &tol()).unwrap();
        assert_eq!(f.basis, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(f.alpha, 1.0);
    }

    #[test]
    fn generic_square_face_contains_truth() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.9, 0.3, 0.4, 0.8, 0.7, 0.6]);
        let f = face_of(&[0, 1, 2, 3], &pts);
        check_invariants(&f);
        // the centered truth lies in the face range
        let c = center_columns(&pts);
        let resid = &c - &f.basis * (f.basis.transpose() * &c);
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn collinear_clique_in_plane_is_rank_deficient() {
        let pts = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        let d = SymMatrix::edm_of_points(&pts);
        assert!(matches!(
            face_from_sub_edm(&[0, 1, 2], &d, 2, &tol()),
            Err(SnlError::RankDeficient { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn rigid_union_of_two_triangles_sharing_three_nodes() {
        let pts = DMatrix::from_row_slice(
            5,
            2,
            &[0.1, 0.2, 0.9, 0.3, 0.4, 0.8, 0.7, 0.6, 0.2, 0.95],
        );
        let f1 = face_of(&[0, 1, 2, 3], &pts);
        let f2 = face_of(&[1, 2, 3, 4], &pts);
        let u = intersect_faces_rigid(&f1, &f2, &tol()).unwrap();
        check_invariants(&u);
        assert_eq!(u.nodes, vec![0, 1, 2, 3, 4]);
        let c = center_columns(&pts);
        let resid = &c - &u.basis * (u.basis.transpose() * &c);
        assert!(resid.norm() < 1e-10);
    }

    #[test]
    fn rigid_union_with_itself_keeps_range() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.9, 0.3, 0.4, 0.8, 0.7, 0.6]);
        let f = face_of(&[0, 1, 2, 3], &pts);
        let u = intersect_faces_rigid(&f, &f, &tol()).unwrap();
        assert!(sin_largest_angle(&f.basis, &u.basis) < 1e-12);
    }

    #[test]
    fn collinear_overlap_is_not_rigid() {
        let pts = DMatrix::from_row_slice(
            6,
            2,
            &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.9, 0.1, 0.1, 0.9, 0.3, 0.2],
        );
        let f1 = face_of(&[0, 1, 2, 3], &pts);
        let f2 = face_of(&[0, 1, 2, 4], &pts);
        assert!(matches!(
            intersect_faces_rigid(&f1, &f2, &tol()),
            Err(SnlError::IntersectionRankLoss { rank: 2, needed: 3 })
        ));
    }

    #[test]
    fn flat_overlap_waits_for_a_lower_spread_floor() {
        // shared nodes 0, 1, 2 are almost on a line
        let pts = DMatrix::from_row_slice(
            6,
            2,
            &[0.0, 0.0, 0.5, 0.51, 1.0, 1.0, 0.9, 0.1, 0.1, 0.9, 0.3, 0.2],
        );
        let f1 = face_of(&[0, 1, 2, 3], &pts);
        let f2 = face_of(&[0, 1, 2, 4], &pts);
        let strict = Tolerances {
            min_overlap_spread: 0.1,
            ..tol()
        };
        assert!(matches!(
            intersect_faces_rigid(&f1, &f2, &strict),
            Err(SnlError::IllConditionedOverlap)
        ));
        let merged = intersect_faces_rigid(&f1, &f2, &tol()).unwrap();
        assert_eq!(merged.nodes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn butterfly_gives_extended_face() {
        let pts = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 0.1, 0.3, 0.8, 0.6, -0.7, 0.9, -0.4]);
        let f1 = face_of(&[0, 1, 2], &pts);
        let f2 = face_of(&[0, 1, 3, 4], &pts);
        let ext = intersect_faces_nonrigid(&f1, &f2, &tol()).unwrap();
        assert_eq!(ext.basis.ncols(), 4);
        let e = DMatrix::from_element(5, 1, 1.0);
        let resid = &e - &ext.basis * (ext.basis.transpose() * &e);
        assert!(resid.norm() < 1e-12);
        let m1 = select_rows(&f1.nodes, &f1.basis, &[0, 1]);
        assert!((m1 * &ext.middle_nulls[0]).norm() < 1e-9);
        assert!(matches!(
            intersect_faces_rigid(&f1, &f2, &tol()),
            Err(SnlError::IntersectionRankLoss { .. })
        ));
    }
}

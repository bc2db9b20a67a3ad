//! From faces back to coordinates: solve for the Gram block on a measured
//! seed, pick between the two completions of a non-rigid union, align to the
//! anchors and score against the truth.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::edm::{
    center_columns, full_rank_factor, kappa_pinv, pinv_rank, psd_sqrt, rank_from_singular,
    sym_eigen, thin_svd, SymMatrix,
};
use crate::error::{Result, SnlError};
use crate::faces::{ExtendedFaceRep, FaceRep};
use crate::instance::PartialEdm;
use crate::reducer::StepCounters;
use crate::tolerance::Tolerances;

/// Coordinates for a node set, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub nodes: Vec<usize>,
    pub coords: DMatrix<f64>,
}

impl Completion {
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&v| v == node)
    }

    /// Squared-distance matrix of the completion.
    pub fn edm(&self) -> SymMatrix {
        SymMatrix::edm_of_points(&self.coords)
    }
}

/// Singular value cut for the design matrix `J U_beta` of a seed.
const DESIGN_RANK_CUT: f64 = 1e-8;

fn seed_design(face: &FaceRep, beta_rows: &[usize]) -> Result<DMatrix<f64>> {
    let r = face.dim();
    let a = center_columns(&DMatrix::from_fn(beta_rows.len(), r, |i, j| face.basis[(beta_rows[i], j)]));
    let (sv, _, _) = thin_svd(&a);
    let rank = rank_from_singular(&sv, DESIGN_RANK_CUT);
    if rank < r {
        return Err(SnlError::RankDeficient { needed: r, found: rank });
    }
    Ok(a)
}

/// Gram block `Z` with `(J U_beta V) Z (J U_beta V)^T = B_beta`, computed as
/// `A^+ B (A^+)^T`. `beta_rows` index rows of the face basis.
pub fn solve_z(face: &FaceRep, beta_rows: &[usize], b_beta: &SymMatrix) -> Result<SymMatrix> {
    let a = seed_design(face, beta_rows)?;
    let ap = pinv_rank(&a, face.dim());
    Ok(SymMatrix::new(&ap * b_beta.matrix() * ap.transpose()))
}

/// Same `Z` from a factor `B_beta = F F^T`: `C = A^+ F` and `Z = C C^T`.
pub fn solve_z_factored(face: &FaceRep, beta_rows: &[usize], factor: &DMatrix<f64>) -> Result<SymMatrix> {
    let a = seed_design(face, beta_rows)?;
    let c = pinv_rank(&a, face.dim()) * factor;
    Ok(SymMatrix::new(&c * c.transpose()))
}

/// Relative residual `|A Z A^T - B|_F / |B|_F` of a `Z` solve.
pub fn z_residual(face: &FaceRep, beta_rows: &[usize], z: &SymMatrix, b_beta: &SymMatrix) -> f64 {
    let r = face.dim();
    let a = center_columns(&DMatrix::from_fn(beta_rows.len(), r, |i, j| face.basis[(beta_rows[i], j)]));
    let fit = &a * z.matrix() * a.transpose();
    (fit - b_beta.matrix()).norm() / b_beta.norm().max(f64::MIN_POSITIVE)
}

/// `r x r` map taking the centered face columns to coordinates, fixed by a
/// measured seed: `P = U[:, ..r] * T` with `T = Z^{1/2}`.
pub fn seed_transform(face: &FaceRep, seed: &[usize], d_seed: &SymMatrix, tol: &Tolerances) -> Result<(DMatrix<f64>, f64)> {
    let r = face.dim();
    let rows = face
        .rows(seed)
        .ok_or(SnlError::NoRigidSeed { r })?;
    let b = kappa_pinv(d_seed);
    let factor = full_rank_factor(&b, r, tol.rank).map_err(|_| SnlError::NoRigidSeed { r })?;
    let z = solve_z_factored(face, &rows, &factor)?;
    let projected = SymMatrix::new(&factor * factor.transpose());
    let resid = z_residual(face, &rows, &z, &projected);
    Ok((psd_sqrt(&z), resid))
}

/// Coordinates of every node of `face` from a measured seed inside it.
pub fn points_from_seed(face: &FaceRep, seed: &[usize], d_seed: &SymMatrix, tol: &Tolerances) -> Result<Completion> {
    let (t, _) = seed_transform(face, seed, d_seed, tol)?;
    Ok(Completion {
        nodes: face.nodes.clone(),
        coords: face.centered_part() * t,
    })
}

/// Quality of a measured seed: the `r`-th eigenvalue of its Gram matrix, or
/// `None` if the seed does not span `r` dimensions.
pub fn seed_quality(d_seed: &SymMatrix, r: usize, tol: &Tolerances) -> Option<f64> {
    let eig = sym_eigen(&kappa_pinv(d_seed));
    if eig.len() < r.max(1) {
        return None;
    }
    let lmax = eig.values[0].max(0.0);
    let lr = eig.values[r - 1];
    (lr > tol.rank.threshold(lmax)).then_some(lr)
}

/// Coordinates of every node of `face`, using the best measured clique found
/// inside it as the seed: for each node, its measured neighbors inside the
/// face are added greedily by distance while they stay a clique.
pub fn points_from_face(face: &FaceRep, pedm: &PartialEdm, tol: &Tolerances) -> Result<Completion> {
    let r = face.dim();
    let cap = 3 * (r + 1);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for &v in &face.nodes {
        let mut nbrs: Vec<(usize, f64)> = pedm
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&(u, _)| face.row_of(u).is_some())
            .collect();
        nbrs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut clique = vec![v];
        for (u, _) in nbrs {
            if clique.len() == cap {
                break;
            }
            if clique.iter().all(|&w| pedm.is_known(u, w)) {
                clique.push(u);
            }
        }
        if clique.len() < r + 1 {
            continue;
        }
        clique.sort_unstable();
        let d = pedm.sub_edm(&clique)?;
        if let Some(q) = seed_quality(&d, r, tol) {
            let better = match &best {
                None => true,
                Some((bq, bc)) => clique.len() > bc.len() || (clique.len() == bc.len() && q > *bq),
            };
            if better {
                best = Some((q, clique));
            }
        }
    }
    let (_, seed) = best.ok_or(SnlError::NoRigidSeed { r })?;
    let d = pedm.sub_edm(&seed)?;
    points_from_seed(face, &seed, &d, tol)
}

fn sym_index(p: usize, q: usize, s: usize) -> usize {
    // upper triangle, row major
    let (p, q) = if p <= q { (p, q) } else { (q, p) };
    p * s - p * (p + 1) / 2 + q
}

/// Minimum-norm least-squares symmetric `Z` for the stacked equations
/// `A_i Z A_i^T = B_i`.
fn stacked_solve(blocks: &[(DMatrix<f64>, &SymMatrix)], s: usize) -> DMatrix<f64> {
    let unknowns = s * (s + 1) / 2;
    let rows: usize = blocks.iter().map(|(a, _)| a.nrows() * (a.nrows() + 1) / 2).sum();
    let mut m = DMatrix::zeros(rows, unknowns);
    let mut rhs = DVector::zeros(rows);
    let mut row = 0;
    for (a, b) in blocks {
        for i in 0..a.nrows() {
            for j in i..a.nrows() {
                for p in 0..s {
                    for q in p..s {
                        let coef = if p == q {
                            a[(i, p)] * a[(j, p)]
                        } else {
                            a[(i, p)] * a[(j, q)] + a[(i, q)] * a[(j, p)]
                        };
                        m[(row, sym_index(p, q, s))] = coef;
                    }
                }
                rhs[row] = b[(i, j)];
                row += 1;
            }
        }
    }
    let (sv, u, vt) = thin_svd(&m);
    let rank = rank_from_singular(&sv, 1e-9);
    let mut z = DVector::zeros(unknowns);
    for k in 0..rank {
        let coef = u.column(k).dot(&rhs) / sv[k];
        z += coef * vt.row(k).transpose();
    }
    DMatrix::from_fn(s, s, |p, q| z[sym_index(p, q, s)])
}

/// Real roots `s` of `det(Z + s dZ) = 0`.
fn singular_steps(z: &SymMatrix, dz: &SymMatrix) -> Vec<f64> {
    let eig = sym_eigen(z);
    let lmax = eig.values[0];
    let lmin = eig.values[eig.len() - 1];
    if lmax > 0.0 && lmin > 1e-10 * lmax {
        // Z > 0: s = -1/mu for the eigenvalues mu of Z^{-1/2} dZ Z^{-1/2}
        let mut inv_sqrt = DMatrix::zeros(z.order(), z.order());
        for (i, &l) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(i);
            inv_sqrt += (1.0 / l.sqrt()) * v * v.transpose();
        }
        let m = SymMatrix::new(&inv_sqrt * dz.matrix() * &inv_sqrt);
        let mu = sym_eigen(&m);
        let scale = mu.values.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        return mu
            .values
            .iter()
            .filter(|&&x| x.abs() > 1e-10 * scale)
            .map(|&x| -1.0 / x)
            .collect();
    }
    // det(Z + s dZ) is quadratic in s because dZ has rank two.
    let h = z.norm().max(f64::MIN_POSITIVE) / dz.norm().max(f64::MIN_POSITIVE);
    let det = |s: f64| (z.matrix() + dz.matrix() * s).determinant();
    let (fm, f0, fp) = (det(-h), det(0.0), det(h));
    let a = (fp + fm - 2.0 * f0) / (2.0 * h * h);
    let b = (fp - fm) / (2.0 * h);
    let c = f0;
    let scale = fm.abs().max(f0.abs()).max(fp.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if (a * h * h).abs() <= 1e-12 * scale {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        if disc.abs() <= 1e-8 * b * b {
            disc = 0.0;
        } else {
            return Vec::new();
        }
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let qv = -0.5 * (b + b.signum() * sq);
    if qv == 0.0 {
        return vec![0.0];
    }
    vec![qv / a, c / qv]
}

/// The at most two rank-`r` PSD completions of an extended face that agree
/// with the Gram blocks `B_i` on the node sets `delta_i`.
///
/// `blocks[i]` is `(delta_i, B_i)` with `B_i` the centered Gram matrix of
/// `delta_i` (rows in the order of `delta_i`). Returns completions over
/// `ext.nodes`.
pub fn two_completions(
    ext: &ExtendedFaceRep,
    blocks: [(&[usize], &SymMatrix); 2],
    tol: &Tolerances,
) -> Result<Vec<Completion>> {
    let r = ext.r();
    let s = r + 1;
    let q = ext.centered_part();
    let mut design = Vec::with_capacity(2);
    for (delta, b) in blocks {
        let rows: Vec<usize> = delta
            .iter()
            .map(|&v| ext.row_of(v).ok_or(SnlError::NoRigidSeed { r }))
            .collect::<Result<_>>()?;
        let a = center_columns(&DMatrix::from_fn(rows.len(), s, |i, j| q[(rows[i], j)]));
        design.push((a, b));
    }
    let zbar = SymMatrix::new(stacked_solve(&design, s));
    let (n1, n2) = (&ext.null_dirs[0], &ext.null_dirs[1]);
    let dz = SymMatrix::new(n1 * n2.transpose() + n2 * n1.transpose());

    let psd_cut = 1e-7 + 10.0 * tol.noise_factor;
    let mut out: Vec<Completion> = Vec::new();
    for step in singular_steps(&zbar, &dz) {
        let zc = SymMatrix::new(zbar.matrix() + dz.matrix() * step);
        let eig = sym_eigen(&zc);
        let lmax = eig.values[0];
        if lmax <= 0.0 || eig.values[s - 1] < -psd_cut * lmax || eig.values[r - 1] <= tol.rank.threshold(lmax) {
            continue;
        }
        let mut factor = eig.vectors.columns(0, r).into_owned();
        for j in 0..r {
            factor.column_mut(j).scale_mut(eig.values[j].sqrt());
        }
        let coords = &q * factor;
        let dup = out.iter().any(|c| {
            (c.edm().matrix() - SymMatrix::edm_of_points(&coords).matrix()).norm()
                <= 1e-9 * (1.0 + coords.norm_squared())
        });
        if !dup {
            out.push(Completion {
                nodes: ext.nodes.clone(),
                coords,
            });
        }
    }
    if out.is_empty() {
        return Err(SnlError::NoRealBranch);
    }
    Ok(out)
}

/// `two_completions` with the Gram blocks taken from measured distances.
pub fn two_completions_measured(
    ext: &ExtendedFaceRep,
    pedm: &PartialEdm,
    delta1: &[usize],
    delta2: &[usize],
    tol: &Tolerances,
) -> Result<Vec<Completion>> {
    let r = ext.r();
    let b1 = measured_gram(pedm, delta1, r, tol)?;
    let b2 = measured_gram(pedm, delta2, r, tol)?;
    two_completions(ext, [(delta1, &b1), (delta2, &b2)], tol)
}

fn measured_gram(pedm: &PartialEdm, nodes: &[usize], r: usize, tol: &Tolerances) -> Result<SymMatrix> {
    let b = kappa_pinv(&pedm.sub_edm(nodes)?);
    let (_, approx) = crate::edm::best_psd_rank_r(&b, r, tol.rank);
    Ok(approx)
}

/// Distances used to tell the two completions apart, by completion row.
#[derive(Clone, Debug, Default)]
pub struct CrossChecks {
    /// Measured pairs `(row_a, row_b, d2)`.
    pub known: Vec<(usize, usize, f64)>,
    /// Unmeasured pairs, which must be at least the radio range apart.
    pub unknown: Vec<(usize, usize)>,
}

impl CrossChecks {
    /// True when the checks can rule out a completion under `tol`.
    pub fn is_informative(&self, tol: &Tolerances) -> bool {
        !self.known.is_empty() || (tol.lower_bounds && !self.unknown.is_empty())
    }
}

fn row_dist2(coords: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (coords.row(a) - coords.row(b)).norm_squared()
}

pub fn is_feasible(comp: &Completion, checks: &CrossChecks, tol: &Tolerances) -> bool {
    let known_ok = checks.known.iter().all(|&(a, b, d2)| {
        (row_dist2(&comp.coords, a, b) - d2).abs() <= tol.feasibility_slack(d2)
    });
    if !known_ok {
        return false;
    }
    if !tol.lower_bounds {
        return true;
    }
    let r2 = tol.radio_range * tol.radio_range;
    checks
        .unknown
        .iter()
        .all(|&(a, b)| row_dist2(&comp.coords, a, b) >= r2 - tol.feasibility_slack(r2))
}

/// Index of the unique feasible candidate, if exactly one passes and the
/// checks carry any information at all.
pub fn select_completion(cands: &[Completion], checks: &CrossChecks, tol: &Tolerances) -> Option<usize> {
    if !checks.is_informative(tol) {
        return None;
    }
    let feasible: Vec<usize> = (0..cands.len())
        .filter(|&i| is_feasible(&cands[i], checks, tol))
        .collect();
    match feasible.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// Outcome of a rigid alignment to the anchors.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub completion: Completion,
    /// Frobenius norm of the anchor-row mismatch after alignment.
    pub residual: f64,
    /// Anchors leave a reflection undetermined.
    pub ambiguous: bool,
}

/// Least-squares rigid motion (reflections allowed) taking the anchor rows of
/// `comp` onto `anchors`; applied to every row.
pub fn align_to_anchors(comp: &Completion, anchors: &DMatrix<f64>, anchor_nodes: &[usize]) -> Result<Alignment> {
    let r = comp.coords.ncols();
    let m = anchor_nodes.len();
    let rows: Vec<usize> = anchor_nodes
        .iter()
        .map(|&v| {
            comp.row_of(v).ok_or_else(|| {
                SnlError::InvalidConfig(format!("anchor node {v} missing from the completion"))
            })
        })
        .collect::<Result<_>>()?;
    if m == 0 {
        return Err(SnlError::DegenerateAnchors { rank: 0, r });
    }
    let x = DMatrix::from_fn(m, r, |i, j| comp.coords[(rows[i], j)]);
    let cx = x.row_mean();
    let ct = anchors.row_mean();
    let xc = DMatrix::from_fn(m, r, |i, j| x[(i, j)] - cx[j]);
    let tc = DMatrix::from_fn(m, r, |i, j| anchors[(i, j)] - ct[j]);
    let h = xc.transpose() * &tc;
    let (sv, u, vt) = thin_svd(&h);
    let rank = rank_from_singular(&sv, 1e-9);
    if rank + 1 < r || sv.iter().all(|&s| s == 0.0) {
        return Err(SnlError::DegenerateAnchors { rank, r });
    }
    let rot = u * vt;
    let mut coords = &comp.coords * &rot;
    let shift = ct - cx * &rot;
    for mut row in coords.row_iter_mut() {
        row += &shift;
    }
    let aligned_anchors = DMatrix::from_fn(m, r, |i, j| coords[(rows[i], j)]);
    Ok(Alignment {
        residual: (aligned_anchors - anchors).norm(),
        ambiguous: rank < r,
        completion: Completion {
            nodes: comp.nodes.clone(),
            coords,
        },
    })
}

/// `(max_error, rmsd)` between matching rows.
pub fn metrics(positioned: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<(f64, f64)> {
    if positioned.nrows() == 0 {
        return Err(SnlError::EmptyPositioned);
    }
    let errs: Vec<f64> = (0..positioned.nrows())
        .map(|i| (positioned.row(i) - truth.row(i)).norm_squared())
        .collect();
    let max = errs.iter().copied().fold(0.0, f64::max).sqrt();
    let rmsd = (errs.iter().sum::<f64>() / errs.len() as f64).sqrt();
    Ok((max, rmsd))
}

/// Result of one solve.
#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    /// Positioned sensors and their coordinates.
    pub positioned: BTreeMap<usize, Vec<f64>>,
    pub success: bool,
    /// Filled in when the true positions are known.
    pub max_error: Option<f64>,
    pub rmsd: Option<f64>,
    pub cpu_seconds: f64,
    pub counters: StepCounters,
    /// Anchor mismatch after alignment.
    pub anchor_residual: f64,
    pub ambiguous_alignment: bool,
    /// Relative residual of the final `Z` solve on its seed.
    pub z_residual: f64,
    pub final_clique_size: usize,
    pub active_cliques: usize,
}

impl SolveReport {
    /// Fill `max_error` and `rmsd` from the true coordinates (one row per node).
    pub fn score(&mut self, truth: &DMatrix<f64>) {
        if self.positioned.is_empty() {
            return;
        }
        let r = truth.ncols();
        let k = self.positioned.len();
        let mut est = DMatrix::zeros(k, r);
        let mut tr = DMatrix::zeros(k, r);
        for (row, (&node, coords)) in self.positioned.iter().enumerate() {
            for j in 0..r {
                est[(row, j)] = coords[j];
                tr[(row, j)] = truth[(node, j)];
            }
        }
        if let Ok((max, rmsd)) = metrics(&est, &tr) {
            self.max_error = Some(max);
            self.rmsd = Some(rmsd);
        }
    }
}

#![allow(dead_code)]

use facial_snl::edm::SymMatrix;
use facial_snl::faces::{face_from_sub_edm, FaceRep};
use facial_snl::Tolerances;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, r, |_, _| rng.random::<f64>())
}

pub fn sub(pts: &DMatrix<f64>, nodes: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(nodes.len(), pts.ncols(), |i, j| pts[(nodes[i], j)])
}

pub fn face_of(nodes: &[usize], pts: &DMatrix<f64>) -> FaceRep {
    let d = SymMatrix::edm_of_points(&sub(pts, nodes));
    face_from_sub_edm(nodes, &d, pts.ncols(), &Tolerances::noiseless()).unwrap()
}

/// `(sv descending, u, v)` from faer, independent of the crate's helpers.
pub fn svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let s = f.thin_svd().unwrap();
    let k = m.nrows().min(m.ncols());
    let sv: Vec<f64> = (0..k).map(|i| s.S().column_vector()[i]).collect();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let u = DMatrix::from_fn(m.nrows(), k, |i, c| s.U()[(i, idx[c])]);
    let v = DMatrix::from_fn(m.ncols(), k, |i, c| s.V()[(i, idx[c])]);
    (idx.iter().map(|&i| sv[i]).collect(), u, v)
}

/// Orthonormal basis of the range, dropping directions below `rel * sigma_max`.
pub fn orth(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let (sv, u, _) = svd(m);
    let keep = sv.iter().filter(|&&s| s > rel * sv[0]).count();
    u.columns(0, keep).into_owned()
}

/// Intersection of two subspaces from the singular values of `Qa^T Qb`
/// that equal one.
pub fn subspace_intersection(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let qa = orth(a, 1e-12);
    let qb = orth(b, 1e-12);
    let (sv, u, _) = svd(&(qa.transpose() * &qb));
    let keep = sv.iter().filter(|&&s| s > 1.0 - 1e-9).count();
    &qa * u.columns(0, keep)
}

/// Sine of the largest principal angle between the ranges of two
/// orthonormal bases of equal dimension.
pub fn sin_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    if q1.ncols() != q2.ncols() {
        return 1.0;
    }
    let resid = q2 - q1 * (q1.transpose() * q2);
    svd(&resid).0.first().copied().unwrap_or(0.0)
}

/// Union node list and the two faces lifted to it: each face's rows on its
/// own nodes plus identity columns for the other face's private nodes.
pub fn padded_faces(f1: &FaceRep, f2: &FaceRep) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
    let mut union: Vec<usize> = f1.nodes.iter().chain(&f2.nodes).copied().collect();
    union.sort_unstable();
    union.dedup();
    let pad = |f: &FaceRep, other: &FaceRep| {
        let extra: Vec<usize> = other.nodes.iter().filter(|v| !f.nodes.contains(v)).copied().collect();
        let t = f.basis.ncols();
        let mut m = DMatrix::zeros(union.len(), t + extra.len());
        for (row, v) in union.iter().enumerate() {
            if let Some(i) = f.nodes.iter().position(|x| x == v) {
                m.view_mut((row, 0), (1, t)).copy_from(&f.basis.row(i));
            } else {
                let c = extra.iter().position(|x| x == v).unwrap();
                m[(row, t + c)] = 1.0;
            }
        }
        m
    };
    let a = pad(f1, f2);
    let b = pad(f2, f1);
    (union, a, b)
}

/// Two overlapping cliques over `k1 + k2 - shared` generic points; node
/// ids are shuffled so neither clique is a contiguous block.
pub fn clique_pair(
    rng: &mut ChaCha8Rng,
    r: usize,
    k1: usize,
    k2: usize,
    shared: usize,
) -> (DMatrix<f64>, Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let n = k1 + k2 - shared;
    let pts = random_points(rng, n, r);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut a: Vec<usize> = ids[..k1].to_vec();
    let mut b: Vec<usize> = ids[k1 - shared..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (pts, a, b)
}

/// Largest entrywise gap between two squared-distance matrices.
pub fn edm_gap(a: &SymMatrix, b: &SymMatrix) -> f64 {
    (a.matrix() - b.matrix()).abs().max()
}

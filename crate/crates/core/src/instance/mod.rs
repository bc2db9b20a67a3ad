//! Random instances, partial distance data and problem files.
//!
//! Random streams: a trial seeded with `s` draws point coordinates from
//! `ChaCha8Rng::seed_from_u64(s)` on stream 0 (row by row, coordinate by
//! coordinate) and measurement noise from the same seed on stream 1, one
//! standard normal per known non-anchor pair in lexicographic `(i < j)` order.

mod graph;
pub mod io;

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SnlError};

pub use graph::PartialEdm;

const POINT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Ground truth for one random network. The last `m` rows of `points` are
/// the anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub points: DMatrix<f64>,
    pub radio_range: f64,
    pub noise_factor: f64,
    pub seed: u64,
}

/// What the solver sees: distances, anchor positions and model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub pedm: PartialEdm,
    /// `m x r` anchor coordinates, row `a` belongs to node `n - m + a`.
    pub anchors: DMatrix<f64>,
    pub r: usize,
    pub radio_range: f64,
    pub noise_factor: f64,
}

/// A measured clique around a center node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliqueSeed {
    pub center: usize,
    /// Sorted ascending; contains `center`.
    pub members: Vec<usize>,
}

impl Instance {
    pub fn sensor_count(&self) -> usize {
        self.n - self.m
    }

    pub fn anchor_points(&self) -> DMatrix<f64> {
        self.points.rows(self.n - self.m, self.m).into_owned()
    }

    pub fn problem(&self) -> Problem {
        Problem {
            pedm: build_partial_edm(self),
            anchors: self.anchor_points(),
            r: self.r,
            radio_range: self.radio_range,
            noise_factor: self.noise_factor,
        }
    }
}

/// Uniform random points in `[0, 1]^r`; the last `m` are anchors.
pub fn generate_instance(
    n: usize,
    m: usize,
    r: usize,
    radio_range: f64,
    noise_factor: f64,
    seed: u64,
) -> Result<Instance> {
    if n <= m {
        return Err(SnlError::InvalidConfig(format!(
            "need more nodes than anchors (n = {n}, m = {m})"
        )));
    }
    if r == 0 {
        return Err(SnlError::InvalidConfig("dimension must be positive".into()));
    }
    if radio_range.is_nan() || radio_range <= 0.0 {
        return Err(SnlError::InvalidConfig(format!(
            "radio range must be positive, got {radio_range}"
        )));
    }
    if noise_factor.is_nan() || noise_factor < 0.0 {
        return Err(SnlError::InvalidConfig(format!(
            "noise factor must be >= 0, got {noise_factor}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POINT_STREAM);
    let mut points = DMatrix::zeros(n, r);
    for i in 0..n {
        for k in 0..r {
            points[(i, k)] = rng.random::<f64>();
        }
    }
    Ok(Instance {
        n,
        m,
        r,
        points,
        radio_range,
        noise_factor,
        seed,
    })
}

fn squared_distance(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..points.ncols())
        .map(|k| (points[(i, k)] - points[(j, k)]).powi(2))
        .sum()
}

/// Pairs `i < j` with distance strictly below `range`, in lexicographic order.
pub fn pairs_within_range(points: &DMatrix<f64>, range: f64) -> Vec<(usize, usize)> {
    let n = points.nrows();
    let r = points.ncols();
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let span = hi - lo;
    let per_axis = ((span / range).floor() as i64).clamp(1, 1 << 20);
    let cell_of = |i: usize| -> Vec<i64> {
        (0..r)
            .map(|k| (((points[(i, k)] - lo) / span * per_axis as f64) as i64).min(per_axis - 1))
            .collect()
    };
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for i in 0..n {
        grid.entry(cell_of(i)).or_default().push(i);
    }
    let offsets: Vec<Vec<i64>> = (0..3_i64.pow(r as u32))
        .map(|mut code| {
            (0..r)
                .map(|_| {
                    let o = code % 3 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let range2 = range * range;
    let mut pairs = Vec::new();
    let mut neighbor_cell = vec![0_i64; r];
    for i in 0..n {
        let cell = cell_of(i);
        for off in &offsets {
            for k in 0..r {
                neighbor_cell[k] = cell[k] + off[k];
            }
            if let Some(members) = grid.get(&neighbor_cell) {
                for &j in members {
                    if j > i && squared_distance(points, i, j) < range2 {
                        pairs.push((i, j));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Known pairs are those closer than the radio range plus every anchor-anchor
/// pair. Non-anchor pairs carry multiplicative noise `d (1 + sigma eps)`.
pub fn build_partial_edm(inst: &Instance) -> PartialEdm {
    let first_anchor = inst.n - inst.m;
    let mut pairs = pairs_within_range(&inst.points, inst.radio_range);
    for i in first_anchor..inst.n {
        for j in i + 1..inst.n {
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
    rng.set_stream(NOISE_STREAM);
    let sigma = inst.noise_factor;
    let values = pairs.into_iter().map(|(i, j)| {
        let d2 = squared_distance(&inst.points, i, j);
        let both_anchors = i >= first_anchor && j >= first_anchor;
        if sigma > 0.0 && !both_anchors {
            let eps: f64 = rng.sample(StandardNormal);
            let d = d2.sqrt() * (1.0 + sigma * eps);
            (i, j, d * d)
        } else {
            (i, j, d2)
        }
    });
    PartialEdm::from_pairs(inst.n, inst.m, values.collect::<Vec<_>>())
        .expect("generated pairs are valid")
}

/// For every node `i`, the nodes within half the radio range of `i`.
///
/// Members are added in order of distance from the center and kept only if
/// every pair with the members kept so far is known, so each seed is a clique
/// of the measurement graph even when noise breaks the triangle inequality.
pub fn half_range_cliques(pedm: &PartialEdm, radio_range: f64) -> Vec<CliqueSeed> {
    let half2 = (radio_range / 2.0).powi(2);
    (0..pedm.n())
        .map(|center| {
            let mut close: Vec<(usize, f64)> = pedm
                .neighbors(center)
                .iter()
                .copied()
                .filter(|&(_, d2)| d2 <= half2)
                .collect();
            close.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let mut members = vec![center];
            for (j, _) in close {
                if members.iter().all(|&k| pedm.is_known(j, k)) {
                    members.push(j);
                }
            }
            members.sort_unstable();
            CliqueSeed { center, members }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_in_box() {
        let a = generate_instance(5, 2, 2, 0.5, 0.0, 42).unwrap();
        let b = generate_instance(5, 2, 2, 0.5, 0.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.points.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(generate_instance(2, 2, 2, 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn coordinate_mean_is_one_half() {
        let inst = generate_instance(100_000, 0, 1, 0.1, 0.0, 7).unwrap();
        let mean = inst.points.mean();
        assert!((0.49..=0.51).contains(&mean), "mean {mean}");
    }

    #[test]
    fn range_threshold_and_anchor_block() {
        let points = DMatrix::from_row_slice(4, 1, &[0.0, 0.31, 0.9, 0.0]);
        let inst = Instance {
            n: 4,
            m: 2,
            r: 1,
            points,
            radio_range: 0.3,
            noise_factor: 0.0,
            seed: 0,
        };
        let p = build_partial_edm(&inst);
        assert!(!p.is_known(0, 1));
        assert!(p.is_known(0, 3));
        // anchors 2 and 3 are 0.9 apart but always known
        assert_eq!(p.get(2, 3), Some(0.81));
    }

    #[test]
    fn grid_matches_brute_force() {
        let inst = generate_instance(400, 3, 3, 0.15, 0.0, 3).unwrap();
        let fast = pairs_within_range(&inst.points, 0.15);
        let mut slow = Vec::new();
        for i in 0..400 {
            for j in i + 1..400 {
                if squared_distance(&inst.points, i, j) < 0.15 * 0.15 {
                    slow.push((i, j));
                }
            }
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn noise_relative_error_is_half_normal() {
        let sigma = 1e-2;
        let inst = generate_instance(2000, 0, 2, 0.05, sigma, 11).unwrap();
        let p = build_partial_edm(&inst);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, j, d2) in p.pairs().take(10_000) {
            let truth = squared_distance(&inst.points, i, j).sqrt();
            sum += (d2.sqrt() - truth).abs() / truth;
            count += 1;
        }
        assert!(count >= 5_000);
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        let mean = sum / count as f64;
        assert!((mean - expected).abs() <= 0.2 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn anchor_pairs_are_noise_free() {
        let inst = generate_instance(50, 5, 2, 0.2, 0.1, 5).unwrap();
        let p = build_partial_edm(&inst);
        for i in 45..50 {
            for j in i + 1..50 {
                assert_eq!(p.get(i, j), Some(squared_distance(&inst.points, i, j)));
            }
        }
    }

    #[test]
    fn half_range_seeds() {
        let r = 1.0;
        // isolated node
        let lone = PartialEdm::from_pairs(2, 0, []).unwrap();
        assert_eq!(half_range_cliques(&lone, r)[0].members, vec![0]);
        // collinear at spacing R/4
        let points = DMatrix::from_row_slice(3, 1, &[0.0, 0.25, 0.5]);
        let inst = Instance {
            n: 3,
            m: 0,
            r: 1,
            points,
            radio_range: r,
            noise_factor: 0.0,
            seed: 0,
        };
        let p = build_partial_edm(&inst);
        let seeds = half_range_cliques(&p, r);
        assert_eq!(seeds[1].members, vec![0, 1, 2]);
    }

    #[test]
    fn half_range_seeds_are_cliques_under_noise() {
        let inst = generate_instance(500, 4, 2, 0.12, 0.05, 9).unwrap();
        let p = build_partial_edm(&inst);
        for seed in half_range_cliques(&p, inst.radio_range) {
            assert!(seed.members.contains(&seed.center));
            assert!(p.is_clique(&seed.members));
        }
    }
}

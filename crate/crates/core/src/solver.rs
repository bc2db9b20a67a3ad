//! End-to-end solve: seeds, growth, reduction, recovery and alignment.

use std::time::Instant;

use crate::error::{Result, SnlError};
use crate::instance::{half_range_cliques, Instance, Problem};
use crate::recovery::align_to_anchors;
use crate::reducer::{final_clique, grow_cliques, init_family, Reducer, StepLevel};
use crate::tolerance::Tolerances;

pub use crate::recovery::SolveReport;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub level: StepLevel,
    /// Cap for the initial clique growth; `None` means `3 (r + 1)`.
    pub max_clique_size: Option<usize>,
    pub tol: Tolerances,
}

impl SolveOptions {
    pub fn new(level: StepLevel) -> Self {
        Self {
            level,
            max_clique_size: None,
            tol: Tolerances::noiseless(),
        }
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_clique_size_for(&self, r: usize) -> usize {
        self.max_clique_size.unwrap_or(3 * (r + 1))
    }
}

/// Solve without a trace.
pub fn solve(problem: &Problem, opts: &SolveOptions) -> Result<SolveReport> {
    solve_traced(problem, opts, |_| {})
}

/// Solve, sending one line per successful reduction step to `trace`.
pub fn solve_traced(problem: &Problem, opts: &SolveOptions, trace: impl FnMut(&str)) -> Result<SolveReport> {
    let r = problem.r;
    let max_size = opts.max_clique_size_for(r);
    if max_size <= r + 1 {
        return Err(SnlError::InvalidConfig(format!(
            "max clique size must exceed r + 1 = {}, got {max_size}",
            r + 1
        )));
    }
    let mut tol = opts.tol;
    if !tol.radio_range.is_finite() {
        tol.radio_range = problem.radio_range;
    }
    tol.validate()?;
    let pedm = &problem.pedm;

    let start = Instant::now();
    let seeds = half_range_cliques(pedm, problem.radio_range);
    let mut family = init_family(pedm, &seeds, r);
    grow_cliques(&mut family, pedm, max_size);
    let (mut family, counters) = Reducer::new(family, pedm, tol, opts.level).with_trace(trace).run();

    let mut report = SolveReport {
        counters,
        active_cliques: family.active_count(),
        ..SolveReport::default()
    };
    let Some(id) = final_clique(&family, pedm) else {
        report.cpu_seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    };
    report.final_clique_size = family.clique(id).unwrap().len();
    let Ok((comp, z_resid)) = family.completion(id, pedm, &tol) else {
        report.cpu_seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    };
    report.z_residual = z_resid;
    let anchor_nodes: Vec<usize> = pedm.anchor_indices().collect();
    let comp = if anchor_nodes.is_empty() {
        comp
    } else {
        match align_to_anchors(&comp, &problem.anchors, &anchor_nodes) {
            Ok(al) => {
                report.anchor_residual = al.residual;
                report.ambiguous_alignment = al.ambiguous;
                al.completion
            }
            Err(SnlError::DegenerateAnchors { .. }) => {
                report.ambiguous_alignment = true;
                report.cpu_seconds = start.elapsed().as_secs_f64();
                return Ok(report);
            }
            Err(e) => return Err(e),
        }
    };
    for (row, &v) in comp.nodes.iter().enumerate() {
        if !pedm.is_anchor(v) {
            report.positioned.insert(v, comp.coords.row(row).iter().copied().collect());
        }
    }
    report.success = !report.positioned.is_empty();
    report.cpu_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Build the partial data for `inst`, solve it and score against the truth.
/// The returned time covers the solve only, not the data generation.
pub fn solve_instance(inst: &Instance, opts: &SolveOptions) -> Result<SolveReport> {
    let problem = inst.problem();
    let mut report = solve(&problem, opts)?;
    report.score(&inst.points);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;

    #[test]
    fn small_dense_instance_is_solved_exactly() {
        let inst = generate_instance(60, 4, 2, 0.5, 0.0, 1).unwrap();
        let report = solve_instance(&inst, &SolveOptions::new(StepLevel::L2)).unwrap();
        assert!(report.success);
        assert_eq!(report.positioned.len(), 56);
        assert!(report.rmsd.unwrap() < 1e-9, "{:?}", report.rmsd);
    }

    #[test]
    fn clique_size_cap_is_validated() {
        let inst = generate_instance(10, 3, 2, 0.5, 0.0, 1).unwrap();
        let mut opts = SolveOptions::new(StepLevel::L1);
        opts.max_clique_size = Some(3);
        assert!(solve(&inst.problem(), &opts).is_err());
    }
}

//! Batches of random trials and their CSV summaries.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnlError};
use crate::instance::generate_instance;
use crate::recovery::SolveReport;
use crate::reducer::StepLevel;
use crate::solver::{solve_traced, SolveOptions};
use crate::tolerance::Tolerances;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Number of sensors; the instance has `sensors + anchors` nodes.
    pub sensors: usize,
    pub anchors: usize,
    pub r: usize,
    pub radio_range: f64,
    pub sigma: f64,
    pub trials: usize,
    pub level: StepLevel,
    /// Trial `t` uses seed `seed + t`.
    pub seed: u64,
    pub max_clique_size: Option<usize>,
    pub tol: Tolerances,
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(sensors: usize, anchors: usize, r: usize, radio_range: f64, level: StepLevel) -> Self {
        Self {
            sensors,
            anchors,
            r,
            radio_range,
            sigma: 0.0,
            trials: 10,
            level,
            seed: 0,
            max_clique_size: None,
            tol: Tolerances::noiseless(),
            output_path: None,
        }
    }

    /// Set the noise factor and matching default tolerances.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self.tol = Tolerances {
            lower_bounds: self.tol.lower_bounds,
            ..Tolerances::for_noise(sigma)
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SnlError::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sensors == 0 {
            return bad("need at least one sensor".into());
        }
        if self.r == 0 {
            return bad("dimension must be positive".into());
        }
        if self.radio_range.is_nan() || self.radio_range <= 0.0 {
            return bad(format!("radio range must be positive, got {}", self.radio_range));
        }
        if self.sigma.is_nan() || self.sigma < 0.0 {
            return bad(format!("noise factor must be >= 0, got {}", self.sigma));
        }
        if let Some(k) = self.max_clique_size {
            if k <= self.r + 1 {
                return bad(format!("max clique size must exceed r + 1, got {k}"));
            }
        }
        self.tol.validate()
    }

    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            level: self.level,
            max_clique_size: self.max_clique_size,
            tol: self.tol.with_radio_range(self.radio_range),
        }
    }

    pub fn trial_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add(t as u64)
    }
}

/// One trial's outcome.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    pub avg_degree: f64,
    pub report: SolveReport,
    /// True coordinates of all nodes.
    pub truth: DMatrix<f64>,
}

/// Summary of a batch of trials. Error columns average over successful
/// trials only and are empty when none succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub sensors: usize,
    pub r: usize,
    pub anchors: usize,
    pub radio_range: f64,
    pub sigma: f64,
    pub level: u8,
    pub seed: u64,
    pub trials: usize,
    pub successful: usize,
    pub avg_degree: f64,
    pub avg_positioned: f64,
    pub avg_cpu_seconds: f64,
    pub avg_max_error: Option<f64>,
    pub avg_rmsd: Option<f64>,
}

pub fn run_trial(cfg: &ExperimentConfig, t: usize, trace: Option<&mut dyn FnMut(&str)>) -> Result<TrialResult> {
    let seed = cfg.trial_seed(t);
    let inst = generate_instance(cfg.sensors + cfg.anchors, cfg.anchors, cfg.r, cfg.radio_range, cfg.sigma, seed)?;
    let problem = inst.problem();
    let mut report = match trace {
        Some(sink) => solve_traced(&problem, &cfg.options(), sink)?,
        None => solve_traced(&problem, &cfg.options(), |_| {})?,
    };
    report.score(&inst.points);
    Ok(TrialResult {
        index: t,
        seed,
        avg_degree: problem.pedm.average_degree(),
        report,
        truth: inst.points,
    })
}

/// Run every trial, in parallel unless a trace sink is given. Results are
/// ordered by trial index.
pub fn run_trials(cfg: &ExperimentConfig, trace: Option<&mut dyn FnMut(&str)>) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    match trace {
        Some(sink) => (0..cfg.trials).map(|t| run_trial(cfg, t, Some(&mut *sink))).collect(),
        None => (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, t, None))
            .collect(),
    }
}

pub fn summarize(cfg: &ExperimentConfig, results: &[TrialResult]) -> TableRow {
    let count = results.len().max(1) as f64;
    let ok: Vec<&TrialResult> = results.iter().filter(|t| t.report.success).collect();
    let mean_ok = |f: fn(&SolveReport) -> Option<f64>| {
        let vals: Vec<f64> = ok.iter().filter_map(|t| f(&t.report)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    TableRow {
        sensors: cfg.sensors,
        r: cfg.r,
        anchors: cfg.anchors,
        radio_range: cfg.radio_range,
        sigma: cfg.sigma,
        level: cfg.level.number(),
        seed: cfg.seed,
        trials: results.len(),
        successful: ok.len(),
        avg_degree: results.iter().map(|t| t.avg_degree).sum::<f64>() / count,
        avg_positioned: results.iter().map(|t| t.report.positioned.len() as f64).sum::<f64>() / count,
        avg_cpu_seconds: results.iter().map(|t| t.report.cpu_seconds).sum::<f64>() / count,
        avg_max_error: mean_ok(|r| r.max_error),
        avg_rmsd: mean_ok(|r| r.rmsd),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TableRow> {
    let results = run_trials(cfg, None)?;
    let row = summarize(cfg, &results);
    if let Some(path) = &cfg.output_path {
        emit_csv(std::slice::from_ref(&row), path)?;
    }
    Ok(row)
}

pub fn write_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names of `TableRow`, in order.
pub const TABLE_HEADER: [&str; 14] = [
    "sensors",
    "r",
    "anchors",
    "radio_range",
    "sigma",
    "level",
    "seed",
    "trials",
    "successful",
    "avg_degree",
    "avg_positioned",
    "avg_cpu_seconds",
    "avg_max_error",
    "avg_rmsd",
];

pub fn emit_csv(rows: &[TableRow], path: &Path) -> Result<()> {
    write_csv(rows, BufWriter::new(File::create(path)?))
}

pub fn read_csv(path: &Path) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(SnlError::from)).collect()
}

/// One line per positioned sensor: true coordinates then estimated ones.
pub fn write_scatter<W: Write>(report: &SolveReport, truth: &DMatrix<f64>, mut out: W) -> io::Result<()> {
    for (&node, est) in &report.positioned {
        let mut fields: Vec<String> = truth.row(node).iter().map(|x| format!("{x:.17e}")).collect();
        fields.extend(est.iter().map(|x| format!("{x:.17e}")));
        writeln!(out, "{}", fields.join(" "))?;
    }
    out.flush()
}

pub fn emit_scatter(report: &SolveReport, truth: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_scatter(report, truth, BufWriter::new(File::create(path)?))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim(), TABLE_HEADER.join(","));
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn complete_graph_trial_is_exact_and_reproducible() {
        let mut cfg = ExperimentConfig::new(20, 3, 2, 2.0, StepLevel::L1);
        cfg.trials = 1;
        cfg.seed = 5;
        let row = run_experiment(&cfg).unwrap();
        assert_eq!(row.successful, 1);
        assert_eq!(row.avg_positioned, 20.0);
        assert!(row.avg_rmsd.unwrap() <= 1e-9);
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(
            TableRow { avg_cpu_seconds: 0.0, ..row.clone() },
            TableRow { avg_cpu_seconds: 0.0, ..again }
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_csv(std::slice::from_ref(&row), &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), vec![row]);
    }

    #[test]
    fn scatter_has_one_line_per_sensor() {
        let mut cfg = ExperimentConfig::new(30, 3, 2, 2.0, StepLevel::L1);
        cfg.trials = 1;
        let t = run_trials(&cfg, None).unwrap().remove(0);
        let mut buf = Vec::new();
        write_scatter(&t.report, &t.truth, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), t.report.positioned.len());
        assert!(text.lines().all(|l| l.split_whitespace().count() == 4));
    }

    #[test]
    fn invalid_config_is_rejected_before_running() {
        let mut cfg = ExperimentConfig::new(30, 3, 2, 0.2, StepLevel::L1);
        cfg.trials = 0;
        assert!(run_experiment(&cfg).is_err());
    }
}

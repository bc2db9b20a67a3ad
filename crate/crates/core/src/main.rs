use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use facial_snl::cli::{emit_scatter, run_trials, summarize, write_csv, ExperimentConfig};
use facial_snl::instance::io::{read_problem, write_solution};
use facial_snl::reducer::StepLevel;
use facial_snl::solver::{solve_traced, SolveOptions};
use facial_snl::tolerance::{RankTolerance, Tolerances};
use facial_snl::SolveReport;

/// Localize sensors from partial distance data by merging clique faces.
///
/// Without --problem, runs --trials random instances and prints one CSV row.
#[derive(Parser, Debug)]
#[command(name = "facial-snl", version)]
struct Args {
    /// Number of sensors (anchors come on top).
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    anchors: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.07)]
    radio_range: f64,
    /// Multiplicative noise factor.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// 1: rigid union, 2: + rigid absorption, 3: + non-rigid union,
    /// 4: + non-rigid absorption.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=4))]
    level: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on the initial clique growth (default 3(dim+1)).
    #[arg(long)]
    max_clique_size: Option<usize>,
    /// Relative eigenvalue cut for rank decisions.
    #[arg(long)]
    tol: Option<f64>,
    /// Absolute tolerance on squared distances when choosing between
    /// two completions.
    #[arg(long)]
    feas_tol: Option<f64>,
    /// Largest principal angle (radians) accepted between shared blocks.
    #[arg(long)]
    range_angle: Option<f64>,
    /// Also require unmeasured pairs to be at least the radio range apart.
    #[arg(long)]
    lower_bounds: bool,
    /// CSV output (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solve this problem file instead of random instances.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Write positioned sensors (of the problem, or of the first trial).
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Write `x_true y_true x_est y_est` lines for the first trial.
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Print one line per reduction step to stderr.
    #[arg(long)]
    trace: bool,
}

fn tolerances(args: &Args, sigma: f64) -> facial_snl::Result<Tolerances> {
    let mut tol = Tolerances::for_noise(sigma);
    if let Some(cut) = args.tol {
        tol.rank = RankTolerance::new(cut)?;
    }
    if let Some(f) = args.feas_tol {
        tol.feas_tol = f;
    }
    if let Some(a) = args.range_angle {
        tol.range_angle = a;
    }
    tol.lower_bounds = args.lower_bounds;
    tol.validate()?;
    Ok(tol)
}

fn positions(report: &SolveReport) -> Vec<(usize, Vec<f64>)> {
    report.positioned.iter().map(|(&i, x)| (i, x.clone())).collect()
}

type Sink = Box<dyn FnMut(&str)>;

fn trace_sink(enabled: bool) -> Option<Sink> {
    enabled.then(|| Box::new(|line: &str| eprintln!("{line}")) as Sink)
}

fn solve_file(args: &Args, path: &Path) -> facial_snl::Result<()> {
    let problem = read_problem(path)?;
    let mut opts = SolveOptions::new(StepLevel::from_number(args.level)?)
        .with_tolerances(tolerances(args, problem.noise_factor)?.with_radio_range(problem.radio_range));
    opts.max_clique_size = args.max_clique_size;
    let report = match trace_sink(args.trace) {
        Some(mut sink) => solve_traced(&problem, &opts, &mut *sink)?,
        None => solve_traced(&problem, &opts, |_| {})?,
    };
    if let Some(sol) = &args.solution {
        write_solution(sol, &positions(&report))?;
    }
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "success={} positioned={} sensors={} cpu_seconds={:.3} anchor_residual={:.3e}",
        report.success,
        report.positioned.len(),
        problem.pedm.sensors(),
        report.cpu_seconds,
        report.anchor_residual
    )?;
    Ok(())
}

fn run(args: Args) -> facial_snl::Result<()> {
    if let Some(path) = &args.problem {
        return solve_file(&args, path);
    }
    let cfg = ExperimentConfig {
        sensors: args.n,
        anchors: args.anchors,
        r: args.dim,
        radio_range: args.radio_range,
        sigma: args.noise,
        trials: args.trials,
        level: StepLevel::from_number(args.level)?,
        seed: args.seed,
        max_clique_size: args.max_clique_size,
        tol: tolerances(&args, args.noise)?,
        output_path: args.out.clone(),
    };
    let results = match trace_sink(args.trace) {
        Some(mut sink) => run_trials(&cfg, Some(&mut *sink))?,
        None => run_trials(&cfg, None)?,
    };
    let row = summarize(&cfg, &results);
    match &args.out {
        Some(path) => facial_snl::cli::emit_csv(std::slice::from_ref(&row), path)?,
        None => write_csv(std::slice::from_ref(&row), io::stdout().lock())?,
    }
    if let Some(first) = results.first() {
        if let Some(sol) = &args.solution {
            write_solution(sol, &positions(&first.report))?;
        }
        if let Some(path) = &args.scatter {
            emit_scatter(&first.report, &first.truth, path)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

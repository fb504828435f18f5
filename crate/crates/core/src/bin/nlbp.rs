use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nlbp::baselines::{l0_oracle, support_of, OracleBudget};
use nlbp::formats::{read_json, read_lifted, write_json, ProblemFile, ReportFile, SolutionFile};
use nlbp::harness::{emit_boxplot_data, run_experiment, write_results_csv, ExperimentSpec};
use nlbp::lifting::{build_lifted_problem_with, LiftOptions};
use nlbp::recovery::{coherence_certificate, extract_rank1, RecoveryThresholds};
use nlbp::sdp_admm::{solve_nlbp, SolveStatus};
use nlbp::{Error, SolverConfig};

#[derive(Parser)]
#[command(name = "nlbp", version, about = "Sparse solutions of polynomial equation systems by SDP lifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift a problem file to a lifted-problem file.
    Lift {
        problem: PathBuf,
        /// Even lifting order (default: smallest even order covering the input).
        #[arg(long)]
        q: Option<u32>,
        /// Keep duplicated dependency constraints.
        #[arg(long)]
        no_dedup: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve the relaxation of a lifted problem.
    Solve {
        lifted: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 20_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-7)]
        eps_abs: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps_rel: f64,
        #[arg(long)]
        adaptive_rho: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Extract the rank-1 solution from a solver report.
    Recover {
        report: PathBuf,
        lifted: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the mutual-coherence certificate of a solution.
    Certify {
        lifted: PathBuf,
        report: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        zero_tol: f64,
    },
    /// Run a Monte-Carlo ensemble and write the results CSV.
    Bench {
        experiment: Experiment,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write box-plot data of the squared residuals.
        #[arg(long)]
        boxplot: Option<PathBuf>,
        /// Record wall-clock times (makes the output non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Brute-force sparsest solution of a small problem.
    Oracle {
        problem: PathBuf,
        #[arg(long)]
        max_support: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Table1,
    Dense,
}

#[derive(Serialize)]
struct OracleOutput {
    x: Vec<f64>,
    support: Vec<usize>,
}

/// Exit codes: 1 for bad input, 2 for solver failures.
fn code_of(e: &Error) -> u8 {
    match e {
        Error::InconsistentConstraints { .. }
        | Error::Eigen { .. }
        | Error::DegenerateTopEigenvalue(_)
        | Error::VanishingConstantComponent
        | Error::NotFound => 2,
        _ => 1,
    }
}

fn create(path: &Path) -> nlbp::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cmd: Command) -> nlbp::Result<u8> {
    match cmd {
        Command::Lift { problem, q, no_dedup, output } => {
            let p: ProblemFile = read_json(&problem)?;
            p.validate()?;
            let order = q.unwrap_or_else(|| p.order());
            let lifted = build_lifted_problem_with(&p.polynomials, &p.y, order, LiftOptions { dedup: !no_dedup })?;
            write_json(&output, &lifted)?;
            eprintln!("basis {} constraints {}", lifted.dim(), lifted.num_constraints());
            Ok(0)
        }
        Command::Solve { lifted, lambda, rho, max_iters, eps_abs, eps_rel, adaptive_rho, output } => {
            let problem = read_lifted(&lifted)?;
            let cfg = SolverConfig { lambda, rho, max_iters, eps_abs, eps_rel, adaptive_rho, ..Default::default() };
            let report = solve_nlbp(&problem, &cfg)?;
            write_json(&output, &ReportFile::from_report(&report, lambda))?;
            eprintln!("{:?} after {} iterations", report.status, report.iterations);
            Ok(if report.status == SolveStatus::Converged { 0 } else { 2 })
        }
        Command::Recover { report, lifted, output } => {
            let r: ReportFile = read_json(&report)?;
            let problem = read_lifted(&lifted)?;
            let x = r.matrix()?;
            let sol = extract_rank1(&x, problem.basis(), &RecoveryThresholds::default())?;
            let valid = sol.valid;
            write_json(&output, &SolutionFile::from(sol))?;
            eprintln!("valid {valid}");
            Ok(0)
        }
        Command::Certify { lifted, report, zero_tol } => {
            let problem = read_lifted(&lifted)?;
            let r: ReportFile = read_json(&report)?;
            let cert = coherence_certificate(&problem, &r.matrix()?, zero_tol)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
            Ok(0)
        }
        Command::Bench { experiment, trials, seed, output, boxplot, timings } => {
            let spec = match experiment {
                Experiment::Table1 => ExperimentSpec::table1(trials, seed),
                Experiment::Dense => ExperimentSpec::dense(trials, seed),
            };
            let result = run_experiment(&spec)?;
            let mut out = create(&output)?;
            write_results_csv(&result, &mut out, timings)?;
            out.flush()?;
            if let Some(path) = boxplot {
                let mut out = create(&path)?;
                emit_boxplot_data(&result.records, &mut out)?;
                out.flush()?;
            }
            for s in &result.summary {
                eprintln!("{}: {}/{} successes", s.method.label(), s.successes, s.trials);
            }
            Ok(0)
        }
        Command::Oracle { problem, max_support, seed } => {
            let p: ProblemFile = read_json(&problem)?;
            p.validate()?;
            let budget = OracleBudget { seed, ..Default::default() };
            let x = l0_oracle(&p.polynomials, &p.y, max_support, &budget)?;
            let support = support_of(&x, 1e-8);
            println!("{}", serde_json::to_string_pretty(&OracleOutput { x, support })?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code_of(&e))
        }
    }
}

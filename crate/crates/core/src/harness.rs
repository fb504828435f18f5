//! Monte-Carlo experiment runner and results/box-plot CSV emission.
//!
//! Trial `t` of an experiment draws everything from `ChaCha8Rng` seeded with
//! `spec.seed` on stream `t`, so trials are independent of scheduling and of
//! each other.

use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    residual_sq, solve_linear, solve_nlbp_estimate, solve_qbp, success_criterion, support_of, BaselineResult, Method,
    PipelineConfig,
};
use crate::error::{Error, Result};
use crate::monomials::{random_polynomial_with, Polynomial};
use crate::sdp_admm::{SolveStatus, SolverConfig};

pub const CSV_VERSION_LINE: &str = "# nlbp-results v1";

/// Relative threshold used to read a support off an estimate.
pub const SUPPORT_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// `k` entries equal to one at uniformly drawn positions.
    Sparse(usize),
    /// Every entry `N(0, planted_std^2)`.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub n: usize,
    pub num_equations: usize,
    pub q: u32,
    pub sparsity: Sparsity,
    pub planted_std: f64,
    pub coeff_std: f64,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub lambda: f64,
    /// Solver settings for the lifted methods; `lambda` above overrides
    /// `solver.lambda`.
    pub solver: SolverConfig<f64>,
    pub polish: bool,
    pub certify: bool,
}

impl ExperimentSpec {
    /// Sparse ensemble: n = 5, N = 50, two unit entries.
    pub fn table1(trials: usize, seed: u64) -> Self {
        Self {
            name: "table1".into(),
            n: 5,
            num_equations: 50,
            q: 4,
            sparsity: Sparsity::Sparse(2),
            planted_std: 1.0,
            coeff_std: 1.0,
            trials,
            seed,
            methods: vec![Method::Nlbp, Method::Qbp, Method::Linear],
            lambda: 0.0,
            solver: SolverConfig::default(),
            polish: true,
            certify: true,
        }
    }

    /// Dense ensemble: n = 5, N = 60, entries with std 10.
    pub fn dense(trials: usize, seed: u64) -> Self {
        Self {
            name: "dense".into(),
            n: 5,
            num_equations: 60,
            q: 4,
            sparsity: Sparsity::Dense,
            planted_std: 10.0,
            coeff_std: 1.0,
            trials,
            seed,
            methods: vec![Method::Nlbp, Method::Qbp, Method::Linear],
            lambda: 0.0,
            // entries of X reach ~1e7, so a small penalty keeps the trace term
            // effective
            solver: SolverConfig {
                rho: 1e-3,
                over_relaxation: 1.7,
                max_iters: 100_000,
                eps_abs: 1e-10,
                eps_rel: 1e-8,
                ..SolverConfig::default()
            },
            polish: true,
            certify: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("experiment {}: {m}", self.name)));
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if self.q == 0 || self.q % 2 != 0 {
            return Err(Error::OddOrder(self.q));
        }
        if self.n == 0 || self.num_equations == 0 {
            return bad("n and N must be positive");
        }
        if let Sparsity::Sparse(k) = self.sparsity {
            if k > self.n {
                return bad("sparsity exceeds n");
            }
        }
        if !(self.planted_std > 0.0 && self.coeff_std > 0.0) {
            return bad("standard deviations must be positive");
        }
        if self.methods.is_empty() {
            return bad("no methods requested");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        Ok(())
    }

    fn pipeline(&self) -> PipelineConfig<f64> {
        PipelineConfig {
            solver: SolverConfig { lambda: self.lambda, ..self.solver },
            polish: self.polish,
            certify: self.certify,
            ..PipelineConfig::default()
        }
    }
}

/// Ground-truth instance of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedInstance {
    pub polys: Vec<Polynomial<f64>>,
    pub x_true: Vec<f64>,
    pub y: Vec<f64>,
}

/// Random generator of trial `trial`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Draws the polynomials first, then the planted vector.
pub fn sample_instance(spec: &ExperimentSpec, trial: usize) -> Result<PlantedInstance> {
    let mut rng = trial_rng(spec.seed, trial);
    sample_instance_with(spec, &mut rng)
}

fn sample_instance_with<R: Rng>(spec: &ExperimentSpec, rng: &mut R) -> Result<PlantedInstance> {
    let polys = (0..spec.num_equations)
        .map(|_| random_polynomial_with(rng, spec.n, spec.q, spec.coeff_std))
        .collect::<Result<Vec<_>>>()?;
    let x_true = match spec.sparsity {
        Sparsity::Sparse(k) => {
            let mut x = vec![0.0; spec.n];
            for j in index::sample(rng, spec.n, k) {
                x[j] = 1.0;
            }
            x
        }
        Sparsity::Dense => {
            let normal = Normal::new(0.0, spec.planted_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
            (0..spec.n).map(|_| normal.sample(rng)).collect()
        }
    };
    let y = polys.iter().map(|p| p.eval_unchecked(&x_true)).collect();
    Ok(PlantedInstance { polys, x_true, y })
}

/// One method on one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub success: bool,
    pub residual_sq: f64,
    pub rank1_ratio: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time_ms: f64,
    pub status: Option<SolveStatus>,
    /// Rank-1 extraction passed its checks.
    pub valid: bool,
    pub certificate_holds: Option<bool>,
    /// Estimated support equals the planted one.
    pub support_recovered: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub outcomes: Vec<MethodOutcome>,
}

fn run_method(method: Method, spec: &ExperimentSpec, inst: &PlantedInstance) -> MethodOutcome {
    let cfg = spec.pipeline();
    let start = Instant::now();
    let result: Result<BaselineResult<f64>> = match method {
        Method::Nlbp => solve_nlbp_estimate(&inst.polys, &inst.y, spec.q, &cfg),
        Method::Qbp => solve_qbp(&inst.polys, &inst.y, &cfg),
        Method::Linear => solve_linear(&inst.polys, &inst.y, spec.lambda),
    };
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(r) => {
            let lifted = r.lifted.as_ref();
            MethodOutcome {
                method,
                success: success_criterion(&r.x_hat, &inst.x_true, &inst.polys, &inst.y),
                residual_sq: r.residual_sq,
                rank1_ratio: lifted.map(|d| d.rank1_ratio),
                iterations: lifted.map(|d| d.iterations),
                wall_time_ms,
                status: lifted.map(|d| d.status),
                valid: lifted.is_some_and(|d| d.valid),
                certificate_holds: lifted.and_then(|d| d.certificate.map(|c| c.holds)),
                support_recovered: support_of(&r.x_hat, SUPPORT_TOL) == support_of(&inst.x_true, SUPPORT_TOL),
                error: None,
            }
        }
        Err(e) => MethodOutcome {
            method,
            success: false,
            residual_sq: residual_sq(&inst.polys, &inst.y, &vec![0.0; spec.n]),
            rank1_ratio: None,
            iterations: None,
            wall_time_ms,
            status: None,
            valid: false,
            certificate_holds: None,
            support_recovered: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs one trial of `spec`.
pub fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<TrialRecord> {
    let inst = sample_instance(spec, trial)?;
    let outcomes = spec.methods.iter().map(|&m| run_method(m, spec, &inst)).collect();
    Ok(TrialRecord { trial, outcomes })
}

/// Five-number summary with Tukey outliers (beyond 1.5 IQR from the box).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted
/// data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `None` if no value is finite.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Some(BoxStats {
        min: v[0],
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        max: v[v.len() - 1],
        outliers: v.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub support_rate: f64,
    pub residual: Option<BoxStats>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<MethodSummary>,
}

impl ExperimentResult {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn outcomes(&self, method: Method) -> impl Iterator<Item = &MethodOutcome> {
        self.records.iter().flat_map(move |r| r.outcomes.iter().filter(move |o| o.method == method))
    }
}

pub fn summarize(methods: &[Method], records: &[TrialRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let outs: Vec<&MethodOutcome> =
                records.iter().flat_map(|r| r.outcomes.iter().filter(|o| o.method == m)).collect();
            let trials = outs.len();
            let successes = outs.iter().filter(|o| o.success).count();
            let supports = outs.iter().filter(|o| o.support_recovered).count();
            let rate = |k: usize| if trials == 0 { 0.0 } else { k as f64 / trials as f64 };
            let residuals: Vec<f64> = outs.iter().map(|o| o.residual_sq).collect();
            MethodSummary {
                method: m,
                trials,
                successes,
                success_rate: rate(successes),
                support_rate: rate(supports),
                residual: box_stats(&residuals),
            }
        })
        .collect()
}

/// Runs every trial on the rayon pool and returns records in trial order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let records = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&spec.methods, &records);
    Ok(ExperimentResult { spec: spec.clone(), records, summary })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e)
}

/// Results CSV: version line, one row per (trial, method), then a summary
/// block. Wall times are written only with `timings`, keeping default output
/// byte-reproducible.
pub fn write_results_csv<W: Write>(result: &ExperimentResult, mut out: W, timings: bool) -> Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
        w.write_record(["trial", "method", "success", "residual_sq", "rank1_ratio", "iterations", "wall_time_ms"])
            .map_err(csv_err)?;
        for r in &result.records {
            for o in &r.outcomes {
                w.write_record([
                    r.trial.to_string(),
                    o.method.label().to_string(),
                    o.success.to_string(),
                    fmt_f64(o.residual_sq),
                    fmt_opt(o.rank1_ratio.map(fmt_f64)),
                    fmt_opt(o.iterations),
                    if timings { format!("{:.3}", o.wall_time_ms) } else { String::new() },
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    writeln!(out)?;
    writeln!(out, "# summary")?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
    w.write_record([
        "method",
        "lambda",
        "trials",
        "successes",
        "success_rate",
        "support_rate",
        "residual_min",
        "residual_q1",
        "residual_median",
        "residual_q3",
        "residual_max",
    ])
    .map_err(csv_err)?;
    for s in &result.summary {
        let b = s.residual.as_ref();
        let stat = |f: fn(&BoxStats) -> f64| b.map(|b| fmt_f64(f(b))).unwrap_or_default();
        w.write_record([
            s.method.label().to_string(),
            fmt_f64(result.spec.lambda),
            s.trials.to_string(),
            s.successes.to_string(),
            s.success_rate.to_string(),
            s.support_rate.to_string(),
            stat(|b| b.min),
            stat(|b| b.q1),
            stat(|b| b.median),
            stat(|b| b.q3),
            stat(|b| b.max),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-method box-plot statistics of `residual_sq`: one `stat` row per
/// summary value, one `outlier` row per outlier and one `raw` row per trial,
/// each with its `log10`.
pub fn emit_boxplot_data<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records".into()));
    }
    let mut methods: Vec<Method> = Vec::new();
    for o in records.iter().flat_map(|r| &r.outcomes) {
        if !methods.contains(&o.method) {
            methods.push(o.method);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "kind", "name", "residual_sq", "log10_residual_sq"]).map_err(csv_err)?;
    let row = |w: &mut csv::Writer<W>, m: Method, kind: &str, name: String, v: f64| {
        w.write_record([m.label().to_string(), kind.to_string(), name, fmt_f64(v), fmt_f64(v.log10())])
            .map_err(csv_err)
    };
    for s in summarize(&methods, records) {
        if let Some(b) = &s.residual {
            for (name, v) in [("min", b.min), ("q1", b.q1), ("median", b.median), ("q3", b.q3), ("max", b.max)] {
                row(&mut w, s.method, "stat", name.to_string(), v)?;
            }
            for v in &b.outliers {
                row(&mut w, s.method, "outlier", String::new(), *v)?;
            }
        }
        for r in records {
            for o in r.outcomes.iter().filter(|o| o.method == s.method) {
                row(&mut w, s.method, "raw", r.trial.to_string(), o.residual_sq)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

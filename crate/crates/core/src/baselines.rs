//! End-to-end estimators (NLBP at any even order, QBP, linear least squares /
//! LASSO) and a brute-force sparse oracle used as ground truth on small
//! instances.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{build_lifted_problem_with, LiftOptions};
use crate::monomials::{MultiIndex, Polynomial};
use crate::recovery::{coherence_certificate, extract_rank1, CoherenceCertificate, RecoveryThresholds};
use crate::scalar::Scalar;
use crate::sdp_admm::{solve_nlbp, SolveStatus, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NLBP")]
    Nlbp,
    #[serde(rename = "QBP")]
    Qbp,
    #[serde(rename = "LASSO")]
    Linear,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Nlbp => "NLBP",
            Method::Qbp => "QBP",
            Method::Linear => "LASSO",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nlbp" => Ok(Method::Nlbp),
            "qbp" => Ok(Method::Qbp),
            "lasso" | "linear" => Ok(Method::Linear),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Settings shared by the lifted estimators.
#[derive(Clone, Debug)]
pub struct PipelineConfig<T: Scalar> {
    pub solver: SolverConfig<T>,
    pub thresholds: RecoveryThresholds,
    pub lift: LiftOptions,
    /// Refine a valid rank-1 estimate by Gauss-Newton on the method's own
    /// (truncated) equations.
    pub polish: bool,
    /// Compute the mutual-coherence certificate of the solution.
    pub certify: bool,
    /// Relative zero threshold for counting nonzeros of `X`.
    pub zero_tol: f64,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            thresholds: RecoveryThresholds::default(),
            lift: LiftOptions::default(),
            polish: true,
            certify: false,
            zero_tol: 1e-6,
        }
    }
}

/// Diagnostics of the lifted estimators; absent for the linear baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub rank1_ratio: f64,
    pub valid: bool,
    pub constraint_violation: f64,
    pub polished: bool,
    pub certificate: Option<CoherenceCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult<T: Scalar> {
    pub method: Method,
    pub lambda: f64,
    pub x_hat: Vec<T>,
    pub objective: T,
    /// `sum_i (y_i - f_i(x_hat))^2` against the untruncated equations.
    pub residual_sq: T,
    /// Set by [`BaselineResult::judge`] once the planted solution is known.
    pub success: Option<bool>,
    pub lifted: Option<LiftedDiagnostics>,
}

impl<T: Scalar> BaselineResult<T> {
    pub fn judge(&mut self, x_true: &[T], polys: &[Polynomial<T>], y: &[T]) -> bool {
        let ok = success_criterion(&self.x_hat, x_true, polys, y);
        self.success = Some(ok);
        ok
    }
}

/// `sum_i (y_i - f_i(x))^2`.
pub fn residual_sq<T: Scalar>(polys: &[Polynomial<T>], y: &[T], x: &[T]) -> T {
    polys
        .iter()
        .zip(y)
        .fold(T::zero(), |s, (p, yi)| {
            let r = p.eval_unchecked(x) - *yi;
            s + r * r
        })
}

fn check_system<T: Scalar>(polys: &[Polynomial<T>], y: &[T]) -> Result<usize> {
    let first = polys.first().ok_or_else(|| Error::InvalidInput("need at least one equation".into()))?;
    if polys.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: polys.len(), found: y.len() });
    }
    let n = first.num_vars();
    if let Some(p) = polys.iter().find(|p| p.num_vars() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: p.num_vars() });
    }
    Ok(n)
}

/// The frozen success rule: `||x_hat - x_true||_inf <= 1e-4 (1 + ||x_true||_inf)`
/// and `residual_sq <= 1e-8 (1 + ||y||^2)`.
pub fn success_criterion<T: Scalar>(x_hat: &[T], x_true: &[T], polys: &[Polynomial<T>], y: &[T]) -> bool {
    if x_hat.len() != x_true.len() {
        return false;
    }
    let x_inf = x_true.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let err = x_hat
        .iter()
        .zip(x_true)
        .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
    let y_sq = y.iter().fold(T::zero(), |s, v| s + *v * *v);
    let res = residual_sq(polys, y, x_hat);
    err <= T::lit(1e-4) * (T::one() + x_inf) && res <= T::lit(1e-8) * (T::one() + y_sq)
}

/// Lift at order `q` (truncating every equation to degree `q`), solve the
/// relaxation, extract a rank-1 estimate and optionally polish it.
pub fn solve_lifted<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    q: u32,
    config: &PipelineConfig<T>,
) -> Result<BaselineResult<T>> {
    let n = check_system(polys, y)?;
    let model: Vec<Polynomial<T>> = polys.iter().map(|p| p.truncate(q)).collect();
    let problem = build_lifted_problem_with(&model, y, q, config.lift)?;
    let report = solve_nlbp(&problem, &config.solver)?;
    let recovered = extract_rank1(&report.x, problem.basis(), &config.thresholds);
    let (mut x_hat, rank1_ratio, valid) = match recovered {
        Ok(r) => (r.x, r.rank1_ratio.as_f64(), r.valid),
        // X has no usable rank-1 factor; fall back to the origin
        Err(Error::DegenerateTopEigenvalue(_)) | Err(Error::VanishingConstantComponent) => {
            (vec![T::zero(); n], f64::INFINITY, false)
        }
        Err(e) => return Err(e),
    };
    let mut polished = false;
    if config.polish && valid && report.status != SolveStatus::Infeasible {
        let all: Vec<usize> = (0..n).collect();
        let before = residual_sq(&model, y, &x_hat);
        let (refined, after) = levenberg_marquardt(&model, y, &x_hat, &all, 50, T::zero());
        if after < before {
            x_hat = refined;
            polished = true;
        }
    }
    let certificate = if config.certify {
        Some(coherence_certificate(&problem, &report.x, T::lit(config.zero_tol))?)
    } else {
        None
    };
    Ok(BaselineResult {
        method: if q == 2 { Method::Qbp } else { Method::Nlbp },
        lambda: config.solver.lambda.as_f64(),
        residual_sq: residual_sq(polys, y, &x_hat),
        x_hat,
        objective: report.objective,
        success: None,
        lifted: Some(LiftedDiagnostics {
            status: report.status,
            iterations: report.iterations,
            rank1_ratio,
            valid,
            constraint_violation: report.constraint_violation.as_f64(),
            polished,
            certificate,
        }),
    })
}

/// NLBP at the even order `q` (4 in both reference experiments).
pub fn solve_nlbp_estimate<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    q: u32,
    config: &PipelineConfig<T>,
) -> Result<BaselineResult<T>> {
    let mut r = solve_lifted(polys, y, q, config)?;
    r.method = Method::Nlbp;
    Ok(r)
}

/// Quadratic basis pursuit: the second-order truncation lifted at `q = 2`.
pub fn solve_qbp<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    config: &PipelineConfig<T>,
) -> Result<BaselineResult<T>> {
    let mut r = solve_lifted(polys, y, 2, config)?;
    r.method = Method::Qbp;
    Ok(r)
}

/// First-order model `y - c = A x`. `lambda = 0` gives the minimum-norm least
/// squares solution; `lambda > 0` solves `min lambda ||x||_1 + ||Ax - b||^2 / 2`
/// by ADMM.
pub fn solve_linear<T: Scalar>(polys: &[Polynomial<T>], y: &[T], lambda: T) -> Result<BaselineResult<T>> {
    let n = check_system(polys, y)?;
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidInput("lambda must be >= 0".into()));
    }
    let m = polys.len();
    let zero = MultiIndex::zero(n);
    let a = DMatrix::from_fn(m, n, |i, j| polys[i].coeff(&MultiIndex::unit(n, j)));
    let b = DVector::from_fn(m, |i, _| y[i] - polys[i].coeff(&zero));
    let x = if lambda == T::zero() {
        min_norm_least_squares(&a, &b)?
    } else {
        lasso_admm(&a, &b, lambda, T::one(), 10_000)?
    };
    let fit = (&a * &x - &b).norm_squared() * T::lit(0.5);
    let l1 = x.iter().fold(T::zero(), |s, v| s + v.abs());
    let x_hat: Vec<T> = x.iter().copied().collect();
    Ok(BaselineResult {
        method: Method::Linear,
        lambda: lambda.as_f64(),
        residual_sq: residual_sq(polys, y, &x_hat),
        x_hat,
        objective: fit + lambda * l1,
        success: None,
        lifted: None,
    })
}

fn min_norm_least_squares<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |m, v| m.max(*v));
    let eps = smax * T::lit(1e-12) * T::from_usize_lossy(a.nrows().max(a.ncols()));
    svd.solve(b, eps).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn lasso_admm<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>, lambda: T, rho: T, max_iters: usize) -> Result<DVector<T>> {
    let n = a.ncols();
    let ata = a.tr_mul(a) + DMatrix::identity(n, n).scale(rho);
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("lasso system is not positive definite".into()))?;
    let atb = a.tr_mul(b);
    let mut z = DVector::zeros(n);
    let mut u = DVector::zeros(n);
    let t = lambda / rho;
    for _ in 0..max_iters {
        let x = chol.solve(&(&atb + (&z - &u).scale(rho)));
        let z_prev = z.clone();
        z = (&x + &u).map(|v| {
            if v > t {
                v - t
            } else if v < -t {
                v + t
            } else {
                T::zero()
            }
        });
        u += &x - &z;
        let r = (&x - &z).norm();
        let s = rho * (&z - &z_prev).norm();
        let tol = T::lit(1e-10) * (T::one() + x.norm().max(z.norm()));
        if r <= tol && s <= tol {
            break;
        }
    }
    Ok(z)
}

/// Damped Gauss-Newton on `f(x) - y` over the variables in `active`; the rest
/// stay at their values in `x0`. Returns the best point seen and its squared
/// residual.
pub(crate) fn levenberg_marquardt<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    x0: &[T],
    active: &[usize],
    max_iters: usize,
    target: T,
) -> (Vec<T>, T) {
    let mut x = x0.to_vec();
    let mut cost = residual_sq(polys, y, &x);
    if active.is_empty() || !cost.is_finite() {
        return (x, cost);
    }
    let k = active.len();
    let mut damping = T::lit(-1.0);
    for _ in 0..max_iters {
        if cost <= target {
            break;
        }
        let r = DVector::from_fn(polys.len(), |i, _| polys[i].eval_unchecked(&x) - y[i]);
        let mut jac = DMatrix::zeros(polys.len(), k);
        for (i, p) in polys.iter().enumerate() {
            let g = p.gradient(&x).expect("dimensions checked");
            for (c, &j) in active.iter().enumerate() {
                jac[(i, c)] = g[j];
            }
        }
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&r);
        if damping < T::zero() {
            let dmax = (0..k).fold(T::zero(), |m, i| m.max(jtj[(i, i)]));
            damping = T::lit(1e-6) * dmax.max(T::lit(1e-12));
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut sys = jtj.clone();
            for i in 0..k {
                sys[(i, i)] += damping * (T::one() + jtj[(i, i)]);
            }
            let Some(step) = sys.cholesky().map(|c| c.solve(&jtr)) else {
                damping *= T::lit(10.0);
                continue;
            };
            let mut cand = x.clone();
            for (c, &j) in active.iter().enumerate() {
                cand[j] -= step[c];
            }
            let c_cost = residual_sq(polys, y, &cand);
            if c_cost.is_finite() && c_cost < cost {
                let rel = (cost - c_cost) / cost.max(T::lit(f64::MIN_POSITIVE));
                x = cand;
                cost = c_cost;
                damping = (damping * T::lit(0.3)).max(T::lit(1e-15));
                improved = rel > T::lit(1e-15);
                break;
            }
            damping *= T::lit(4.0);
        }
        if !improved {
            break;
        }
    }
    (x, cost)
}

/// Search budget for [`l0_oracle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleBudget {
    pub starts_per_support: usize,
    /// Std of the Gaussian starting points.
    pub init_std: f64,
    pub newton_iters: usize,
    pub seed: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { starts_per_support: 20, init_std: 1.0, newton_iters: 100, seed: 0 }
    }
}

fn supports_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            cur.push(j);
            rec(j + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Sparsest exact solution with at most `max_support` nonzeros, found by
/// enumerating supports in order of size and running multi-start damped
/// Newton on each. Among solutions of the minimal size the one with the
/// smallest residual wins.
pub fn l0_oracle<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    max_support: usize,
    budget: &OracleBudget,
) -> Result<Vec<T>> {
    let n = check_system(polys, y)?;
    if n > 8 || max_support > 3 {
        return Err(Error::InvalidInput("oracle supports n <= 8 and max_support <= 3".into()));
    }
    let y_sq = y.iter().fold(T::zero(), |s, v| s + *v * *v);
    let tol = T::lit(1e-12) * (T::one() + y_sq);
    let normal = Normal::new(0.0, budget.init_std)
        .map_err(|_| Error::InvalidInput("oracle init_std must be positive".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);

    for size in 0..=max_support.min(n) {
        let mut best: Option<(Vec<T>, T)> = None;
        for support in supports_of_size(n, size) {
            for _ in 0..budget.starts_per_support.max(1) {
                let mut x0 = vec![T::zero(); n];
                for &j in &support {
                    x0[j] = T::lit(normal.sample(&mut rng));
                }
                let (x, cost) = levenberg_marquardt(polys, y, &x0, &support, budget.newton_iters, T::zero());
                if cost <= tol && best.as_ref().is_none_or(|(_, c)| cost < *c) {
                    best = Some((x, cost));
                }
                if size == 0 || best.as_ref().is_some_and(|(_, c)| *c == T::zero()) {
                    break;
                }
            }
        }
        if let Some((x, _)) = best {
            return Ok(x);
        }
    }
    Err(Error::NotFound)
}

/// Indices with `|x_j| > tol * (1 + ||x||_inf)`.
pub fn support_of<T: Scalar>(x: &[T], tol: f64) -> Vec<usize> {
    let x_inf = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let cut = T::lit(tol) * (T::one() + x_inf);
    x.iter().enumerate().filter(|(_, v)| v.abs() > cut).map(|(j, _)| j).collect()
}

//! Consensus ADMM for `min Tr(X) + lambda * ||X||_1  s.t.  Tr(Q_i X) = y_i, X psd`.
//!
//! The objective is split into three blocks sharing one consensus variable `Z`:
//!
//! * `h1(X1) = Tr(X1)` restricted to the affine set `{Tr(Q_i X) = y_i}`,
//! * `h2(X2)`, the indicator of the psd cone,
//! * `g(Z) = lambda * ||Z||_1`.
//!
//! With scaled duals `U1, U2` one iteration is
//!
//! ```text
//! X1 = P_affine(Z - U1 - I / rho)
//! X2 = P_psd(Z - U2)
//! Z  = soft((X1 + U1 + X2 + U2) / 2, lambda / (2 rho))
//! Uk = Uk + Xk - Z
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lifting::{LiftedProblem, SymMatrix};
use crate::scalar::Scalar;

/// Tuning knobs for [`solve_nlbp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig<T: Scalar> {
    /// Weight of the elementwise l1 term.
    pub lambda: T,
    /// ADMM penalty.
    pub rho: T,
    pub max_iters: usize,
    pub eps_abs: T,
    pub eps_rel: T,
    /// Relaxation factor in `[1, 1.8]`; 1 disables over-relaxation.
    pub over_relaxation: T,
    /// Residual-balancing penalty updates.
    pub adaptive_rho: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::zero(),
            rho: T::one(),
            max_iters: 20_000,
            eps_abs: T::lit(1e-7),
            eps_rel: T::lit(1e-5),
            over_relaxation: T::one(),
            adaptive_rho: false,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("solver config: {what}")));
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.rho > T::zero()) || !self.rho.is_finite() {
            return bad("rho must be finite and > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.eps_abs > T::zero()) || !(self.eps_rel > T::zero()) {
            return bad("tolerances must be positive");
        }
        if !(self.over_relaxation >= T::one() && self.over_relaxation <= T::lit(1.8)) {
            return bad("over_relaxation must lie in [1, 1.8]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
}

/// Outcome of a solve. `x` is the psd block of the final consensus iterate.
#[derive(Clone, Debug)]
pub struct SolveReport<T: Scalar> {
    pub x: SymMatrix<T>,
    pub iterations: usize,
    pub primal_residual: T,
    pub dual_residual: T,
    pub primal_tolerance: T,
    pub dual_tolerance: T,
    /// `Tr(X) + lambda * ||X||_1`.
    pub objective: T,
    /// `max_i |Tr(Q_i X) - y_i|`.
    pub constraint_violation: T,
    pub min_eigenvalue: T,
    pub status: SolveStatus,
    /// Penalty at termination (differs from the configured one only with
    /// adaptive rho).
    pub rho: T,
}

/// Factorization of the constraint Gram matrix `G(i, j) = <Q_i, Q_j>`,
/// reused by every affine projection.
#[derive(Clone, Debug)]
pub struct AffineCache<T: Scalar> {
    dim: usize,
    /// Row `i` is `vec(Q_i)`.
    operator: DMatrix<T>,
    gram_pinv: DMatrix<T>,
    rhs: DVector<T>,
    rank: usize,
    /// `||(I - G G^+) y||`; nonzero only when `y` is outside the range of the
    /// constraint operator.
    inconsistency: T,
}

impl<T: Scalar> AffineCache<T> {
    pub fn new(problem: &LiftedProblem<T>) -> Result<Self> {
        let dim = problem.dim();
        let m = problem.num_constraints();
        let mut operator = DMatrix::zeros(m, dim * dim);
        for (i, c) in problem.constraints().iter().enumerate() {
            for (k, v) in c.q.as_slice().iter().enumerate() {
                operator[(i, k)] = *v;
            }
        }
        let gram = &operator * operator.transpose();
        let eig = gram
            .clone()
            .try_symmetric_eigen(T::default_epsilon(), 10_000)
            .ok_or(Error::Eigen { iteration: 0 })?;
        let max_ev = eig.eigenvalues.iter().fold(T::zero(), |m, v| m.max(*v));
        let cutoff = T::lit(1e-12) * max_ev;
        let mut inv = DVector::zeros(m);
        let mut rank = 0;
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > cutoff && ev > T::zero() {
                inv[k] = T::one() / ev;
                rank += 1;
            }
        }
        let v = &eig.eigenvectors;
        let gram_pinv = v * DMatrix::from_diagonal(&inv) * v.transpose();
        let rhs = DVector::from_vec(problem.rhs());
        let inconsistency = (&rhs - &gram * (&gram_pinv * &rhs)).norm();
        Ok(Self { dim, operator, gram_pinv, rhs, rank, inconsistency })
    }

    /// Numerical rank of the constraint system.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn inconsistency(&self) -> T {
        self.inconsistency
    }

    /// `true` when the right-hand side lies in the range of the operator.
    pub fn is_consistent(&self) -> bool {
        self.inconsistency <= T::lit(1e-8) * (T::one() + self.rhs.norm())
    }

    /// Errors with `InconsistentConstraints` if no matrix satisfies every
    /// constraint.
    pub fn check_consistent(&self) -> Result<()> {
        if self.is_consistent() {
            Ok(())
        } else {
            Err(Error::InconsistentConstraints { residual: self.inconsistency.as_f64() })
        }
    }

    fn project(&self, x: &SymMatrix<T>) -> SymMatrix<T> {
        let v = DVector::from_column_slice(x.as_slice());
        let r = &self.operator * &v - &self.rhs;
        let mu = &self.gram_pinv * r;
        let out = v - self.operator.tr_mul(&mu);
        let m = DMatrix::from_column_slice(self.dim, self.dim, out.as_slice());
        SymMatrix::symmetrized(&m).expect("square by construction")
    }
}

/// Euclidean projection of `x` onto `{X : Tr(Q_i X) = y_i for all i}`.
///
/// Redundant constraints are handled by pseudo-inversion of the Gram matrix;
/// for an inconsistent system the result is the least-squares projection
/// (see [`AffineCache::check_consistent`]).
pub fn project_affine<T: Scalar>(x: &SymMatrix<T>, cache: &AffineCache<T>) -> Result<SymMatrix<T>> {
    if x.dim() != cache.dim {
        return Err(Error::DimensionMismatch { expected: cache.dim, found: x.dim() });
    }
    Ok(cache.project(x))
}

fn eigen_clamped<T: Scalar>(x: &SymMatrix<T>) -> Option<(SymMatrix<T>, T)> {
    if !x.is_finite() {
        return None;
    }
    let eig = x.as_matrix().clone().try_symmetric_eigen(T::default_epsilon(), 10_000)?;
    let min_ev = eig.eigenvalues.iter().fold(T::max_value().unwrap_or(T::one()), |m, v| m.min(*v));
    let clamped = eig.eigenvalues.map(|v| v.max(T::zero()));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Some((SymMatrix::symmetrized(&m).expect("square"), min_ev))
}

/// Frobenius-nearest psd matrix: negative eigenvalues are clamped to zero.
pub fn project_psd<T: Scalar>(x: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    eigen_clamped(x).map(|(m, _)| m).ok_or(Error::Eigen { iteration: 0 })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(x: &SymMatrix<T>) -> Result<T> {
    let eig = x
        .as_matrix()
        .clone()
        .try_symmetric_eigen(T::default_epsilon(), 10_000)
        .ok_or(Error::Eigen { iteration: 0 })?;
    Ok(eig.eigenvalues.iter().fold(T::max_value().unwrap_or(T::one()), |m, v| m.min(*v)))
}

/// Elementwise `sign(z) * max(|z| - t, 0)`, the prox of `t * ||.||_1`.
pub fn soft_threshold<T: Scalar>(z: &SymMatrix<T>, t: T) -> SymMatrix<T> {
    assert!(t >= T::zero(), "threshold must be non-negative");
    if t == T::zero() {
        return z.clone();
    }
    z.map_entries(|v| {
        if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            T::zero()
        }
    })
}

/// Snapshot handed to the observer of [`solve_nlbp_observed`] after each
/// iteration.
pub struct IterateView<'a, T: Scalar> {
    pub iteration: usize,
    pub x_affine: &'a SymMatrix<T>,
    pub x_psd: &'a SymMatrix<T>,
    pub z: &'a SymMatrix<T>,
    pub primal_residual: T,
    pub dual_residual: T,
}

pub fn solve_nlbp<T: Scalar>(problem: &LiftedProblem<T>, config: &SolverConfig<T>) -> Result<SolveReport<T>> {
    solve_nlbp_observed(problem, config, |_| {})
}

/// [`solve_nlbp`] with a callback invoked on every iterate.
pub fn solve_nlbp_observed<T: Scalar>(
    problem: &LiftedProblem<T>,
    config: &SolverConfig<T>,
    mut observe: impl FnMut(&IterateView<'_, T>),
) -> Result<SolveReport<T>> {
    config.validate()?;
    let cache = AffineCache::new(problem)?;
    let dim = problem.dim();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let sqrt2 = two.sqrt();
    let alpha = config.over_relaxation;
    let mut rho = config.rho;

    let mut z = SymMatrix::zeros(dim);
    let mut u1 = SymMatrix::zeros(dim);
    let mut u2 = SymMatrix::zeros(dim);
    let mut x1 = SymMatrix::zeros(dim);
    let mut x2 = SymMatrix::zeros(dim);
    let identity = DMatrix::<T>::identity(dim, dim);

    let abs_scale = sqrt2 * T::from_usize_lossy(dim) * config.eps_abs;
    let mut primal = T::zero();
    let mut dual = T::zero();
    let mut eps_pri = T::zero();
    let mut eps_dual = T::zero();
    let mut converged = false;
    let mut iterations = 0;
    let consistent = cache.is_consistent();
    // primal residual history for plateau detection
    let mut history: Vec<T> = Vec::new();

    for it in 1..=config.max_iters {
        iterations = it;
        let tilt = identity.scale(T::one() / rho);
        let v1 = z.as_matrix() - u1.as_matrix() - tilt;
        x1 = cache.project(&SymMatrix::from_matrix_unchecked(v1));
        let v2 = SymMatrix::from_matrix_unchecked(z.as_matrix() - u2.as_matrix());
        x2 = eigen_clamped(&v2).ok_or(Error::Eigen { iteration: it })?.0;

        let (h1, h2) = if alpha == T::one() {
            (x1.as_matrix().clone(), x2.as_matrix().clone())
        } else {
            let beta = T::one() - alpha;
            (
                x1.as_matrix().scale(alpha) + z.as_matrix().scale(beta),
                x2.as_matrix().scale(alpha) + z.as_matrix().scale(beta),
            )
        };
        let avg = (&h1 + u1.as_matrix() + &h2 + u2.as_matrix()).scale(half);
        let z_prev = z;
        z = soft_threshold(&SymMatrix::from_matrix_unchecked(avg), config.lambda / (two * rho));
        let zm = z.as_matrix();
        u1 = SymMatrix::from_matrix_unchecked(u1.as_matrix() + &h1 - zm);
        u2 = SymMatrix::from_matrix_unchecked(u2.as_matrix() + &h2 - zm);

        let r1 = (x1.as_matrix() - zm).norm_squared();
        let r2 = (x2.as_matrix() - zm).norm_squared();
        primal = (r1 + r2).sqrt();
        dual = rho * sqrt2 * (zm - z_prev.as_matrix()).norm();
        let x_norm = (x1.as_matrix().norm_squared() + x2.as_matrix().norm_squared()).sqrt();
        eps_pri = abs_scale + config.eps_rel * x_norm.max(sqrt2 * zm.norm());
        let u_norm = (u1.as_matrix().norm_squared() + u2.as_matrix().norm_squared()).sqrt();
        eps_dual = abs_scale + config.eps_rel * rho * u_norm;

        observe(&IterateView {
            iteration: it,
            x_affine: &x1,
            x_psd: &x2,
            z: &z,
            primal_residual: primal,
            dual_residual: dual,
        });
        history.push(primal);

        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
        // an empty feasible set leaves a constant primal gap; stop once it settles
        if !consistent && it % 200 == 0 && it >= 400 {
            let before = history[it - 201];
            if (primal - before).abs() <= T::lit(1e-3) * before {
                break;
            }
        }

        if config.adaptive_rho && it % 10 == 0 {
            let mu = T::lit(10.0);
            if primal > mu * dual {
                rho *= two;
                u1 = u1.map_entries(|v| v * half);
                u2 = u2.map_entries(|v| v * half);
            } else if dual > mu * primal {
                rho *= half;
                u1 = u1.map_entries(|v| v * two);
                u2 = u2.map_entries(|v| v * two);
            }
        }
    }

    let x = x2;
    let min_ev = min_eigenvalue(&x).map_err(|_| Error::Eigen { iteration: iterations })?;
    let violation = problem.max_violation(&x);
    let y_inf = problem.rhs().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let infeasible_tol = T::lit(1e-6) * (T::one() + y_inf);
    let plateaued = {
        let w = history.len().min(200);
        if w < 2 {
            false
        } else {
            let recent = &history[history.len() - w..];
            let (lo, hi) = recent
                .iter()
                .fold((recent[0], recent[0]), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            hi <= lo * T::lit(1.5)
        }
    };
    let status = if !consistent {
        SolveStatus::Infeasible
    } else if converged {
        SolveStatus::Converged
    } else if violation > infeasible_tol && plateaued {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIters
    };
    let _ = x1;
    Ok(SolveReport {
        objective: x.trace() + config.lambda * x.l1_norm(),
        constraint_violation: violation,
        min_eigenvalue: min_ev,
        x,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        primal_tolerance: eps_pri,
        dual_tolerance: eps_dual,
        status,
        rho,
    })
}

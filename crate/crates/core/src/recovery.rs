//! Rank-1 extraction and recovery certificates.
//!
//! A solution `X` of the relaxation certifies a solution of the original
//! system when it is (numerically) rank one: its top eigenvector, scaled so
//! that the constant monomial equals one, is the lifted vector `xbar`.
//!
//! Two certificates are provided. The mutual-coherence bound
//! `||X||_0 < (1 + 1/mu(B)) / 2` is checkable in polynomial time. The
//! restricted isometry constant is not; [`estimate_rip_epsilon`] only samples
//! sparse matrices and so yields a *lower* bound on it, good for refuting an
//! RIP claim and nothing more.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{lift_vector, LiftedProblem, SymMatrix};
use crate::monomials::MonomialBasis;
use crate::scalar::Scalar;

/// Acceptance thresholds for [`extract_rank1`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryThresholds {
    /// Upper bound on `sigma2 / sigma1`.
    pub rank1_ratio: f64,
    /// Bound on `max |lift(x) - xbar|`, relative to `1 + ||xbar||_inf`.
    pub consistency: f64,
}

impl Default for RecoveryThresholds {
    fn default() -> Self {
        Self { rank1_ratio: 1e-3, consistency: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredSolution<T: Scalar> {
    pub x: Vec<T>,
    pub x_bar: Vec<T>,
    /// `sigma2 / sigma1` of `X`.
    pub rank1_ratio: T,
    /// `max_i |lift(x)_i - x_bar_i|`.
    pub lift_consistency: T,
    pub valid: bool,
}

/// Reads `xbar` off the dominant eigenpair of `x` and `x` off its degree-one
/// entries.
pub fn extract_rank1<T: Scalar>(
    x: &SymMatrix<T>,
    basis: &MonomialBasis,
    thresholds: &RecoveryThresholds,
) -> Result<RecoveredSolution<T>> {
    if x.dim() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), found: x.dim() });
    }
    if basis.half_degree() == 0 {
        return Err(Error::InvalidInput("basis has no degree-one monomials".into()));
    }
    let eig = x
        .as_matrix()
        .clone()
        .try_symmetric_eigen(T::default_epsilon(), 10_000)
        .ok_or(Error::Eigen { iteration: 0 })?;
    let mut order: Vec<usize> = (0..x.dim()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let top = order[0];
    let sigma1 = eig.eigenvalues[top];
    if !(sigma1 > T::lit(1e-12)) {
        return Err(Error::DegenerateTopEigenvalue(sigma1.as_f64()));
    }
    let sigma2 = order[1..]
        .iter()
        .map(|&k| eig.eigenvalues[k].abs())
        .fold(T::zero(), |m, v| m.max(v));
    let rank1_ratio = sigma2 / sigma1;

    let scale = sigma1.sqrt();
    let v = eig.eigenvectors.column(top);
    let lead = v[0] * scale;
    let v_inf = v.iter().fold(T::zero(), |m, e| m.max(e.abs())) * scale;
    if !(lead.abs() > T::lit(1e-12) * v_inf.max(T::one())) {
        return Err(Error::VanishingConstantComponent);
    }
    // anchor xbar(1) = 1; this also fixes the sign
    let x_bar: Vec<T> = v.iter().map(|e| *e * scale / lead).collect();
    let x_vec: Vec<T> = (0..basis.num_vars())
        .map(|j| x_bar[basis.linear_position(j).expect("half_degree >= 1")])
        .collect();
    let relift = lift_vector(&x_vec, basis)?;
    let lift_consistency = relift
        .iter()
        .zip(&x_bar)
        .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
    let xbar_inf = x_bar.iter().fold(T::zero(), |m, e| m.max(e.abs()));
    let valid = rank1_ratio <= T::lit(thresholds.rank1_ratio)
        && lift_consistency <= T::lit(thresholds.consistency) * (T::one() + xbar_inf);
    Ok(RecoveredSolution { x: x_vec, x_bar, rank1_ratio, lift_consistency, valid })
}

/// Default cap on the number of entries of the dense operator matrix.
pub const OPERATOR_ENTRY_CAP: usize = 50_000_000;

/// `M x D^2` matrix whose row `i` is `vec(Q_i)`, so `B vec(X) = {Tr(Q_i X)}`.
pub fn operator_matrix<T: Scalar>(problem: &LiftedProblem<T>) -> Result<DMatrix<T>> {
    operator_matrix_capped(problem, OPERATOR_ENTRY_CAP)
}

pub fn operator_matrix_capped<T: Scalar>(problem: &LiftedProblem<T>, cap: usize) -> Result<DMatrix<T>> {
    let rows = problem.num_constraints();
    let cols = problem.dim() * problem.dim();
    if rows.saturating_mul(cols) > cap {
        return Err(Error::TooLarge { rows, cols, cap });
    }
    let mut b = DMatrix::zeros(rows, cols);
    for (i, c) in problem.constraints().iter().enumerate() {
        for (k, v) in c.q.as_slice().iter().enumerate() {
            b[(i, k)] = *v;
        }
    }
    Ok(b)
}

/// Mutual coherence together with the number of all-zero columns that were
/// left out of the maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coherence<T> {
    pub mu: T,
    pub zero_columns: usize,
}

/// Largest normalized inner product between two distinct nonzero columns.
pub fn mutual_coherence<T: Scalar>(b: &DMatrix<T>) -> Result<T> {
    mutual_coherence_detailed(b).map(|c| c.mu)
}

pub fn mutual_coherence_detailed<T: Scalar>(b: &DMatrix<T>) -> Result<Coherence<T>> {
    let norms: Vec<T> = b.column_iter().map(|c| c.norm()).collect();
    let keep: Vec<usize> = (0..b.ncols()).filter(|&j| norms[j] > T::zero()).collect();
    let zero_columns = b.ncols() - keep.len();
    if keep.len() < 2 {
        return Err(Error::AllZeroColumns);
    }
    let normalized = DMatrix::from_fn(b.nrows(), keep.len(), |i, k| b[(i, keep[k])] / norms[keep[k]]);
    let gram = normalized.tr_mul(&normalized);
    let mut mu = T::zero();
    for j in 0..keep.len() {
        for i in 0..j {
            mu = mu.max(gram[(i, j)].abs());
        }
    }
    // rounding can push a duplicate column pair just above one
    Ok(Coherence { mu: mu.min(T::one()), zero_columns })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCertificate {
    pub mu: f64,
    pub sparsity_bound: f64,
    #[serde(rename = "X_l0")]
    pub x_l0: usize,
    pub holds: bool,
    pub zero_columns_excluded: usize,
}

/// Entries of `x` larger than `zero_tol * ||x||_inf` in magnitude.
pub fn count_nonzeros<T: Scalar>(x: &SymMatrix<T>, zero_tol: T) -> usize {
    let cut = zero_tol * x.max_abs();
    x.as_slice().iter().filter(|v| v.abs() > cut).count()
}

/// Checks `||X||_0 < (1 + 1/mu(B)) / 2` for the operator of `problem`.
pub fn coherence_certificate<T: Scalar>(
    problem: &LiftedProblem<T>,
    x: &SymMatrix<T>,
    zero_tol: T,
) -> Result<CoherenceCertificate> {
    let b = operator_matrix(problem)?;
    let coh = mutual_coherence_detailed(&b)?;
    Ok(certificate_from_coherence(coh, x, zero_tol))
}

/// Same as [`coherence_certificate`] with a precomputed coherence.
pub fn certificate_from_coherence<T: Scalar>(
    coherence: Coherence<T>,
    x: &SymMatrix<T>,
    zero_tol: T,
) -> CoherenceCertificate {
    let mu = coherence.mu.as_f64();
    let sparsity_bound = if mu > 0.0 { 0.5 * (1.0 + 1.0 / mu) } else { f64::INFINITY };
    let x_l0 = count_nonzeros(x, zero_tol);
    CoherenceCertificate {
        mu,
        sparsity_bound,
        x_l0,
        holds: (x_l0 as f64) < sparsity_bound,
        zero_columns_excluded: coherence.zero_columns,
    }
}

/// Random symmetric matrix with at most `k` nonzero entries and Gaussian
/// values. An off-diagonal pick contributes two entries.
fn sparse_symmetric<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> SymMatrix<T> {
    let mut x = SymMatrix::zeros(dim);
    let mut nnz = 0;
    let cells = sample(rng, dim * dim, k.min(dim * dim));
    for cell in cells.iter() {
        let (i, j) = (cell / dim, cell % dim);
        if x.get(i, j) != T::zero() {
            continue;
        }
        let cost = if i == j { 1 } else { 2 };
        if nnz + cost > k {
            continue;
        }
        let v: f64 = StandardNormal.sample(rng);
        x.set(i, j, T::lit(v));
        nnz += cost;
    }
    x
}

/// `| ||B(X)||^2 / ||X||_F^2 - 1 |`, or `None` for `X = 0`.
pub fn isometry_defect<T: Scalar>(problem: &LiftedProblem<T>, x: &SymMatrix<T>) -> Option<T> {
    let denom = x.frobenius_norm().powi(2);
    if denom == T::zero() {
        return None;
    }
    let num = problem.apply(x).iter().fold(T::zero(), |s, v| s + *v * *v);
    Some((num / denom - T::one()).abs())
}

/// Monte-Carlo lower bound on the `(eps, k)`-RIP constant of the operator.
///
/// Sample `s` is drawn from its own ChaCha stream `s` under `rng_seed`, so the
/// estimate is a running maximum: more samples never lower it.
pub fn estimate_rip_epsilon<T: Scalar>(
    problem: &LiftedProblem<T>,
    k: usize,
    num_samples: usize,
    rng_seed: u64,
) -> Result<T> {
    if k == 0 || num_samples == 0 {
        return Err(Error::InvalidInput("k and num_samples must be positive".into()));
    }
    let dim = problem.dim();
    let best = (0..num_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(s as u64);
            let x = sparse_symmetric::<T>(&mut rng, dim, k);
            isometry_defect(problem, &x).map(|d| d.as_f64()).unwrap_or(0.0)
        })
        .reduce(|| 0.0, f64::max);
    Ok(T::lit(best))
}

/// Random planted rank-one matrix perturbed by a small psd term; used by tests.
#[doc(hidden)]
pub fn perturbed_lift(x_bar: &[f64], noise: f64, rng: &mut impl Rng) -> SymMatrix<f64> {
    let dim = x_bar.len();
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let p = &a * a.transpose();
    let xx = DVector::from_column_slice(x_bar);
    let m = &xx * xx.transpose() + p.scale(noise);
    SymMatrix::symmetrized(&m).expect("square")
}

//! Multi-indices, graded monomial bases and sparse real polynomials.
//!
//! All orderings here are frozen: a [`MonomialBasis`] lists monomials by
//! ascending total degree, and within one degree by *descending*
//! lexicographic order of the exponent vector. For two variables and degree
//! at most two this gives `1, x1, x2, x1^2, x1*x2, x2^2`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exponent vector `alpha` over `n` variables, with its total degree cached.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<u32>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        let degree = exponents.iter().sum();
        Self { exponents, degree }
    }

    pub fn zero(num_vars: usize) -> Self {
        Self { exponents: vec![0; num_vars], degree: 0 }
    }

    /// The monomial `x_var`.
    pub fn unit(num_vars: usize, var: usize) -> Self {
        let mut exponents = vec![0; num_vars];
        exponents[var] = 1;
        Self { exponents, degree: 1 }
    }

    #[inline]
    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.exponents.len()
    }

    #[inline]
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    /// Exponent-wise sum, i.e. the multi-index of the product monomial.
    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.num_vars(), other.num_vars());
        let exponents = self.exponents.iter().zip(&other.exponents).map(|(a, b)| a + b).collect();
        Self { exponents, degree: self.degree + other.degree }
    }

    /// Is `self` equal to `a + b`? Avoids allocating the sum.
    pub fn is_sum_of(&self, a: &Self, b: &Self) -> bool {
        self.degree == a.degree + b.degree
            && self
                .exponents
                .iter()
                .zip(a.exponents.iter().zip(&b.exponents))
                .all(|(s, (x, y))| *s == x + y)
    }

    /// Variables with a nonzero exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.exponents.iter().enumerate().filter(|(_, e)| **e > 0).map(|(j, _)| j)
    }
}

impl Ord for MultiIndex {
    /// Graded order: lower degree first, then descending lexicographic.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree
            .cmp(&other.degree)
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.exponents)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("1");
        }
        let mut first = true;
        for (j, &e) in self.exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            write!(f, "x{}", j + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.exponents.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vec::<u32>::deserialize(d).map(MultiIndex::new)
    }
}

/// All exponent vectors over `num_vars` variables of total degree exactly
/// `degree`, in descending lexicographic order.
fn exact_degree(num_vars: usize, degree: u32, out: &mut Vec<MultiIndex>) {
    fn rec(prefix: &mut Vec<u32>, remaining: u32, slots: usize, out: &mut Vec<MultiIndex>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(MultiIndex::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(prefix, remaining - e, slots - 1, out);
            prefix.pop();
        }
    }
    let mut prefix = Vec::with_capacity(num_vars);
    rec(&mut prefix, degree, num_vars, out);
}

/// Every multi-index with `0 <= |alpha| <= max_degree`, in graded order.
///
/// The count is `C(num_vars + max_degree, max_degree)`.
pub fn enumerate_alpha_set(num_vars: usize, max_degree: u32) -> Vec<MultiIndex> {
    assert!(num_vars >= 1, "need at least one variable");
    let mut out = Vec::new();
    for d in 0..=max_degree {
        exact_degree(num_vars, d, &mut out);
    }
    out
}

/// Ordered list of the monomials of degree at most `half_degree`; the
/// components of the lifted vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialBasis {
    num_vars: usize,
    half_degree: u32,
    entries: Vec<MultiIndex>,
    index_of: HashMap<MultiIndex, usize>,
}

impl MonomialBasis {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn half_degree(&self) -> u32 {
        self.half_degree
    }

    pub fn entries(&self) -> &[MultiIndex] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, alpha: &MultiIndex) -> Option<usize> {
        self.index_of.get(alpha).copied()
    }

    /// Position of `x_var` in the basis (always present when `half_degree >= 1`).
    pub fn linear_position(&self, var: usize) -> Option<usize> {
        self.index_of(&MultiIndex::unit(self.num_vars, var))
    }

    /// Rebuilds a basis from an explicit entry list, checking that it is the
    /// canonical graded enumeration.
    pub fn from_entries(entries: Vec<MultiIndex>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::InvalidInput("empty basis".into()))?;
        let num_vars = first.num_vars();
        let half_degree = entries.iter().map(MultiIndex::degree).max().unwrap_or(0);
        if num_vars == 0 {
            return Err(Error::InvalidInput("basis entries have no variables".into()));
        }
        let expected = enumerate_basis(num_vars, half_degree);
        if expected.entries != entries {
            return Err(Error::InvalidInput(
                "basis entries are not the graded enumeration of all monomials up to their degree".into(),
            ));
        }
        Ok(expected)
    }
}

/// All monomials in `num_vars` variables of degree at most `half_degree`.
///
/// `entries[0]` is the constant monomial and the length is
/// `C(num_vars + half_degree, half_degree)`.
pub fn enumerate_basis(num_vars: usize, half_degree: u32) -> MonomialBasis {
    let entries = enumerate_alpha_set(num_vars, half_degree);
    let index_of = entries.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
    MonomialBasis { num_vars, half_degree, entries, index_of }
}

/// `prod_j x[j]^alpha[j]`; 1 for the zero multi-index.
pub fn eval_monomial<T: Scalar>(alpha: &MultiIndex, x: &[T]) -> Result<T> {
    if alpha.num_vars() != x.len() {
        return Err(Error::DimensionMismatch { expected: alpha.num_vars(), found: x.len() });
    }
    Ok(monomial_unchecked(alpha, x))
}

#[inline]
pub(crate) fn monomial_unchecked<T: Scalar>(alpha: &MultiIndex, x: &[T]) -> T {
    alpha
        .exponents
        .iter()
        .zip(x)
        .filter(|(e, _)| **e > 0)
        .fold(T::one(), |acc, (&e, &v)| acc * v.powi(e as i32))
}

/// Sparse real polynomial in canonical form: no stored coefficient is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "PolynomialRepr<T>",
    try_from = "PolynomialRepr<T>",
    bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct Polynomial<T: Scalar> {
    num_vars: usize,
    terms: BTreeMap<MultiIndex, T>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr<T> {
    alpha: Vec<u32>,
    coeff: T,
}

#[derive(Serialize, Deserialize)]
struct PolynomialRepr<T> {
    num_vars: usize,
    terms: Vec<TermRepr<T>>,
}

impl<T: Scalar> From<Polynomial<T>> for PolynomialRepr<T> {
    fn from(p: Polynomial<T>) -> Self {
        let terms = p
            .terms
            .into_iter()
            .map(|(alpha, coeff)| TermRepr { alpha: alpha.exponents, coeff })
            .collect();
        PolynomialRepr { num_vars: p.num_vars, terms }
    }
}

impl<T: Scalar> TryFrom<PolynomialRepr<T>> for Polynomial<T> {
    type Error = Error;

    fn try_from(repr: PolynomialRepr<T>) -> Result<Self> {
        Polynomial::from_terms(
            repr.num_vars,
            repr.terms.into_iter().map(|t| (MultiIndex::new(t.alpha), t.coeff)),
        )
    }
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero(num_vars: usize) -> Self {
        assert!(num_vars >= 1, "need at least one variable");
        Self { num_vars, terms: BTreeMap::new() }
    }

    /// Builds a polynomial from `(alpha, coeff)` pairs. Repeated multi-indices
    /// are summed and zero coefficients dropped.
    pub fn from_terms(
        num_vars: usize,
        terms: impl IntoIterator<Item = (MultiIndex, T)>,
    ) -> Result<Self> {
        if num_vars == 0 {
            return Err(Error::InvalidInput("polynomial needs at least one variable".into()));
        }
        let mut map: BTreeMap<MultiIndex, T> = BTreeMap::new();
        for (alpha, c) in terms {
            if alpha.num_vars() != num_vars {
                return Err(Error::DimensionMismatch { expected: num_vars, found: alpha.num_vars() });
            }
            if !c.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite coefficient for {alpha}")));
            }
            *map.entry(alpha).or_insert_with(T::zero) += c;
        }
        map.retain(|_, c| *c != T::zero());
        Ok(Self { num_vars, terms: map })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Highest term degree; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, T)> + '_ {
        self.terms.iter().map(|(a, c)| (a, *c))
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> T {
        self.terms.get(alpha).copied().unwrap_or_else(T::zero)
    }

    /// Drops every term of degree above `max_degree`. For a polynomial this is
    /// exactly its Taylor expansion of that order around the origin.
    pub fn truncate(&self, max_degree: u32) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(a, _)| a.degree() <= max_degree)
            .map(|(a, c)| (a.clone(), *c))
            .collect();
        Self { num_vars: self.num_vars, terms }
    }

    /// `a * self + b * other`.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.num_vars != other.num_vars {
            return Err(Error::DimensionMismatch { expected: self.num_vars, found: other.num_vars });
        }
        let scaled = |p: &Self, s: T| p.terms.iter().map(move |(k, c)| (k.clone(), *c * s)).collect::<Vec<_>>();
        Self::from_terms(self.num_vars, scaled(self, a).into_iter().chain(scaled(other, b)))
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        if x.len() != self.num_vars {
            return Err(Error::DimensionMismatch { expected: self.num_vars, found: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[T]) -> T {
        self.terms
            .iter()
            .fold(T::zero(), |acc, (alpha, &c)| acc + c * monomial_unchecked(alpha, x))
    }

    /// Gradient with respect to `x`.
    pub fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.num_vars {
            return Err(Error::DimensionMismatch { expected: self.num_vars, found: x.len() });
        }
        let mut grad = vec![T::zero(); self.num_vars];
        for (alpha, &c) in &self.terms {
            for j in alpha.support() {
                let e = alpha.exponents[j];
                let mut term = c * T::from_u32(e).unwrap_or_else(T::one);
                for (v, (&ev, &xv)) in alpha.exponents.iter().zip(x).enumerate() {
                    let p = if v == j { ev - 1 } else { ev };
                    if p > 0 {
                        term *= xv.powi(p as i32);
                    }
                }
                grad[j] += term;
            }
        }
        Ok(grad)
    }
}

/// Value of `p` at `x`; 0 for the zero polynomial.
pub fn eval_polynomial<T: Scalar>(p: &Polynomial<T>, x: &[T]) -> Result<T> {
    p.eval(x)
}

/// Polynomial with one independent `N(0, std_dev^2)` coefficient for every
/// multi-index of degree at most `max_degree`, drawn from `rng` in graded order.
pub fn random_polynomial_with<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    num_vars: usize,
    max_degree: u32,
    std_dev: f64,
) -> Result<Polynomial<T>> {
    if num_vars == 0 {
        return Err(Error::InvalidInput("polynomial needs at least one variable".into()));
    }
    let normal = Normal::new(0.0, std_dev)
        .ok()
        .filter(|_| std_dev > 0.0)
        .ok_or_else(|| Error::InvalidInput(format!("standard deviation must be positive, got {std_dev}")))?;
    let terms: Vec<_> = enumerate_alpha_set(num_vars, max_degree)
        .into_iter()
        .map(|alpha| (alpha, T::lit(normal.sample(rng))))
        .collect();
    Polynomial::from_terms(num_vars, terms)
}

/// Seeded variant of [`random_polynomial_with`]; identical seeds give identical
/// polynomials.
pub fn random_polynomial<T: Scalar>(
    num_vars: usize,
    max_degree: u32,
    rng_seed: u64,
    std_dev: f64,
) -> Result<Polynomial<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    random_polynomial_with(&mut rng, num_vars, max_degree, std_dev)
}

/// `C(n, k)` in exact integer arithmetic.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

//! Lifting polynomial equations to linear constraints on a matrix variable.
//!
//! Each equation `y_i = f_i(x)` of degree at most `q` is rewritten as a
//! quadratic form `y_i = xbar^T Q_i xbar` in the vector `xbar` of monomials of
//! degree at most `q/2`. The multiplicative relations between entries of
//! `xbar` are added as further quadratic constraints, after which
//! `X = xbar xbar^T` turns every constraint into `Tr(Q_i X) = y_i`.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monomials::{enumerate_basis, monomial_unchecked, MonomialBasis, MultiIndex, Polynomial};
use crate::scalar::Scalar;

/// Dense symmetric matrix. Every constructor and mutator keeps
/// `values(i, j) == values(j, i)` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T: Scalar> {
    values: DMatrix<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { values: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { values: DMatrix::identity(dim, dim) }
    }

    /// Takes the upper triangle of `m` and mirrors it.
    pub fn from_upper(m: &DMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let dim = m.nrows();
        Ok(Self { values: DMatrix::from_fn(dim, dim, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] }) })
    }

    /// `(m + m^T) / 2`.
    pub fn symmetrized(m: &DMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let half = T::lit(0.5);
        let dim = m.nrows();
        let mut values = DMatrix::from_fn(dim, dim, |i, j| (m[(i, j)] + m[(j, i)]) * half);
        // exact mirror, independent of rounding in the sum
        for i in 0..dim {
            for j in 0..i {
                values[(i, j)] = values[(j, i)];
            }
        }
        Ok(Self { values })
    }

    /// `v v^T`.
    pub fn outer(v: &[T]) -> Self {
        let dim = v.len();
        Self::from_upper(&DMatrix::from_fn(dim, dim, |i, j| v[i] * v[j])).expect("square by construction")
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        Self { values: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[(i, j)] = v;
        self.values[(j, i)] = v;
    }

    /// Adds `v` to `(i, j)` and to `(j, i)` (once on the diagonal).
    pub fn add_sym(&mut self, i: usize, j: usize, v: T) {
        self.values[(i, j)] += v;
        if i != j {
            self.values[(j, i)] += v;
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.values
    }

    /// Column-major flattening (identical to row-major by symmetry).
    pub fn as_slice(&self) -> &[T] {
        self.values.as_slice()
    }

    pub fn trace(&self) -> T {
        self.values.trace()
    }

    /// Frobenius inner product `Tr(self * other)`.
    pub fn inner(&self, other: &Self) -> T {
        self.values.dot(&other.values)
    }

    pub fn frobenius_norm(&self) -> T {
        self.values.norm()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Elementwise l1 norm.
    pub fn l1_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |s, v| s + v.abs())
    }

    /// `xbar^T self xbar`.
    pub fn quadratic_form(&self, v: &[T]) -> T {
        let dim = self.dim();
        let mut acc = T::zero();
        for j in 0..dim {
            let mut col = T::zero();
            for i in 0..dim {
                col += self.values[(i, j)] * v[i];
            }
            acc += col * v[j];
        }
        acc
    }

    /// Nonzero entries of the upper triangle as `(row, col, value)`.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, T)> {
        let dim = self.dim();
        let mut out = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                let v = self.values[(i, j)];
                if v != T::zero() {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != T::zero()).count()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn map_entries(&self, f: impl Fn(T) -> T) -> Self {
        Self { values: self.values.map(f) }
    }

    pub(crate) fn from_matrix_unchecked(values: DMatrix<T>) -> Self {
        Self { values }
    }
}

/// Where a lifted constraint came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// One of the measured equations.
    Data,
    /// `X(1,1) = 1`, pinning the constant monomial.
    Normalization,
    /// `xbar(i) = xbar(k) * xbar(l)` for basis entries.
    Dependency,
}

/// One pair `(y_i, Q_i)` meaning `Tr(Q_i X) = y_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedConstraint<T: Scalar> {
    pub y: T,
    pub q: SymMatrix<T>,
    pub kind: ConstraintKind,
}

/// Options for [`build_lifted_problem_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiftOptions {
    /// Drop dependency constraints whose matrix equals an earlier one.
    pub dedup: bool,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self { dedup: true }
    }
}

/// Complete constraint system over the lifted variable `X`.
///
/// Constraint order: the `N` data constraints, then the normalization
/// constraint, then dependencies in generation order.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedProblem<T: Scalar> {
    basis: MonomialBasis,
    constraints: Vec<LiftedConstraint<T>>,
    num_vars: usize,
    order: u32,
    num_data: usize,
}

impl<T: Scalar> LiftedProblem<T> {
    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn constraints(&self) -> &[LiftedConstraint<T>] {
        &self.constraints
    }

    /// Number of original unknowns `n`.
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Even expansion order `q`.
    pub fn order(&self) -> u32 {
        self.order
    }

    /// `N`, the number of data constraints.
    pub fn num_data(&self) -> usize {
        self.num_data
    }

    /// `M`, the total number of constraints.
    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Side length `D` of the lifted matrix.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn rhs(&self) -> Vec<T> {
        self.constraints.iter().map(|c| c.y).collect()
    }

    /// `{Tr(Q_i X)}_i`.
    pub fn apply(&self, x: &SymMatrix<T>) -> Vec<T> {
        self.constraints.iter().map(|c| c.q.inner(x)).collect()
    }

    /// `max_i |Tr(Q_i X) - y_i|`.
    pub fn max_violation(&self, x: &SymMatrix<T>) -> T {
        self.constraints
            .iter()
            .fold(T::zero(), |m, c| m.max((c.q.inner(x) - c.y).abs()))
    }

    /// Assembles a problem from parts, validating dimensions and ordering.
    pub fn from_parts(
        basis: MonomialBasis,
        constraints: Vec<LiftedConstraint<T>>,
        order: u32,
    ) -> Result<Self> {
        if order < 2 || order % 2 == 1 {
            return Err(Error::OddOrder(order));
        }
        if basis.half_degree() != order / 2 {
            return Err(Error::InvalidInput(format!(
                "basis degree {} does not match order {order}",
                basis.half_degree()
            )));
        }
        let dim = basis.len();
        let mut num_data = 0;
        let mut stage = 0;
        for (i, c) in constraints.iter().enumerate() {
            if c.q.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: c.q.dim() });
            }
            let s = match c.kind {
                ConstraintKind::Data => 0,
                ConstraintKind::Normalization => 1,
                ConstraintKind::Dependency => 2,
            };
            if s < stage || (s == 1 && stage == 1) {
                return Err(Error::InvalidInput(format!("constraint {i} is out of order ({:?})", c.kind)));
            }
            stage = s;
            if s == 0 {
                num_data += 1;
            }
        }
        if !constraints.iter().any(|c| c.kind == ConstraintKind::Normalization) {
            return Err(Error::InvalidInput("missing normalization constraint".into()));
        }
        Ok(Self { num_vars: basis.num_vars(), basis, constraints, order, num_data })
    }
}

/// For each product multi-index, the unordered basis pairs `(i <= j)` whose
/// entries sum to it.
fn pair_table(basis: &MonomialBasis) -> HashMap<MultiIndex, Vec<(usize, usize)>> {
    let entries = basis.entries();
    let mut table: HashMap<MultiIndex, Vec<(usize, usize)>> = HashMap::new();
    for i in 0..entries.len() {
        for j in i..entries.len() {
            table.entry(entries[i].add(&entries[j])).or_default().push((i, j));
        }
    }
    table
}

fn quadratic_form_with_table<T: Scalar>(
    p: &Polynomial<T>,
    basis: &MonomialBasis,
    table: &HashMap<MultiIndex, Vec<(usize, usize)>>,
) -> Result<SymMatrix<T>> {
    if p.num_vars() != basis.num_vars() {
        return Err(Error::DimensionMismatch { expected: basis.num_vars(), found: p.num_vars() });
    }
    let max = 2 * basis.half_degree();
    let mut q = SymMatrix::zeros(basis.len());
    let half = T::lit(0.5);
    for (beta, c) in p.terms() {
        let pairs = table
            .get(beta)
            .filter(|_| beta.degree() <= max)
            .ok_or(Error::DegreeTooHigh { degree: beta.degree(), max })?;
        let share = c / T::from_usize_lossy(pairs.len());
        for &(i, j) in pairs {
            if i == j {
                q.add_sym(i, i, share);
            } else {
                q.add_sym(i, j, share * half);
            }
        }
    }
    Ok(q)
}

/// Symmetric `Q` with `xbar^T Q xbar = p(x)` for every `x`.
///
/// A coefficient is split evenly over all unordered basis pairs whose product
/// is its monomial; an off-diagonal pair receives half the share on each of its
/// two mirrored cells.
pub fn polynomial_to_quadratic_form<T: Scalar>(
    p: &Polynomial<T>,
    basis: &MonomialBasis,
) -> Result<SymMatrix<T>> {
    quadratic_form_with_table(p, basis, &pair_table(basis))
}

/// Normalization constraint followed by the product dependencies of `basis`.
///
/// Walks `i` over all positions and, for each, `l` then `k` over the
/// non-constant positions; whenever `entries[i] = entries[k] + entries[l]` a
/// constraint `xbar(k) xbar(l) - xbar(i) = 0` is emitted. With `dedup` the
/// repeated `(l, k)` twin of an already emitted `(k, l)` is skipped.
pub fn generate_dependency_constraints<T: Scalar>(
    basis: &MonomialBasis,
    dedup: bool,
) -> Vec<LiftedConstraint<T>> {
    let dim = basis.len();
    let entries = basis.entries();
    let half = T::lit(0.5);
    let mut out = Vec::new();

    let mut norm = SymMatrix::zeros(dim);
    norm.set(0, 0, T::one());
    out.push(LiftedConstraint { y: T::one(), q: norm, kind: ConstraintKind::Normalization });

    let mut seen = HashSet::new();
    for i in 0..dim {
        // a product of two non-constant monomials has degree >= 2
        if entries[i].degree() < 2 {
            continue;
        }
        for l in 1..dim {
            for k in 1..dim {
                if !entries[i].is_sum_of(&entries[k], &entries[l]) {
                    continue;
                }
                if dedup && !seen.insert((i, k.min(l), k.max(l))) {
                    continue;
                }
                let mut q = SymMatrix::zeros(dim);
                if k == l {
                    q.set(l, l, T::one());
                } else {
                    q.set(k, l, half);
                }
                q.set(0, i, -half);
                out.push(LiftedConstraint { y: T::zero(), q, kind: ConstraintKind::Dependency });
            }
        }
    }
    out
}

/// Builds the lifted problem with default options (dependencies deduplicated).
pub fn build_lifted_problem<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    order: u32,
) -> Result<LiftedProblem<T>> {
    build_lifted_problem_with(polys, y, order, LiftOptions::default())
}

pub fn build_lifted_problem_with<T: Scalar>(
    polys: &[Polynomial<T>],
    y: &[T],
    order: u32,
    options: LiftOptions,
) -> Result<LiftedProblem<T>> {
    if order < 2 || order % 2 == 1 {
        return Err(Error::OddOrder(order));
    }
    if polys.is_empty() {
        return Err(Error::InvalidInput("need at least one equation".into()));
    }
    if polys.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: polys.len(), found: y.len() });
    }
    let num_vars = polys[0].num_vars();
    let basis = enumerate_basis(num_vars, order / 2);
    let table = pair_table(&basis);
    let mut constraints = Vec::with_capacity(polys.len() + 1);
    for (p, &yi) in polys.iter().zip(y) {
        if !yi.is_finite() {
            return Err(Error::InvalidInput("non-finite measurement".into()));
        }
        let q = quadratic_form_with_table(p, &basis, &table)?;
        constraints.push(LiftedConstraint { y: yi, q, kind: ConstraintKind::Data });
    }
    constraints.extend(generate_dependency_constraints(&basis, options.dedup));
    Ok(LiftedProblem { basis, constraints, num_vars, order, num_data: polys.len() })
}

/// `xbar`: every basis monomial evaluated at `x`.
pub fn lift_vector<T: Scalar>(x: &[T], basis: &MonomialBasis) -> Result<Vec<T>> {
    if x.len() != basis.num_vars() {
        return Err(Error::DimensionMismatch { expected: basis.num_vars(), found: x.len() });
    }
    Ok(basis.entries().iter().map(|a| monomial_unchecked(a, x)).collect())
}

#[derive(Serialize, Deserialize)]
struct TripletRepr<T> {
    row: usize,
    col: usize,
    value: T,
}

#[derive(Serialize, Deserialize)]
struct ConstraintRepr<T> {
    y: T,
    kind: ConstraintKind,
    entries: Vec<TripletRepr<T>>,
}

#[derive(Serialize, Deserialize)]
struct LiftedRepr<T> {
    num_vars: usize,
    q: u32,
    basis: Vec<MultiIndex>,
    constraints: Vec<ConstraintRepr<T>>,
}

impl<T: Scalar + Serialize> Serialize for LiftedProblem<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = LiftedRepr {
            num_vars: self.num_vars,
            q: self.order,
            basis: self.basis.entries().to_vec(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintRepr {
                    y: c.y,
                    kind: c.kind,
                    entries: c
                        .q
                        .upper_triplets()
                        .into_iter()
                        .map(|(row, col, value)| TripletRepr { row, col, value })
                        .collect(),
                })
                .collect(),
        };
        repr.serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for LiftedProblem<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = LiftedRepr::<T>::deserialize(d)?;
        let basis = MonomialBasis::from_entries(repr.basis).map_err(D::Error::custom)?;
        if basis.num_vars() != repr.num_vars {
            return Err(D::Error::custom("num_vars does not match basis entries"));
        }
        let dim = basis.len();
        let mut constraints = Vec::with_capacity(repr.constraints.len());
        for (idx, c) in repr.constraints.into_iter().enumerate() {
            let mut q = SymMatrix::zeros(dim);
            for t in c.entries {
                if t.row > t.col || t.col >= dim {
                    return Err(D::Error::custom(format!(
                        "constraint {idx}: entry ({}, {}) must satisfy row <= col < {dim}",
                        t.row, t.col
                    )));
                }
                q.add_sym(t.row, t.col, t.value);
            }
            constraints.push(LiftedConstraint { y: c.y, q, kind: c.kind });
        }
        LiftedProblem::from_parts(basis, constraints, repr.q).map_err(D::Error::custom)
    }
}

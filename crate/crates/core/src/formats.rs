//! JSON documents exchanged by the command-line tool.
//!
//! * problem: `{num_vars?, q?, polynomials: [...], y: [...], x_true?}`
//! * lifted problem: the serde form of [`LiftedProblem`]
//! * report: solver scalars plus the dense solution matrix `x` (row-major)
//! * solution: the rank-1 extraction result

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{LiftedProblem, SymMatrix};
use crate::monomials::Polynomial;
use crate::recovery::RecoveredSolution;
use crate::sdp_admm::{SolveReport, SolveStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub polynomials: Vec<Polynomial<f64>>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_true: Option<Vec<f64>>,
}

impl ProblemFile {
    pub fn validate(&self) -> Result<()> {
        if self.polynomials.is_empty() {
            return Err(Error::InvalidInput("problem has no polynomials".into()));
        }
        if self.polynomials.len() != self.y.len() {
            return Err(Error::DimensionMismatch { expected: self.polynomials.len(), found: self.y.len() });
        }
        let n = self.polynomials[0].num_vars();
        if let Some(p) = self.polynomials.iter().find(|p| p.num_vars() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: p.num_vars() });
        }
        if let Some(x) = &self.x_true {
            if x.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: x.len() });
            }
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.polynomials.first().map_or(0, |p| p.num_vars())
    }

    /// Smallest even order covering every polynomial, unless `q` is given.
    pub fn order(&self) -> u32 {
        self.q.unwrap_or_else(|| {
            let d = self.polynomials.iter().map(|p| p.degree()).max().unwrap_or(0).max(1);
            d + d % 2
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub status: SolveStatus,
    pub iterations: usize,
    pub lambda: f64,
    pub rho: f64,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub constraint_violation: f64,
    pub min_eigenvalue: f64,
    /// Row-major rows of the solution matrix.
    pub x: Vec<Vec<f64>>,
}

impl ReportFile {
    pub fn from_report(report: &SolveReport<f64>, lambda: f64) -> Self {
        let m = report.x.as_matrix();
        Self {
            status: report.status,
            iterations: report.iterations,
            lambda,
            rho: report.rho,
            objective: report.objective,
            primal_residual: report.primal_residual,
            dual_residual: report.dual_residual,
            primal_tolerance: report.primal_tolerance,
            dual_tolerance: report.dual_tolerance,
            constraint_violation: report.constraint_violation,
            min_eigenvalue: report.min_eigenvalue,
            x: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    /// The solution matrix; errors if it is not square and symmetric.
    pub fn matrix(&self) -> Result<SymMatrix<f64>> {
        let d = self.x.len();
        if let Some(r) = self.x.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: r.len() });
        }
        let m = DMatrix::from_fn(d, d, |i, j| self.x[i][j]);
        let scale = 1.0 + m.amax();
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput("report matrix is not symmetric".into()));
        }
        SymMatrix::symmetrized(&m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub rank1_ratio: f64,
    pub lift_consistency: f64,
    pub valid: bool,
}

impl From<RecoveredSolution<f64>> for SolutionFile {
    fn from(r: RecoveredSolution<f64>) -> Self {
        Self {
            x: r.x,
            x_bar: r.x_bar,
            rank1_ratio: r.rank1_ratio,
            lift_consistency: r.lift_consistency,
            valid: r.valid,
        }
    }
}

/// Parses a JSON document, naming the file and position on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::InvalidInput(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_lifted(path: &Path) -> Result<LiftedProblem<f64>> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monomials::MultiIndex;

    fn problem() -> ProblemFile {
        let p = Polynomial::from_terms(2, [(MultiIndex::new(vec![1, 0]), 1.0), (MultiIndex::new(vec![1, 2]), 2.0)]).unwrap();
        ProblemFile { polynomials: vec![p], y: vec![3.0], q: None, x_true: None }
    }

    #[test]
    fn default_order_is_even_cover() {
        assert_eq!(problem().order(), 4);
        let mut p = problem();
        p.q = Some(2);
        assert_eq!(p.order(), 2);
    }

    #[test]
    fn problem_round_trip_and_validation() {
        let p = problem();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ProblemFile>(&s).unwrap(), p);
        let mut bad = p.clone();
        bad.y.push(1.0);
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ProblemFile>(r#"{"polynomials": [], "y": [], "extra": 1}"#).is_err());
    }

    #[test]
    fn report_matrix_checks_shape() {
        let r = ReportFile {
            status: SolveStatus::Converged,
            iterations: 1,
            lambda: 0.0,
            rho: 1.0,
            objective: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            primal_tolerance: 0.0,
            dual_tolerance: 0.0,
            constraint_violation: 0.0,
            min_eigenvalue: 0.0,
            x: vec![vec![1.0, 2.0], vec![2.0, 4.0]],
        };
        assert_eq!(r.matrix().unwrap().get(0, 1), 2.0);
        let mut bad = r.clone();
        bad.x[1][0] = 0.0;
        assert!(bad.matrix().is_err());
        bad.x = vec![vec![1.0]; 2];
        assert!(bad.matrix().is_err());
    }
}

use thiserror::Error;

/// Errors raised by the lifting, solver, recovery and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("polynomial term of degree {degree} exceeds the representable degree {max}")]
    DegreeTooHigh { degree: u32, max: u32 },

    #[error("expansion order must be even and at least 2, got {0}")]
    OddOrder(u32),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("constraint system is inconsistent (least-squares residual {residual:e})")]
    InconsistentConstraints { residual: f64 },

    #[error("symmetric eigendecomposition failed at iteration {iteration}")]
    Eigen { iteration: usize },

    #[error("top eigenvalue {0:e} is too small to normalize a rank-1 factor")]
    DegenerateTopEigenvalue(f64),

    #[error("leading component of the top eigenvector vanishes; cannot anchor the constant monomial")]
    VanishingConstantComponent,

    #[error("every column of the operator matrix is zero")]
    AllZeroColumns,

    #[error("operator matrix with {rows}x{cols} entries exceeds the cap of {cap} entries")]
    TooLarge { rows: usize, cols: usize, cap: usize },

    #[error("no sparse solution found within the search budget")]
    NotFound,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

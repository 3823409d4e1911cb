use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid species layout: {0}")]
    InvalidLayout(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("overlap component {index} = {value} is outside {range}")]
    OverlapOutOfRange {
        index: usize,
        value: f64,
        range: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configurations belong to different species layouts")]
    LayoutMismatch,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate residual in species block {0}")]
    DegenerateResidual(usize),

    #[error("species block {0} is zero but the target overlap is positive")]
    ZeroBlock(usize),

    #[error("tensor backend needs {required} disorder entries, budget is {budget}")]
    MemoryBudget { required: u128, budget: u128 },

    #[error("operation requires the {0} backend")]
    BackendMismatch(&'static str),

    #[error("covariance matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

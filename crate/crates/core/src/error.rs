use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design is empty")]
    EmptyDesign,

    #[error("degenerate bound in dimension {dim} (lower == upper)")]
    DegenerateBound { dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("convex hull is affinely degenerate")]
    DegenerateHull,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("simulator failed at test {test_id}: {reason}")]
    Simulator { test_id: i64, reason: String },

    #[error("validation gate failed: {0}")]
    GateFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) | Error::Simulator { .. } => 3,
            Error::GateFailed(_) => 4,
            Error::Numerical(_) | Error::DegenerateHull => 5,
            Error::InvalidInput(_)
            | Error::EmptyDesign
            | Error::DegenerateBound { .. }
            | Error::DimensionMismatch { .. } => 3,
        }
    }
}

use thiserror::Error;

/// Constraint that made an allocation problem infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingConstraint {
    /// No grid point of some cluster reaches the minimum worst-case quality.
    WorstQuality,
    /// The best achievable weighted average quality is below the minimum.
    AverageQuality,
}

impl std::fmt::Display for BindingConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::WorstQuality => f.write_str("min_worst_quality"),
            Self::AverageQuality => f.write_str("min_avg_quality"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operating-point grid: {0}")]
    InvalidGrid(String),

    #[error("ingestion error for chunk `{chunk_id}`: {reason}")]
    Ingestion { chunk_id: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("operating point {q} outside grid range [{min}, {max}]")]
    OutOfRange { q: f64, min: f64, max: f64 },

    #[error("operating point {0} is not on the grid")]
    NotOnGrid(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible allocation: {constraint} cannot be met ({detail})")]
    Infeasible {
        constraint: BindingConstraint,
        detail: String,
    },

    #[error("instance too large for exhaustive search: {combinations} combinations")]
    TooLarge { combinations: f64 },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("missing data for chunks: {}", .0.join(", "))]
    MissingChunks(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} outside [1, {n}]")]
    IndexOutOfRange { index: u64, n: u64 },

    #[error("value {value} at index {index} outside (0, 1]")]
    ValueOutOfRange { index: u64, value: f64 },

    #[error("duplicate index {0}")]
    DuplicateIndex(u64),

    #[error("l1 mass {mass} exceeds budget {budget}")]
    BudgetExceeded { mass: f64, budget: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: u64, right: u64 },

    #[error("empty support")]
    EmptySupport,

    #[error("support size {size} exceeds limit {limit}")]
    SupportTooLarge { size: usize, limit: usize },

    #[error("root node has no parent")]
    RootHasNoParent,

    #[error("tree level {0} exceeds the supported maximum")]
    LevelOverflow(u32),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("partition parts overlap: {0}")]
    OverlappingParts(String),

    #[error("inputs are identical; symmetric difference {mean_symmetric_difference} over zero distance")]
    IdenticalInputs { mean_symmetric_difference: f64 },

    #[error("infeasible fractional trace at step {step}: {reason}")]
    InfeasibleTrace { step: usize, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

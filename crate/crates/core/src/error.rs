use thiserror::Error;

/// Errors raised while building, reducing, evaluating or certifying a team.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid team specification: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("noise covariance for {0} is not positive definite")]
    SingularNoise(String),
    #[error("information structure violation: {0}")]
    InformationStructure(String),
    #[error("team is not reducible: {0}")]
    NotReducible(String),
    #[error("density factor overflow: log-value {log_value} exceeds 700")]
    PhiOverflow { log_value: f64 },
    #[error("non-finite cost sampled at index {index}")]
    NonFinite { index: usize },
    #[error("tensor quadrature over {dims} primitive dimensions exceeds the limit of {limit}")]
    DimensionTooLarge { dims: usize, limit: usize },
    #[error("tensor rule needs {nodes} nodes, over the budget of {budget}")]
    NodeBudgetExceeded { nodes: f64, budget: f64 },
    #[error("cost term for decision maker {0} is not a quadratic form in its own action")]
    NonQuadratic(String),
    #[error("cost is not in per-agent structural form: {0}")]
    FormMismatch(String),
    #[error("kernel has no variation-control function")]
    NoVcFunction,
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("infimum of the weight function over the set is not positive")]
    ZeroInfimum,
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("value {0} outside the domain [0, 1]")]
    Domain(f64),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("coefficient grid has {0} points, over the limit of 1e6")]
    GridTooLarge(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

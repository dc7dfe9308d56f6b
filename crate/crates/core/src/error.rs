use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HcrmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid Levy specification: {0}")]
    InvalidSpec(String),

    #[error("exponential-mixture fit not available for a non-gamma base measure")]
    FitNotAvailable,

    #[error("degenerate fit grid: need at least two distinct points, got {0}")]
    DegenerateGrid(usize),

    #[error("exponential-mixture fit failed: max relative residual {residual:.3e} exceeds {tolerance:.3e}")]
    FitFailure { residual: f64, tolerance: f64 },

    #[error("invalid count matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sign anomaly: derivative signs did not cancel ({0})")]
    SignAnomaly(String),

    #[error("state corruption: {0}")]
    StateCorruption(String),

    #[error("unknown dish {0}")]
    UnknownDish(usize),

    #[error("no samples accumulated")]
    NoSamples,

    #[error("token has zero predictive probability (doc {doc}, word {word})")]
    ZeroProbability { doc: usize, word: usize },

    #[error("sample budget error: {0}")]
    Budget(String),

    #[error("truncation root-find did not converge: {0}")]
    Nonconvergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for HcrmError {
    fn from(e: std::io::Error) -> Self {
        HcrmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HcrmError>;

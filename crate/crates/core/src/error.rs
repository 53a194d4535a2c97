use thiserror::Error;

pub type Result<T, E = McteError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McteError {
    #[error("point {q:?} lies outside the surface domain: {reason}")]
    Domain { q: Vec<f64>, reason: String },

    #[error("non-finite value while evaluating {what} at {q:?}")]
    NonFinite { what: &'static str, q: Vec<f64> },

    #[error("intensity beta_{channel} = {value:e} is below the floor; T_{channel} = 1/beta is undefined")]
    DegenerateIntensity { channel: usize, value: f64 },

    #[error("finite-difference cross derivatives disagree: H[{i}][{j}] = {hij:e} vs H[{j}][{i}] = {hji:e}")]
    SymmetryViolation {
        i: usize,
        j: usize,
        hij: f64,
        hji: f64,
    },

    #[error("channel index error: {0}")]
    Index(String),

    #[error("path left the surface domain at parameter {at}")]
    DomainEscape { at: f64 },

    #[error("step size underflow at parameter {at} (h = {h:e})")]
    Stiffness { at: f64, h: f64 },

    #[error("sampler is not mixing: {0}")]
    NonErgodic(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for McteError {
    fn from(e: std::io::Error) -> Self {
        McteError::Io(e.to_string())
    }
}

impl From<csv::Error> for McteError {
    fn from(e: csv::Error) -> Self {
        McteError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for McteError {
    fn from(e: serde_json::Error) -> Self {
        McteError::Config(e.to_string())
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tile grid: {0}")]
    InvalidGrid(String),

    #[error("infeasible quality configuration: {0}")]
    InvalidQuality(String),

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },

    #[error("no SVC can render viewpoint {0}")]
    NoRenderingSvc(String),

    #[error("candidate universe has {size} SVCs, brute force limit is {limit}")]
    UniverseTooLarge { size: usize, limit: usize },

    #[error("value iteration did not converge after {0} sweeps")]
    NonConvergent(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("unknown Hamiltonian family `{0}`")]
    UnknownFamily(String),

    #[error("{family} on {sites} sites takes {expected} parameters, got {found}")]
    ParamCount {
        family: String,
        sites: usize,
        expected: usize,
        found: usize,
    },

    #[error("state has zero norm")]
    DegenerateState,

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("integration diverged at step {step}{}", snapshot.as_ref().map(|s| format!(" (parameters {s})")).unwrap_or_default())]
    Divergence { step: usize, snapshot: Option<String> },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("relative error undefined for a zero reference vector")]
    UndefinedMetric,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("power-law fit failed: {0}")]
    Fit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

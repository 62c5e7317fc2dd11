use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid hand descriptor: {0}")]
    Descriptor(String),

    #[error("energy undefined: {0}")]
    UndefinedEnergy(String),

    #[error("optimization diverged at step {step} (energy {energy})")]
    Diverged { step: usize, energy: f64 },

    #[error("linear program indeterminate: {0}")]
    Indeterminate(String),

    #[error("unsupported schema version {found} (this build reads up to {supported})")]
    SchemaVersion { found: String, supported: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    Domain(&'static str),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("simulation diverged at step {step} (t = {time:.3} s)")]
    Divergence { step: usize, time: f64 },

    #[error("controller fault: {0}")]
    ControllerFault(String),

    #[error("adaptation fault: {0}")]
    AdaptationFault(String),

    /// Training stopped; `last_good` holds the parameters from the last
    /// epoch whose loss was finite.
    #[error("training fault at epoch {epoch}: {reason}")]
    Training {
        epoch: usize,
        reason: String,
        last_good: Option<Box<crate::nnet::Mlp>>,
    },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

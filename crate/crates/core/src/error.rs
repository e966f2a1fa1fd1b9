use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {field}: {message}")]
    Parse { field: &'static str, message: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(
        "degenerate minimum: base loss {loss:e} is below the floor {floor:e}; \
         use the substitute floor policy to measure flatness here"
    )]
    DegenerateMinimum { loss: f64, floor: f64 },

    #[error("exploration phase not detected within {max_steps} steps (last loss {last_loss:e})")]
    PhaseTimeout {
        max_steps: usize,
        last_loss: f64,
        loss_curve: Vec<f64>,
    },

    #[error("assembled Hessian is asymmetric: max |H - H^T| = {asymmetry:e} vs max |H| = {scale:e}")]
    Asymmetry { asymmetry: f64, scale: f64 },

    #[error("integrity failure: {0}")]
    Integrity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown model tag `{0}`")]
    UnknownModel(String),

    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),

    #[error("infeasible configuration (N={n}, C={c}, {kind}): {reason}")]
    Infeasible {
        n: usize,
        c: usize,
        kind: String,
        reason: String,
    },

    #[error("time index {t} outside the supported range 0..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("random regular graph generation failed after {attempts} attempts (N={n}, C={c})")]
    GenerationFailed { n: usize, c: usize, attempts: usize },

    #[error(
        "eigen-solver did not converge after {iterations} iterations \
         (estimate {estimate}, residual {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("path space too large: {states}^{steps} paths exceeds {limit}")]
    PathSpaceTooLarge { states: usize, steps: usize, limit: u64 },

    #[error("model `{0}` has no exact oracle")]
    NoOracle(String),

    #[error("internal fault: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's input rather than by a failure at run time.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::UnknownModel(_)
                | Error::UnknownTestFunction(_)
                | Error::Infeasible { .. }
                | Error::TimeOutOfRange { .. }
                | Error::PathSpaceTooLarge { .. }
                | Error::NoOracle(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

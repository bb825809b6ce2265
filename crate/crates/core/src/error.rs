use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("infeasible action set: budget {budget} outside [0, {max}]")]
    InfeasibleSet { budget: f64, max: f64 },

    #[error("player index {index} out of range for {players} players")]
    PlayerOutOfRange { index: usize, players: usize },

    #[error("schedule violates: {}", .0.join(", "))]
    InvalidSchedule(Vec<String>),

    #[error("unsupported schedule form: {0}")]
    UnsupportedSchedule(String),

    #[error("non-finite payoff for player {player} at iteration {iteration}")]
    NonFinitePayoff { player: usize, iteration: u64 },

    #[error("equilibrium oracle did not converge: residual {residual:e} after {iterations} iterations")]
    OracleNotConverged { residual: f64, iterations: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Rejects NaN and infinities anywhere in `values`.
pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

use thiserror::Error;

use crate::treespace::Mode;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{mode} state space for n = {n} ({predicted} states) is over the configured budget (max n = {max_n})")]
    CapExceeded {
        n: usize,
        mode: Mode,
        predicted: u128,
        max_n: usize,
    },
    #[error("invalid matching: {0}")]
    InvalidInput(String),
    #[error("no adjacent interior pairs exist for n = {0}")]
    DegenerateSize(usize),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("kernel is not reversible (detailed-balance residual {0:e})")]
    NotReversible(f64),
    #[error("coupled state bookkeeping disagrees with recomputation: {0}")]
    InvalidState(String),
    #[error("leaf phase requested while interior label {0} is still unmatched")]
    PhaseError(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] dbgfn_core::Error),
    #[error("reward table covers {present} of {expected} sequences; first missing is {first_missing}")]
    IncompleteTable {
        present: usize,
        expected: usize,
        first_missing: String,
    },
    #[error("line {line}: sequence {sequence} appears more than once")]
    DuplicateSequence { line: u64, sequence: String },
    #[error("line {line}: negative reward {reward}")]
    NegativeReward { line: u64, reward: f64 },
    #[error("line {line}: symbol {symbol:?} in {sequence:?} is not in the alphabet")]
    BadSymbol { line: u64, symbol: char, sequence: String },
    #[error("malformed reward table: {0}")]
    TableFormat(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

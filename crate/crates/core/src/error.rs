use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hour {hour} outside slot range [{first}, {last_exclusive})")]
    HourRange {
        hour: u32,
        first: u32,
        last_exclusive: u32,
    },
    #[error("slot {slot} outside [0, {slots_per_day})")]
    SlotRange { slot: usize, slots_per_day: usize },
    #[error("invalid date: {0}")]
    Date(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}:{line}: duplicate row for {key}")]
    Duplicate {
        path: PathBuf,
        line: u64,
        key: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("MAPE undefined: all {0} targets are zero")]
    MapeUndefined(usize),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("lag {requested} infeasible; feasible lags: {feasible:?}")]
    Lag {
        requested: usize,
        feasible: Vec<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// a failure while computing.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownVariant(_)
                | Error::Date(_)
                | Error::HourRange { .. }
                | Error::Lag { .. }
        )
    }
}

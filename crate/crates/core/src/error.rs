use std::path::PathBuf;

use thiserror::Error;

use crate::cr::BeliefEvent;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expected cycle duration is infinite: p[{index}] = 0")]
    InfiniteDuration { index: usize },

    #[error("belief update after {event:?} has zero total likelihood")]
    DegenerateBelief { event: BeliefEvent },

    #[error("feedback {observed} cannot occur under the {model} feedback model")]
    ImpossibleFeedback {
        observed: &'static str,
        model: &'static str,
    },

    #[error("steady-state solve failed: {0}")]
    SteadyState(String),

    #[error("invariant violated at slot {slot}: {detail}")]
    Invariant { slot: u64, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

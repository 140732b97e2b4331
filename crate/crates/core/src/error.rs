use std::path::PathBuf;

use thiserror::Error;

use crate::context::ContextError;
use crate::expert::ExpertError;
use crate::gateway::GatewayError;
use crate::metrics::MetricError;
use crate::policy::PolicyError;
use crate::psychometric::ModelError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

/// Process exit code for commands that finished with all estimates healthy
/// but some degraded.
pub const EXIT_DEGRADED: i32 = 6;

impl Error {
    /// Process exit code per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Model(_) | Error::Context(_) | Error::Expert(_) | Error::Metric(_) => 3,
            Error::Policy(PolicyError::Gateway(_) | PolicyError::NoValidTrials { .. }) | Error::Gateway(_) => 5,
            Error::Policy(_) => 3,
            Error::Io { .. } | Error::Csv(_) => 4,
        }
    }
}

use thiserror::Error;

use crate::model::{NodeId, ServiceId};
use crate::workflow::FunctionId;

/// Errors raised by the allocation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no service realizes function {0:?}")]
    NoRealizingService(FunctionId),
    #[error("execution plan is incomplete: {0}")]
    IncompletePlan(String),
    #[error("value {value} lies outside extrema [{min}, {max}]")]
    ExtremaMismatch { value: f64, min: f64, max: f64 },
    #[error("missing cost profile for {0}")]
    MissingProfile(String),
    #[error("registry id error: {0}")]
    IdError(ServiceId),
    #[error("capacity ledger underflow on local cloud {0}")]
    LedgerUnderflow(NodeId),
    #[error("unknown local cloud {0}")]
    UnknownCloud(NodeId),
    #[error("no feasible candidates after {expansions} radius expansions")]
    NoFeasibleCandidates { expansions: u32 },
    #[error("enumeration needs {needed} plans, cap is {cap}")]
    TooLargeForEnumeration { needed: u128, cap: u64 },
    #[error("throughput undefined: optimal utility is zero")]
    UndefinedThroughput,
    #[error("gain undefined: public-only baseline is zero")]
    UndefinedGain,
    #[error("scenario error at `{path}`: {message}")]
    Scenario { path: String, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            message: message.into(),
        }
    }
}

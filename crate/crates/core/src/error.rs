use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("policy index {index} out of range (|X| = {len})")]
    PolicyOutOfRange { index: usize, len: usize },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("operation requires voter utilities but the problem only carries a majority override")]
    OverrideOnly,

    #[error("operation requires generic strict preferences: {0}")]
    NotGeneric(String),

    #[error("budget exceeded for {what}: need {needed}, limit {limit}")]
    Budget {
        what: String,
        needed: u128,
        limit: u128,
    },

    #[error("grid genericity could not be restored: player {player} ties policies {a} and {b}")]
    GridTie { player: String, a: usize, b: usize },

    #[error("protocol is not rich at round {round}, default {default}: policy {only_without} only without adjournment, policy {only_with} only with adjournment")]
    NonRich {
        round: usize,
        default: usize,
        only_without: usize,
        only_with: usize,
    },

    #[error("protocol is not rich at round {round}, default {default}: neither the favorite improvement nor its adjourning counterpart is feasible")]
    MissingImprovement { round: usize, default: usize },

    #[error("strategy profile is partial; missing {count} entries, first: {first}")]
    PartialProfile { count: usize, first: String },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

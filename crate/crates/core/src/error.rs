//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A scenario or parameter field failed validation. `field` names the
    /// offending key so CLI diagnostics can point at it.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("unknown agent id {0}")]
    UnknownAgent(usize),

    #[error("snapshot contains no agents")]
    EmptySnapshot,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("time {t} outside arc domain [{start}, {end}]")]
    OutsideArc { t: f64, start: f64, end: f64 },

    #[error("arc duration must be positive, got {0}")]
    NonPositiveDuration(f64),

    #[error("trajectories must cover the same horizon: {detail}")]
    MismatchedHorizons { detail: String },

    #[error("contact basis undefined: {0}")]
    BasisUndefined(String),

    #[error("series of length {len} too short, need at least {need}")]
    SeriesTooShort { len: usize, need: usize },

    #[error("constrained-arc entry violates safety: pair ({i}, {j}) at distance {dist} < {limit}")]
    EntryViolation { i: usize, j: usize, dist: f64, limit: f64 },

    #[error("trajectory is not contiguous: {detail}")]
    BrokenTrajectory { detail: String },

    #[error(
        "could not place {placed} of {requested} agents after {attempts} attempts; \
         domain too dense for the requested separation"
    )]
    PlacementExhausted { placed: usize, requested: usize, attempts: usize },

    #[error("scenario error in `{key}`: {message}")]
    Scenario { key: String, message: String },

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam { field: field.to_string(), reason: reason.into() }
    }

    pub fn scenario(key: &str, message: impl Into<String>) -> Self {
        Error::Scenario { key: key.to_string(), message: message.into() }
    }
}

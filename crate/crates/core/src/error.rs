use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why a trajectory was rejected as singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SingularKind {
    /// Contact with (nearly) vanishing normal relative speed.
    Graze,
    /// Two distinct events closer in time than `eps_time`.
    NearMultiple,
    /// More than `max_events` events on one trajectory.
    EventCap,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid collision: {0}")]
    InvalidCollision(String),
    #[error("singular sample ({0:?})")]
    SingularSample(SingularKind),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("tree enumeration of {count} entries exceeds cap {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },
    #[error("line n+1 carries nodes (ell = {ell}, m = {m})")]
    NotTrivialLine { ell: usize, m: usize },
    #[error("invalid attachment k = {k}, i = {i}: {reason}")]
    InvalidAttachment { k: usize, i: usize, reason: String },
    #[error("invalid node variables: {0}")]
    InvalidNodeVars(String),
    #[error("cancellation partner construction failed: {0}")]
    PartnerConstructionFailed(String),
    #[error("completion rejection rate {rate:.4} exceeds 0.99")]
    PackingTooTight { rate: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

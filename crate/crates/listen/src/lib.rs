//! Listening-test service: builds same/different sessions from a corpus
//! manifest, serves audio through opaque tokens, records answers in an
//! append-only log and reports detection error rates.
//!
//! Nothing a listener can fetch before finalizing names a speaker or an
//! utterance, or says whether a trial is a target.

mod api;
mod service;
mod session;

use thiserror::Error;

pub use api::{router, serve, AnswerBody, Judgement};
pub use service::{aggregate_der, AnswerAck, DerView, ListenService, SessionCreated, SessionReport, TrialOutcome, TrialView};
pub use session::{build_trials, Protocol, SessionConfig};

#[derive(Debug, Error)]
pub enum ListenError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("trial {index} out of range (session has {len})")]
    UnknownTrial { index: usize, len: usize },
    #[error("unknown audio token")]
    UnknownToken,
    #[error("trial {0} is already answered")]
    Duplicate(usize),
    #[error("{0}")]
    Conflict(String),
    #[error("session incomplete: {0}")]
    Incomplete(String),
    #[error("session is not finalized")]
    NotFinalized,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("corpus cannot support this protocol: {0}")]
    InsufficientCorpus(String),
    #[error("session log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use std::io;

use thiserror::Error;

use crate::population::{IdentityId, Session};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate sample for identity {id} in session {session}")]
    DuplicateSample { id: IdentityId, session: Session },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("identity {0} is already enrolled")]
    AlreadyEnrolled(IdentityId),

    #[error("unknown identity {0}")]
    UnknownIdentity(IdentityId),

    #[error("key error: {0}")]
    Key(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

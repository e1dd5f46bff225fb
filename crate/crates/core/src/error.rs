use thiserror::Error;

use crate::types::{InstanceId, Round, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("invalid {what}: {text:?}")]
    Field { what: &'static str, text: String },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<ParseError>,
    },
    #[error("missing field {0}")]
    Missing(&'static str),
    #[error("unknown record kind {0:?}")]
    UnknownRecord(String),
}

impl ParseError {
    pub fn field(what: &'static str, text: &str) -> Self {
        ParseError::Field {
            what,
            text: text.to_string(),
        }
    }

    pub fn at_line(self, line: usize) -> Self {
        ParseError::Line {
            line,
            source: Box::new(self),
        }
    }
}

/// Raised when the protocol's own assertions fail. Any occurrence is a
/// safety bug, never an expected outcome.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("instance {instance}: conflicting values {a} and {b} reported at round {round}")]
    ConflictingAccepted {
        instance: InstanceId,
        round: Round,
        a: Value,
        b: Value,
    },
    #[error("instance {instance}: round {round} already accepted {accepted}, received {received}")]
    RoundValueChanged {
        instance: InstanceId,
        round: Round,
        accepted: Value,
        received: Value,
    },
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MembershipError {
    #[error("only {alive} acceptors alive, a ring needs {needed}")]
    NoMajority { alive: usize, needed: usize },
    #[error("leader {0} is not alive")]
    LeaderDown(crate::types::NodeId),
    #[error("dynamic ring exhausted at distance {0}")]
    RingExhausted(u32),
}

//! Ring-based Paxos with id-only consensus, IP-multicast request
//! dissemination, batching, pipelining and an optional dynamic ring,
//! together with a deterministic network simulator to run it on.

pub mod error;
pub mod harness;
pub mod membership;
pub mod metrics;
pub mod protocol;
pub mod simnet;
pub mod storage;
pub mod types;

pub use error::{MembershipError, ParseError, ProtocolError, StorageError};
pub use types::*;

//! Domain values shared by every layer: identifiers, consensus values,
//! rounds, wire messages and their byte accounting.

use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::error::ParseError;

/// Flat per-message overhead charged to every wire message, covering
/// framing, network headers and the protocol's control fields.
pub const MESSAGE_OVERHEAD: u64 = 128;

/// Logical simulation time.
pub type Tick = u64;

/// Consensus instance number. Instances start at 1.
pub type InstanceId = u64;

/// Identifier of a LAN segment.
pub type LanId = u32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<u32>()
            .map(NodeId)
            .map_err(|_| ParseError::field("node", s))
    }
}

/// Globally unique request identifier. Ordered lexicographically by
/// `(client_id, client_seq)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId {
    pub client_id: u32,
    pub client_seq: u64,
}

impl RequestId {
    pub fn new(client_id: u32, client_seq: u64) -> Self {
        RequestId {
            client_id,
            client_seq,
        }
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}.{}", self.client_id, self.client_seq)
    }
}

impl FromStr for RequestId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .strip_prefix('r')
            .and_then(|rest| rest.split_once('.'))
            .ok_or_else(|| ParseError::field("request id", s))?;
        Ok(RequestId {
            client_id: a.parse().map_err(|_| ParseError::field("request id", s))?,
            client_seq: b.parse().map_err(|_| ParseError::field("request id", s))?,
        })
    }
}

/// Per-client id generator.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: u32,
    pub last_seq: u64,
}

impl ClientState {
    pub fn new(client_id: u32) -> Self {
        ClientState {
            client_id,
            last_seq: 0,
        }
    }

    pub fn fresh_request_id(&mut self) -> RequestId {
        self.last_seq += 1;
        RequestId::new(self.client_id, self.last_seq)
    }
}

/// A client proposal. The payload is opaque; only its length matters to
/// the simulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub id: RequestId,
    pub payload: Bytes,
    pub origin_coordinator: Option<NodeId>,
}

impl Request {
    pub fn new(id: RequestId, payload: impl Into<Bytes>) -> Self {
        Request {
            id,
            payload: payload.into(),
            origin_coordinator: None,
        }
    }

    pub fn payload_len(&self) -> u64 {
        self.payload.len() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BatchId {
    pub broadcaster: NodeId,
    pub batch_seq: u64,
}

impl fmt::Display for BatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}.{}", self.broadcaster, self.batch_seq)
    }
}

impl FromStr for BatchId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .strip_prefix('b')
            .and_then(|rest| rest.split_once('.'))
            .ok_or_else(|| ParseError::field("batch id", s))?;
        Ok(BatchId {
            broadcaster: a.parse()?,
            batch_seq: b.parse().map_err(|_| ParseError::field("batch id", s))?,
        })
    }
}

/// A sealed group of requests ordered under a single batch id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub id: BatchId,
    pub requests: Vec<Request>,
}

impl Batch {
    pub fn members(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.requests.iter().map(|r| r.id)
    }

    pub fn payload_len(&self) -> u64 {
        self.requests.iter().map(Request::payload_len).sum()
    }
}

/// The unit consensus is reached on: a request id, a batch id, or the
/// null no-op used to fill recovered instances that have nothing to carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Null,
    Request(RequestId),
    Batch(BatchId),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Request(id) => id.fmt(f),
            Value::Batch(id) => id.fmt(f),
        }
    }
}

impl FromStr for Value {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.as_bytes().first() {
            _ if s == "null" => Ok(Value::Null),
            Some(b'r') => s.parse().map(Value::Request),
            Some(b'b') => s.parse().map(Value::Batch),
            _ => Err(ParseError::field("value", s)),
        }
    }
}

/// A leader sequence number: a totally ordered round tagged with the node
/// that was elected with it. `Option<Round>` is used wherever the round may
/// be null; `None` orders below every concrete round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Round {
    pub seq: u64,
    pub node: NodeId,
}

impl Round {
    pub fn new(seq: u64, node: NodeId) -> Self {
        Round { seq, node }
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.seq, self.node)
    }
}

impl FromStr for Round {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('.')
            .ok_or_else(|| ParseError::field("round", s))?;
        Ok(Round {
            seq: a.parse().map_err(|_| ParseError::field("round", s))?,
            node: b.parse()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Request,
    Phase1a,
    Phase1b,
    Phase2a,
    Phase2a2b,
    Phase2b,
    Learned,
    Denial,
    IdQuery,
    IdReply,
    Ack,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Request,
        MessageKind::Phase1a,
        MessageKind::Phase1b,
        MessageKind::Phase2a,
        MessageKind::Phase2a2b,
        MessageKind::Phase2b,
        MessageKind::Learned,
        MessageKind::Denial,
        MessageKind::IdQuery,
        MessageKind::IdReply,
        MessageKind::Ack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Request => "REQUEST",
            MessageKind::Phase1a => "PHASE1A",
            MessageKind::Phase1b => "PHASE1B",
            MessageKind::Phase2a => "PHASE2A",
            MessageKind::Phase2a2b => "PHASE2A2B",
            MessageKind::Phase2b => "PHASE2B",
            MessageKind::Learned => "LEARNED",
            MessageKind::Denial => "DENIAL",
            MessageKind::IdQuery => "ID_QUERY",
            MessageKind::IdReply => "ID_REPLY",
            MessageKind::Ack => "ACK",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ParseError::field("message kind", s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transport {
    Unicast(NodeId),
    Multicast(LanId),
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::Unicast(n) => write!(f, "u:{n}"),
            Transport::Multicast(l) => write!(f, "m:{l}"),
        }
    }
}

impl FromStr for Transport {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(n) = s.strip_prefix("u:") {
            return n.parse().map(Transport::Unicast);
        }
        if let Some(l) = s.strip_prefix("m:") {
            return l
                .parse()
                .map(Transport::Multicast)
                .map_err(|_| ParseError::field("transport", s));
        }
        Err(ParseError::field("transport", s))
    }
}

/// Request dissemination payload: either a single request or a sealed
/// batch of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Request(Request),
    Batch(Batch),
}

impl Payload {
    pub fn len(&self) -> u64 {
        match self {
            Payload::Request(r) => r.payload_len(),
            Payload::Batch(b) => b.payload_len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Value {
        match self {
            Payload::Request(r) => Value::Request(r.id),
            Payload::Batch(b) => Value::Batch(b.id),
        }
    }
}

/// Typed message body. Consensus bodies carry ids only, never payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Request(Payload),
    Phase1a {
        round: Round,
        instance: InstanceId,
    },
    Phase1b {
        round: Round,
        instance: InstanceId,
        vrnd: Option<Round>,
        vval: Option<Value>,
    },
    Phase2a {
        round: Round,
        instance: InstanceId,
        value: Value,
    },
    Phase2a2b {
        round: Round,
        instance: InstanceId,
        value: Value,
        sn: u32,
    },
    Phase2b {
        round: Round,
        instance: InstanceId,
        value: Value,
    },
    Learned {
        instance: InstanceId,
        value: Value,
    },
    Denial {
        round: Round,
        instance: InstanceId,
    },
    /// Payload fetch for a learned value; with `value` absent it asks for
    /// whatever was learned at `instance` (learner catch-up).
    IdQuery {
        value: Option<Value>,
        instance: Option<InstanceId>,
    },
    IdReply {
        id: RequestId,
    },
    Ack {
        round: Round,
        instance: InstanceId,
        kind: MessageKind,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub sender: NodeId,
    pub transport: Transport,
    pub body: Body,
}

impl Message {
    pub fn unicast(sender: NodeId, to: NodeId, body: Body) -> Self {
        Message {
            sender,
            transport: Transport::Unicast(to),
            body,
        }
    }

    pub fn multicast(sender: NodeId, lan: LanId, body: Body) -> Self {
        Message {
            sender,
            transport: Transport::Multicast(lan),
            body,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match &self.body {
            Body::Request(_) => MessageKind::Request,
            Body::Phase1a { .. } => MessageKind::Phase1a,
            Body::Phase1b { .. } => MessageKind::Phase1b,
            Body::Phase2a { .. } => MessageKind::Phase2a,
            Body::Phase2a2b { .. } => MessageKind::Phase2a2b,
            Body::Phase2b { .. } => MessageKind::Phase2b,
            Body::Learned { .. } => MessageKind::Learned,
            Body::Denial { .. } => MessageKind::Denial,
            Body::IdQuery { .. } => MessageKind::IdQuery,
            Body::IdReply { .. } => MessageKind::IdReply,
            Body::Ack { .. } => MessageKind::Ack,
        }
    }

    pub fn instance(&self) -> Option<InstanceId> {
        match &self.body {
            Body::Phase1a { instance, .. }
            | Body::Phase1b { instance, .. }
            | Body::Phase2a { instance, .. }
            | Body::Phase2a2b { instance, .. }
            | Body::Phase2b { instance, .. }
            | Body::Learned { instance, .. }
            | Body::Denial { instance, .. }
            | Body::Ack { instance, .. } => Some(*instance),
            Body::IdQuery { instance, .. } => *instance,
            Body::Request(_) | Body::IdReply { .. } => None,
        }
    }

    pub fn round(&self) -> Option<Round> {
        match &self.body {
            Body::Phase1a { round, .. }
            | Body::Phase1b { round, .. }
            | Body::Phase2a { round, .. }
            | Body::Phase2a2b { round, .. }
            | Body::Phase2b { round, .. }
            | Body::Denial { round, .. }
            | Body::Ack { round, .. } => Some(*round),
            _ => None,
        }
    }

    pub fn sn(&self) -> Option<u32> {
        match &self.body {
            Body::Phase2a2b { sn, .. } => Some(*sn),
            _ => None,
        }
    }

    pub fn value(&self) -> Option<Value> {
        match &self.body {
            Body::Request(p) => Some(p.value()),
            Body::Phase1b { vval, .. } => *vval,
            Body::Phase2a { value, .. }
            | Body::Phase2a2b { value, .. }
            | Body::Phase2b { value, .. }
            | Body::Learned { value, .. } => Some(*value),
            Body::IdQuery { value, .. } => *value,
            Body::IdReply { id } => Some(Value::Request(*id)),
            _ => None,
        }
    }

    /// The accepted round reported in a PHASE 1B reply.
    pub fn vrnd(&self) -> Option<Round> {
        match &self.body {
            Body::Phase1b { vrnd, .. } => *vrnd,
            _ => None,
        }
    }

    pub fn payload(&self) -> Option<&Payload> {
        match &self.body {
            Body::Request(p) => Some(p),
            _ => None,
        }
    }

    pub fn payload_size(&self) -> u64 {
        self.payload().map_or(0, Payload::len)
    }
}

/// Bytes charged on the wire for one message.
pub fn encoded_size(message: &Message) -> u64 {
    MESSAGE_OVERHEAD + message.payload_size()
}

/// Bytes charged when several messages are clubbed into one multicast:
/// the overhead is paid once.
pub fn clubbed_size<'a>(messages: impl IntoIterator<Item = &'a Message>) -> u64 {
    MESSAGE_OVERHEAD + messages.into_iter().map(Message::payload_size).sum::<u64>()
}

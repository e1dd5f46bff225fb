//! Commit-path hop counting from trace causality.
//!
//! Every send records the message whose delivery (or timer) triggered it.
//! Walking those links back from a delivery to the client's REQUEST yields
//! the causal chain of wire messages; its length is the hop count.

use std::collections::HashMap;

use super::trace::{Event, MessageSummary, TraceRecord};
use crate::types::{InstanceId, MessageKind, NodeId, RequestId, Tick, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hop {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub tick: Tick,
}

/// The chain behind one delivery, client REQUEST first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopRecord {
    pub hops: Vec<Hop>,
}

impl HopRecord {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

struct SendInfo<'a> {
    cause: Option<u64>,
    msg: &'a MessageSummary,
    tick: Tick,
}

pub struct HopIndex<'a> {
    sends: HashMap<u64, SendInfo<'a>>,
    records: &'a [TraceRecord],
    clients: Vec<NodeId>,
}

impl<'a> HopIndex<'a> {
    pub fn new(records: &'a [TraceRecord]) -> Self {
        let mut sends = HashMap::new();
        let mut clients = Vec::new();
        for r in records {
            match &r.event {
                Event::Send { mid, cause, msg, .. } => {
                    sends.insert(
                        *mid,
                        SendInfo {
                            cause: *cause,
                            msg,
                            tick: r.tick,
                        },
                    );
                }
                Event::Submit { client, .. } if !clients.contains(client) => clients.push(*client),
                _ => {}
            }
        }
        HopIndex {
            sends,
            records,
            clients,
        }
    }

    /// Chain ending with delivery of `mid` to `receiver` at `tick`.
    /// `None` if the chain does not reach a client REQUEST.
    fn chain(&self, mid: u64, receiver: NodeId, tick: Tick) -> Option<HopRecord> {
        let mut hops = Vec::new();
        let mut cur = Some((mid, receiver, tick));
        while let Some((m, to, at)) = cur {
            let s = self.sends.get(&m)?;
            hops.push(Hop {
                kind: s.msg.kind,
                sender: s.msg.sender,
                receiver: to,
                tick: at,
            });
            if s.msg.kind == MessageKind::Request && self.clients.contains(&s.msg.sender) {
                hops.reverse();
                return Some(HopRecord { hops });
            }
            cur = s.cause.map(|c| (c, s.msg.sender, s.tick));
        }
        None
    }

    /// Latency: chain to the first LEARNED for `instance` delivered at
    /// `node`.
    pub fn latency(&self, instance: InstanceId, node: NodeId) -> Option<HopRecord> {
        self.records.iter().find_map(|r| match &r.event {
            Event::Recv {
                mid,
                to,
                kind: MessageKind::Learned,
                ..
            } if *to == node => {
                let s = self.sends.get(mid)?;
                (s.msg.instance == Some(instance))
                    .then(|| self.chain(*mid, node, r.tick))
                    .flatten()
            }
            _ => None,
        })
    }

    /// Latency at the first learner, other than `exclude`, to receive the
    /// LEARNED for `instance`.
    pub fn first_latency(&self, instance: InstanceId, exclude: Option<NodeId>) -> Option<HopRecord> {
        self.records.iter().find_map(|r| match &r.event {
            Event::Recv {
                mid,
                to,
                kind: MessageKind::Learned,
                ..
            } if Some(*to) != exclude => {
                let s = self.sends.get(mid)?;
                (s.msg.instance == Some(instance))
                    .then(|| self.chain(*mid, *to, r.tick))
                    .flatten()
            }
            _ => None,
        })
    }

    /// Response time: chain to the first ID_REPLY for `id` at its client.
    pub fn response(&self, id: RequestId) -> Option<HopRecord> {
        self.records.iter().find_map(|r| match &r.event {
            Event::Recv {
                mid,
                to,
                kind: MessageKind::IdReply,
                ..
            } => {
                let s = self.sends.get(mid)?;
                (s.msg.value == Some(Value::Request(id)))
                    .then(|| self.chain(*mid, *to, r.tick))
                    .flatten()
            }
            _ => None,
        })
    }
}

/// Hops from a client REQUEST to the first LEARNED for `instance` at `node`.
pub fn measure_commit_hops(
    records: &[TraceRecord],
    instance: InstanceId,
    node: NodeId,
) -> Option<usize> {
    HopIndex::new(records).latency(instance, node).map(|h| h.len())
}

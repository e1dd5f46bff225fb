//! Per-node message and byte accounting over traces, plus analytic leader
//! costs for classical Paxos and Ring Paxos.
//!
//! A multicast is charged once at the sender and once per delivery.
//!
//! Baseline derivations, per decided request without batching, with the
//! flat 128-byte overhead `h` and payload `B`:
//!
//! * classical: REQUEST in (h+B), PHASE 2A to each of `m` acceptors with the
//!   value (m(h+B)), PHASE 2B from each (m·h), reply out (h).
//!   Messages `2 + 2m`, bytes `(h+B) + m(h+B) + m·h + h`.
//! * Ring Paxos: REQUEST in (h+B), PHASE 2A multicast carrying the value
//!   (h+B), ring PHASE 2B in (h), decision multicast (h), reply out (h).
//!   Messages 5, bytes `5h + 2B`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::simnet::trace::{Event, TraceRecord};
use crate::types::{MessageKind, NodeId, MESSAGE_OVERHEAD};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub msgs_in: u64,
    pub msgs_out: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl Counts {
    pub fn msgs(&self) -> u64 {
        self.msgs_in + self.msgs_out
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeLoad {
    pub node: NodeId,
    pub total: Counts,
    pub per_kind: BTreeMap<MessageKind, Counts>,
}

impl NodeLoad {
    fn new(node: NodeId) -> Self {
        NodeLoad {
            node,
            ..Default::default()
        }
    }

    /// Load with request dissemination (REQUEST messages) removed: what
    /// remains is consensus, learning and reply traffic.
    pub fn without_dissemination(&self) -> Counts {
        let mut c = self.total;
        if let Some(r) = self.per_kind.get(&MessageKind::Request) {
            c.msgs_in -= r.msgs_in;
            c.msgs_out -= r.msgs_out;
            c.bytes_in -= r.bytes_in;
            c.bytes_out -= r.bytes_out;
        }
        c
    }
}

pub fn aggregate(records: &[TraceRecord]) -> BTreeMap<NodeId, NodeLoad> {
    let mut loads: BTreeMap<NodeId, NodeLoad> = BTreeMap::new();
    for r in records {
        match &r.event {
            Event::Send { msg, bytes, .. } => {
                let l = loads
                    .entry(msg.sender)
                    .or_insert_with(|| NodeLoad::new(msg.sender));
                l.total.msgs_out += 1;
                l.total.bytes_out += bytes;
                let k = l.per_kind.entry(msg.kind).or_default();
                k.msgs_out += 1;
                k.bytes_out += bytes;
            }
            Event::Recv {
                to, kind, bytes, ..
            } => {
                let l = loads.entry(*to).or_insert_with(|| NodeLoad::new(*to));
                l.total.msgs_in += 1;
                l.total.bytes_in += bytes;
                let k = l.per_kind.entry(*kind).or_default();
                k.msgs_in += 1;
                k.bytes_in += bytes;
            }
            _ => {}
        }
    }
    loads
}

/// Node with the most messages in and out; ties go to more bytes, then to
/// the lower id.
pub fn busiest_node(loads: &BTreeMap<NodeId, NodeLoad>) -> Option<(NodeId, u64, u64)> {
    loads
        .values()
        .map(|l| (l.node, l.total.msgs(), l.total.bytes()))
        .max_by(|a, b| (a.1, a.2).cmp(&(b.1, b.2)).then(b.0.cmp(&a.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Classical,
    Ring,
}

/// Leader `(messages, bytes)` for `r` requests, `m` acceptors and payload
/// `b` bytes.
pub fn baseline_leader_cost(variant: Baseline, r: u64, m: u64, b: u64) -> (u64, u64) {
    let h = MESSAGE_OVERHEAD;
    match variant {
        Baseline::Classical => (r * (2 + 2 * m), r * ((h + b) + m * (h + b) + m * h + h)),
        Baseline::Ring => (r * 5, r * (5 * h + 2 * b)),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub busiest: Option<(NodeId, u64, u64)>,
    pub latency_hops: Option<usize>,
    pub response_hops: Option<usize>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub const CSV_HEADER: &str =
    "run_id,row,node,msgs_in,msgs_out,bytes_in,bytes_out,latency_hops,response_hops";

/// Rows for one run: one per node, then a summary row naming the busiest
/// node with its totals.
pub fn csv_rows(run_id: &str, loads: &BTreeMap<NodeId, NodeLoad>, summary: &RunSummary) -> String {
    let mut s = String::new();
    for l in loads.values() {
        let c = l.total;
        writeln!(
            s,
            "{run_id},node,{},{},{},{},{},,",
            l.node, c.msgs_in, c.msgs_out, c.bytes_in, c.bytes_out
        )
        .unwrap();
    }
    let (node, busy) = match summary.busiest {
        Some((n, _, _)) => (n.to_string(), loads.get(&n).map(|l| l.total)),
        None => (String::new(), None),
    };
    let c = busy.unwrap_or_default();
    writeln!(
        s,
        "{run_id},summary,{node},{},{},{},{},{},{}",
        c.msgs_in,
        c.msgs_out,
        c.bytes_in,
        c.bytes_out,
        opt(summary.latency_hops),
        opt(summary.response_hops)
    )
    .unwrap();
    s
}

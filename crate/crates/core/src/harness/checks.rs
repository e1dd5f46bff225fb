//! Trace checkers. Everything here reads only the trace, so a saved
//! `trace.log` can be re-checked offline.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::simnet::trace::{Event, TraceRecord};
use crate::storage::RecordKind;
use crate::types::{InstanceId, MessageKind, NodeId, RequestId, Round, Value, MESSAGE_OVERHEAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    /// Only submitted requests, or batches of them, are decided and executed.
    Nontriviality,
    /// One value per instance and a common execution order.
    Consistency,
    /// Instances execute gaplessly and in order.
    InOrder,
    /// No request executes twice within one incarnation.
    AtMostOnce,
    /// A PHASE 2A/2A2B/2B leaves only after the matching state is stable.
    PersistBeforeSend,
    /// An acceptor never stores two values for one round.
    SingleAccept,
    /// Deliveries match sends and sizes match the encoding.
    Accounting,
    /// A site reported an internal invariant failure.
    Assertion,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Nontriviality,
        Check::Consistency,
        Check::InOrder,
        Check::AtMostOnce,
        Check::PersistBeforeSend,
        Check::SingleAccept,
        Check::Accounting,
        Check::Assertion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Nontriviality => "nontriviality",
            Check::Consistency => "consistency",
            Check::InOrder => "in-order",
            Check::AtMostOnce => "at-most-once",
            Check::PersistBeforeSend => "persist-before-send",
            Check::SingleAccept => "single-accept",
            Check::Accounting => "accounting",
            Check::Assertion => "assertion",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub check: Check,
    /// 1-based trace line.
    pub line: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.check, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn holds(&self, check: Check) -> bool {
        self.violations.iter().all(|v| v.check != check)
    }

    pub fn first(&self, check: Check) -> Option<&Violation> {
        self.violations.iter().find(|v| v.check == check)
    }
}

#[derive(Default)]
struct Exec {
    next: u64,
    seen: HashSet<RequestId>,
    order: Vec<(RequestId, usize)>,
}

/// Run every safety check over `records`.
pub fn check_safety(records: &[TraceRecord]) -> Verdict {
    let mut out = Vec::new();
    let mut bad = |check, idx: usize, detail: String| {
        out.push(Violation {
            check,
            line: idx + 1,
            detail,
        })
    };

    let mut submitted: HashSet<RequestId> = HashSet::new();
    let mut proposed_batches: HashSet<Value> = HashSet::new();
    let mut decided: HashMap<InstanceId, (Value, usize)> = HashMap::new();
    let mut execs: BTreeMap<(NodeId, u32), Exec> = BTreeMap::new();
    let mut coord: HashSet<(NodeId, InstanceId, Round, Value)> = HashSet::new();
    let mut accepted: HashSet<(NodeId, InstanceId, Round, Value)> = HashSet::new();
    let mut per_round: HashMap<(NodeId, InstanceId, Round), Value> = HashMap::new();
    let mut sends: HashMap<u64, u64> = HashMap::new();

    for (idx, r) in records.iter().enumerate() {
        match &r.event {
            Event::Submit { id, .. } => {
                submitted.insert(*id);
            }
            Event::Send { mid, msg, bytes, .. } => {
                sends.insert(*mid, *bytes);
                if *bytes != MESSAGE_OVERHEAD + msg.psize {
                    bad(
                        Check::Accounting,
                        idx,
                        format!("mid {mid} is {bytes} bytes for payload {}", msg.psize),
                    );
                }
                let key = || {
                    Some((msg.sender, msg.instance?, msg.round?, msg.value?))
                };
                match msg.kind {
                    MessageKind::Request => {
                        if let Some(v @ Value::Batch(_)) = msg.value {
                            proposed_batches.insert(v);
                        }
                    }
                    MessageKind::Phase2a => match key() {
                        Some(k) if coord.contains(&k) => {}
                        _ => bad(
                            Check::PersistBeforeSend,
                            idx,
                            format!("{} by {} before its coordinator record", msg.kind, msg.sender),
                        ),
                    },
                    MessageKind::Phase2a2b | MessageKind::Phase2b => match key() {
                        Some(k) if accepted.contains(&k) => {}
                        _ => bad(
                            Check::PersistBeforeSend,
                            idx,
                            format!("{} by {} before its acceptor record", msg.kind, msg.sender),
                        ),
                    },
                    MessageKind::Learned => {
                        if let (Some(i), Some(v)) = (msg.instance, msg.value) {
                            decide(&mut decided, i, v, idx, &mut bad);
                        }
                    }
                    _ => {}
                }
            }
            Event::Recv { mid, to, bytes, .. } => match sends.get(mid) {
                None => bad(Check::Accounting, idx, format!("mid {mid} delivered to {to} but never sent")),
                Some(b) if b != bytes => bad(
                    Check::Accounting,
                    idx,
                    format!("mid {mid} sent as {b} bytes, delivered as {bytes}"),
                ),
                _ => {}
            },
            Event::Persist { node, record } => match record {
                RecordKind::Coordinator {
                    instance,
                    crnd: Some(c),
                    cval: Some(v),
                } => {
                    coord.insert((*node, *instance, *c, *v));
                }
                RecordKind::Acceptor {
                    instance,
                    vrnd: Some(vr),
                    vval: Some(v),
                    ..
                } => {
                    accepted.insert((*node, *instance, *vr, *v));
                    if let Some(prev) = per_round.insert((*node, *instance, *vr), *v) {
                        if prev != *v {
                            bad(
                                Check::SingleAccept,
                                idx,
                                format!("{node} accepted {prev} then {v} in instance {instance} round {vr}"),
                            );
                        }
                    }
                }
                _ => {}
            },
            Event::Exec {
                node,
                inc,
                instance,
                value,
                reqs,
            } => {
                decide(&mut decided, *instance, *value, idx, &mut bad);
                match value {
                    Value::Request(id) if !submitted.contains(id) => bad(
                        Check::Nontriviality,
                        idx,
                        format!("{node} executed {id}, never submitted"),
                    ),
                    Value::Batch(_) if !proposed_batches.contains(value) => bad(
                        Check::Nontriviality,
                        idx,
                        format!("{node} executed batch {value}, never disseminated"),
                    ),
                    _ => {}
                }
                let e = execs.entry((*node, *inc)).or_default();
                if *instance != e.next + 1 {
                    bad(
                        Check::InOrder,
                        idx,
                        format!("{node} executed instance {instance} after {}", e.next),
                    );
                }
                e.next = e.next.max(*instance);
                for id in reqs {
                    if !submitted.contains(id) {
                        bad(Check::Nontriviality, idx, format!("{node} executed {id}, never submitted"));
                    }
                    if !e.seen.insert(*id) {
                        bad(Check::AtMostOnce, idx, format!("{node} executed {id} twice"));
                    }
                    e.order.push((*id, idx));
                }
            }
            Event::ProtocolError { node, detail } => {
                bad(Check::Assertion, idx, format!("{node}: {detail}"));
            }
            _ => {}
        }
    }

    // Every execution sequence must be a prefix of the longest one.
    if let Some(reference) = execs.values().max_by_key(|e| e.order.len()) {
        let reference: Vec<RequestId> = reference.order.iter().map(|(id, _)| *id).collect();
        for ((node, inc), e) in &execs {
            if let Some((k, (id, idx))) = e
                .order
                .iter()
                .enumerate()
                .find(|(k, (id, _))| reference[*k] != *id)
            {
                bad(
                    Check::Consistency,
                    *idx,
                    format!(
                        "{node} (incarnation {inc}) executed {id} at position {k}, others executed {}",
                        reference[k]
                    ),
                );
            }
        }
    }

    out.sort_by_key(|v| v.line);
    Verdict { violations: out }
}

fn decide(
    decided: &mut HashMap<InstanceId, (Value, usize)>,
    instance: InstanceId,
    value: Value,
    idx: usize,
    bad: &mut impl FnMut(Check, usize, String),
) {
    match decided.get(&instance) {
        Some((v, first)) if *v != value => bad(
            Check::Consistency,
            idx,
            format!("instance {instance} decided {value}, line {} decided {v}", first + 1),
        ),
        Some(_) => {}
        None => {
            decided.insert(instance, (value, idx));
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub submitted: usize,
    /// Learners whose current incarnation misses requests, with the count.
    pub missing: BTreeMap<NodeId, usize>,
}

impl Progress {
    pub fn ok(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Every submitted request must have executed at every learner in
/// `surviving`, within that learner's latest incarnation.
pub fn check_progress(records: &[TraceRecord], surviving: &[NodeId]) -> Progress {
    let mut submitted: BTreeSet<RequestId> = BTreeSet::new();
    let mut inc: HashMap<NodeId, u32> = HashMap::new();
    let mut executed: HashMap<(NodeId, u32), HashSet<RequestId>> = HashMap::new();
    for r in records {
        match &r.event {
            Event::Submit { id, .. } => {
                submitted.insert(*id);
            }
            Event::Restart { node, inc: i } => {
                inc.insert(*node, *i);
            }
            Event::Exec {
                node, inc: i, reqs, ..
            } => executed.entry((*node, *i)).or_default().extend(reqs),
            _ => {}
        }
    }
    let empty = HashSet::new();
    let mut missing = BTreeMap::new();
    for l in surviving {
        let done = executed
            .get(&(*l, inc.get(l).copied().unwrap_or(0)))
            .unwrap_or(&empty);
        let miss = submitted.iter().filter(|id| !done.contains(id)).count();
        if miss > 0 {
            missing.insert(*l, miss);
        }
    }
    Progress {
        submitted: submitted.len(),
        missing,
    }
}

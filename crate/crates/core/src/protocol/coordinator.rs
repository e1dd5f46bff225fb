//! Coordinator bookkeeping: per-instance state, value choice after phase 1,
//! and the FIFO of ids waiting to be proposed.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::ProtocolError;
use crate::storage::RecordKind;
use crate::types::{InstanceId, NodeId, Request, Round, Tick, Value};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum InstancePhase {
    #[default]
    Idle,
    Phase1 {
        replies: BTreeMap<NodeId, (Option<Round>, Option<Value>)>,
    },
    Phase2,
    Closed,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoordinatorInstance {
    pub crnd: Option<Round>,
    pub cval: Option<Value>,
    pub phase: InstancePhase,
    pub retransmits: u32,
    pub escalated: bool,
    pub last_learned: Option<Tick>,
}

impl CoordinatorInstance {
    pub fn record(&self, instance: InstanceId) -> RecordKind {
        RecordKind::Coordinator {
            instance,
            crnd: self.crnd,
            cval: self.cval,
        }
    }
}

/// Value forced by a phase 1 quorum: the value accepted at the highest
/// reported round, or `None` when nothing was accepted and the coordinator
/// is free to pick.
pub fn choose_value<'a>(
    instance: InstanceId,
    replies: impl IntoIterator<Item = &'a (Option<Round>, Option<Value>)>,
) -> Result<Option<Value>, ProtocolError> {
    let mut best: Option<(Round, Value)> = None;
    for &(vrnd, vval) in replies {
        let (Some(r), Some(v)) = (vrnd, vval) else {
            continue;
        };
        match best {
            Some((k, _)) if r < k => {}
            Some((k, u)) if r == k && u != v => {
                return Err(ProtocolError::ConflictingAccepted {
                    instance,
                    round: k,
                    a: u,
                    b: v,
                });
            }
            _ => best = Some((r, v)),
        }
    }
    Ok(best.map(|(_, v)| v))
}

/// Leader-side queue of ids not yet proposed, in arrival order. A value
/// keeps its arrival slot when released, so a proposal displaced by
/// recovery goes back to the front.
#[derive(Clone, Debug, Default)]
pub struct Candidates {
    pending: BTreeMap<u64, Value>,
    arrival: HashMap<Value, u64>,
    proposed: HashMap<Value, InstanceId>,
    next_arrival: u64,
}

impl Candidates {
    pub fn add(&mut self, v: Value) {
        if v == Value::Null || self.arrival.contains_key(&v) {
            return;
        }
        self.arrival.insert(v, self.next_arrival);
        self.pending.insert(self.next_arrival, v);
        self.next_arrival += 1;
    }

    /// Oldest id neither proposed nor learned. Learned ids found on the way
    /// are dropped.
    pub fn peek(&mut self, learned: impl Fn(&Value) -> bool) -> Option<Value> {
        while let Some((&slot, &v)) = self.pending.iter().next() {
            if !learned(&v) {
                return Some(v);
            }
            self.pending.remove(&slot);
        }
        None
    }

    pub fn mark_proposed(&mut self, v: Value, instance: InstanceId) {
        if v == Value::Null {
            return;
        }
        if let Some(slot) = self.arrival.get(&v) {
            self.pending.remove(slot);
        }
        self.proposed.insert(v, instance);
    }

    /// Return `v` to the queue if it was proposed at `instance`.
    pub fn release(&mut self, v: Value, instance: InstanceId) {
        if self.proposed.get(&v) == Some(&instance) {
            self.proposed.remove(&v);
            if let Some(&slot) = self.arrival.get(&v) {
                self.pending.insert(slot, v);
            }
        }
    }

    pub fn release_all(&mut self) {
        for (v, _) in std::mem::take(&mut self.proposed) {
            if let Some(&slot) = self.arrival.get(&v) {
                self.pending.insert(slot, v);
            }
        }
    }

    pub fn forget(&mut self, v: Value) {
        if let Some(slot) = self.arrival.get(&v) {
            self.pending.remove(slot);
        }
        self.proposed.remove(&v);
    }

    pub fn is_proposed(&self, v: &Value) -> bool {
        self.proposed.contains_key(v)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
}

/// Requests a broadcaster is accumulating into its next batch.
#[derive(Clone, Debug, Default)]
pub struct Batcher {
    pub open: Vec<Request>,
    pub seq: u64,
    pub seen: std::collections::HashSet<crate::types::RequestId>,
}

#[derive(Clone, Debug, Default)]
pub struct Coordinator {
    pub instances: BTreeMap<InstanceId, CoordinatorInstance>,
    /// Highest instance this coordinator has opened.
    pub next_instance: InstanceId,
    pub candidates: Candidates,
    /// Instances in flight, bounded by the pipeline depth.
    pub open: BTreeSet<InstanceId>,
    /// Instances below the election's highest instance still in phase 1.
    pub recovering: BTreeSet<InstanceId>,
    pub batcher: Batcher,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RequestId;
    use proptest::prelude::*;

    fn r(seq: u64) -> Option<Round> {
        Some(Round::new(seq, NodeId(1)))
    }

    fn v(seq: u64) -> Value {
        Value::Request(RequestId::new(0, seq))
    }

    #[test]
    fn highest_round_wins() {
        let replies = [(r(1), Some(v(1))), (r(3), Some(v(3))), (None, None)];
        assert_eq!(choose_value(1, &replies).unwrap(), Some(v(3)));
        assert_eq!(choose_value(1, &[(None, None), (None, None)]).unwrap(), None);
    }

    #[test]
    fn two_values_at_one_round_is_an_error() {
        let replies = [(r(2), Some(v(1))), (r(2), Some(v(2)))];
        assert!(choose_value(1, &replies).is_err());
    }

    #[test]
    fn released_value_keeps_its_place() {
        let mut c = Candidates::default();
        c.add(v(1));
        c.add(v(2));
        assert_eq!(c.peek(|_| false), Some(v(1)));
        c.mark_proposed(v(1), 1);
        assert_eq!(c.peek(|_| false), Some(v(2)));
        c.release(v(1), 1);
        assert_eq!(c.peek(|_| false), Some(v(1)));
        c.forget(v(1));
        assert_eq!(c.peek(|x| *x == v(2)), None);
    }

    proptest! {
        #[test]
        fn choice_is_a_reported_value_at_the_max_round(
            reps in proptest::collection::vec(proptest::option::of(0u64..5), 1..6)
        ) {
            // one value per round, as any correct history has
            let replies: Vec<_> = reps.iter().map(|o| match o {
                Some(s) => (r(*s), Some(v(*s))),
                None => (None, None),
            }).collect();
            let got = choose_value(1, &replies).unwrap();
            let k = reps.iter().flatten().max();
            prop_assert_eq!(got, k.map(|s| v(*s)));
        }
    }
}

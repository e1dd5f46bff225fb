//! Leader election, ring construction, broadcaster assignment and the
//! dynamic `(j + d) mod n` successor rule.
//!
//! Election is a deterministic procedure run by the harness between replica
//! steps: the lowest-numbered alive broadcaster leads, with a round one
//! above the highest round stored by any alive member.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::MembershipError;
use crate::types::{InstanceId, LanId, NodeId, Round};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingMode {
    #[default]
    Static,
    Dynamic,
}

/// Ring size for `n` acceptors: the smallest majority.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

/// One elected configuration. Views are immutable and keyed by their round,
/// so any acceptor can route a ring message by the round it carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingView {
    pub number: u64,
    pub leader: NodeId,
    pub lsn: Round,
    pub highest_instance: Option<InstanceId>,
    /// Ring order, leader first. In dynamic mode this is the phase 1 quorum
    /// target set only; phase 2 routing uses `acceptors`.
    pub ring: Vec<NodeId>,
    /// Every configured acceptor in index order (j = 1..=n).
    pub acceptors: Vec<NodeId>,
    pub mode: RingMode,
}

impl RingView {
    /// |Q_a|: the number of acceptors that must accept before PHASE 2B.
    pub fn quorum_size(&self) -> usize {
        majority(self.acceptors.len())
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.ring.iter().position(|n| *n == node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.position(node).is_some()
    }

    /// Static successor along the ring; `None` for the last member.
    pub fn ring_successor(&self, node: NodeId) -> Option<NodeId> {
        self.position(node).and_then(|p| self.ring.get(p + 1).copied())
    }

    fn index(&self, node: NodeId) -> Option<usize> {
        self.acceptors.iter().position(|n| *n == node)
    }

    /// Distance from the leader going forward around the acceptor index
    /// ring. Ring messages must travel to strictly larger offsets.
    pub fn offset_from_leader(&self, node: NodeId) -> Option<usize> {
        let n = self.acceptors.len();
        let me = self.index(node)?;
        let leader = self.index(self.lsn.node)?;
        Some((me + n - leader) % n)
    }

    pub fn dynamic_successor(&self, me: NodeId, d: u32) -> Result<NodeId, MembershipError> {
        dynamic_successor(&self.acceptors, me, self.lsn.node, d)
    }
}

/// Successor `(j + d) mod n` of acceptor `me` (1-based index j), refusing
/// any hop that would wrap past the leader.
pub fn dynamic_successor(
    acceptors: &[NodeId],
    me: NodeId,
    leader: NodeId,
    d: u32,
) -> Result<NodeId, MembershipError> {
    let n = acceptors.len();
    let idx = |x: NodeId| acceptors.iter().position(|a| *a == x);
    let (Some(j), Some(l)) = (idx(me), idx(leader)) else {
        return Err(MembershipError::RingExhausted(d));
    };
    if d == 0 || d as usize >= n {
        return Err(MembershipError::RingExhausted(d));
    }
    let succ = (j + d as usize) % n;
    let offset = |i: usize| (i + n - l) % n;
    if offset(succ) <= offset(j) {
        return Err(MembershipError::RingExhausted(d));
    }
    Ok(acceptors[succ])
}

/// Leader first, then the lowest-id alive acceptors ordered by id.
pub fn build_ring(
    acceptors: &[NodeId],
    alive: &BTreeSet<NodeId>,
    leader: NodeId,
) -> Result<Vec<NodeId>, MembershipError> {
    let m = majority(acceptors.len());
    if !alive.contains(&leader) {
        return Err(MembershipError::LeaderDown(leader));
    }
    let live: Vec<NodeId> = acceptors
        .iter()
        .copied()
        .filter(|a| alive.contains(a))
        .collect();
    if live.len() < m {
        return Err(MembershipError::NoMajority {
            alive: live.len(),
            needed: m,
        });
    }
    let mut ring = vec![leader];
    ring.extend(live.into_iter().filter(|a| *a != leader).take(m - 1));
    ring[1..].sort();
    Ok(ring)
}

/// New ring membership after `failed` is detected. `Ok(None)` when the
/// failed acceptor is not in the ring. A failed leader needs an election.
pub fn view_change(
    current: &RingView,
    failed: NodeId,
    alive: &BTreeSet<NodeId>,
) -> Result<Option<Vec<NodeId>>, MembershipError> {
    if failed == current.leader {
        return Err(MembershipError::LeaderDown(failed));
    }
    if !current.contains(failed) {
        return Ok(None);
    }
    let mut still: BTreeSet<NodeId> = alive.clone();
    still.remove(&failed);
    build_ring(&current.acceptors, &still, current.leader).map(Some)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanAssignment {
    pub lans: u32,
    pub owner: BTreeMap<LanId, NodeId>,
}

impl LanAssignment {
    pub fn lans_of(&self, node: NodeId) -> Vec<LanId> {
        self.owner
            .iter()
            .filter(|(_, o)| **o == node)
            .map(|(l, _)| *l)
            .collect()
    }

    pub fn is_broadcaster(&self, node: NodeId) -> bool {
        self.owner.values().any(|o| *o == node)
    }

    pub fn broadcasters(&self) -> BTreeSet<NodeId> {
        self.owner.values().copied().collect()
    }

    pub fn counts(&self) -> BTreeMap<NodeId, usize> {
        let mut c = BTreeMap::new();
        for o in self.owner.values() {
            *c.entry(*o).or_insert(0) += 1;
        }
        c
    }
}

/// Round-robin LAN ownership over `acceptors` in the given order. Callers
/// put the leader first so it always keeps a LAN.
pub fn assign_broadcasters(acceptors: &[NodeId], lans: u32) -> LanAssignment {
    let mut owner = BTreeMap::new();
    if !acceptors.is_empty() {
        for lan in 0..lans {
            owner.insert(lan, acceptors[lan as usize % acceptors.len()]);
        }
    }
    LanAssignment { lans, owner }
}

/// What an alive acceptor reports from its stable storage to an election.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemberReport {
    pub node: NodeId,
    pub lsn: Option<Round>,
    pub highest_instance: Option<InstanceId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElectionResult {
    pub leader: NodeId,
    pub lsn: Round,
    pub highest_instance: Option<InstanceId>,
}

/// Pick the lowest alive broadcaster, raise the round above every stored
/// one, and agree on the highest instance any alive member has stored.
pub fn elect_leader(
    n_acceptors: usize,
    reports: &[MemberReport],
    lans: &LanAssignment,
) -> Result<ElectionResult, MembershipError> {
    let needed = majority(n_acceptors);
    if reports.len() < needed {
        return Err(MembershipError::NoMajority {
            alive: reports.len(),
            needed,
        });
    }
    let leader = reports
        .iter()
        .map(|r| r.node)
        .filter(|n| lans.is_broadcaster(*n))
        .min()
        .or_else(|| reports.iter().map(|r| r.node).min())
        .expect("non-empty reports");
    let seq = reports
        .iter()
        .filter_map(|r| r.lsn)
        .map(|r| r.seq)
        .max()
        .unwrap_or(0)
        + 1;
    let highest_instance = reports.iter().filter_map(|r| r.highest_instance).max();
    Ok(ElectionResult {
        leader,
        lsn: Round::new(seq, leader),
        highest_instance,
    })
}

/// Every view ever created, by round.
#[derive(Clone, Debug, Default)]
pub struct ViewRegistry {
    views: BTreeMap<Round, Arc<RingView>>,
}

impl ViewRegistry {
    pub fn insert(&mut self, view: Arc<RingView>) {
        self.views.insert(view.lsn, view);
    }

    pub fn get(&self, round: Round) -> Option<&Arc<RingView>> {
        self.views.get(&round)
    }

    pub fn latest(&self) -> Option<&Arc<RingView>> {
        self.views.values().max_by_key(|v| v.number)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Per-node state of the dynamic successor scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DynamicRingState {
    pub d: u32,
}

impl Default for DynamicRingState {
    fn default() -> Self {
        DynamicRingState { d: 1 }
    }
}

impl DynamicRingState {
    /// Called when an ACK timer for a message sent at distance `sent_with`
    /// expires. Only the first timeout at a given distance widens it, so
    /// several outstanding messages to one dead successor cost one step.
    pub fn on_ack_timeout(&mut self, sent_with: u32, n: usize) -> Result<bool, MembershipError> {
        if sent_with != self.d {
            return Ok(false);
        }
        if self.d as usize + 1 >= n {
            return Err(MembershipError::RingExhausted(self.d + 1));
        }
        self.d += 1;
        Ok(true)
    }
}

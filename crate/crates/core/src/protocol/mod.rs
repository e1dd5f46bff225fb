//! Replica and client state machines.
//!
//! Every role is a deterministic function of its state and one input. A
//! handler returns a list of [`Action`]s; the driver (the simulator) owns the
//! network, the clock and stable storage. Actions are ordered: a
//! [`Action::Persist`] always precedes the messages that depend on it, and
//! the driver must complete it before emitting anything later in the list.

pub mod acceptor;
pub mod coordinator;
pub mod learner;
pub mod proposer;
pub mod site;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::membership::{LanAssignment, RingMode, RingView, ViewRegistry};
use crate::storage::RecordKind;
use crate::types::{InstanceId, Message, MessageKind, NodeId, RequestId, Round, Tick, Value};

pub use acceptor::{AcceptorInstance, Phase1Outcome, Phase2Outcome};
pub use coordinator::{choose_value, CoordinatorInstance, InstancePhase};
pub use proposer::{Proposer, TargetPolicy};
pub use site::{Site, SiteRole};

/// Where a coordinator that is not a broadcaster forwards a client request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardPolicy {
    /// A broadcaster drawn uniformly at random.
    #[default]
    Random,
    /// The current leader.
    Leader,
    /// The lowest-numbered broadcaster other than the leader, if any.
    NonLeader,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub batching: bool,
    pub max_batch_size: usize,
    pub max_batch_delay: Tick,
    pub pipeline_depth: usize,
    pub ring_mode: RingMode,
    /// Retry period for payload fetches (ID_QUERY).
    pub fetch_retry: Tick,
    /// Leader retransmission period for PHASE 1A / PHASE 2A.
    pub timeout: Tick,
    /// Retransmissions of one instance before the leader asks membership
    /// for a view change.
    pub retransmit_cap: u32,
    /// How long a dynamic-ring sender waits for an ACK.
    pub ack_timeout: Tick,
    /// Client retry period.
    pub client_retry: Tick,
    /// Learner catch-up poll period; 0 disables catch-up.
    pub catchup_poll: Tick,
    pub forward_policy: ForwardPolicy,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            batching: false,
            max_batch_size: 8,
            max_batch_delay: 5,
            pipeline_depth: 16,
            ring_mode: RingMode::Static,
            fetch_retry: 10,
            timeout: 50,
            retransmit_cap: 50,
            ack_timeout: 10,
            client_retry: 200,
            catchup_poll: 100,
            forward_policy: ForwardPolicy::Random,
        }
    }
}

/// Static deployment facts every node knows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    /// Acceptor sites in index order; each also hosts a coordinator.
    pub acceptors: Vec<NodeId>,
    /// Sites that host only a learner.
    pub learners_only: Vec<NodeId>,
    /// Client node per client id.
    pub clients: Vec<NodeId>,
    /// Whether acceptor sites also host a learner.
    pub colocated_learners: bool,
}

impl Topology {
    pub fn is_acceptor(&self, node: NodeId) -> bool {
        self.acceptors.contains(&node)
    }

    pub fn is_client(&self, node: NodeId) -> bool {
        self.clients.contains(&node)
    }

    pub fn client_node(&self, client_id: u32) -> Option<NodeId> {
        self.clients.get(client_id as usize).copied()
    }

    pub fn is_learner(&self, node: NodeId) -> bool {
        self.learners_only.contains(&node) || (self.colocated_learners && self.is_acceptor(node))
    }

    pub fn learners(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = if self.colocated_learners {
            self.acceptors.clone()
        } else {
            Vec::new()
        };
        v.extend(self.learners_only.iter().copied());
        v
    }
}

/// What a handler may read besides its own state.
pub struct Context<'a> {
    pub now: Tick,
    pub views: &'a ViewRegistry,
    pub topology: &'a Topology,
    /// Current broadcaster assignment, as announced by membership.
    pub lans: &'a LanAssignment,
    /// Latest installed view; used by clients to find the leader.
    pub current_view: Option<&'a RingView>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerKind {
    ClientRetry(RequestId),
    Fetch(Value),
    Retransmit { instance: InstanceId, round: Round },
    BatchFlush(u64),
    AckTimeout {
        instance: InstanceId,
        round: Round,
        kind: MessageKind,
        d: u32,
    },
    CatchupPoll,
}

/// A view announcement from membership.
#[derive(Clone, Debug)]
pub struct ViewInstall {
    pub view: Arc<RingView>,
    pub lans: Arc<LanAssignment>,
}

pub enum Input<'a> {
    /// First activation after start or restart.
    Startup,
    Deliver(&'a Message),
    Timer(TimerKind),
    Install(ViewInstall),
    /// Broadcaster reassignment without a leader change.
    Lans(Arc<LanAssignment>),
}

/// One instance executed at a learner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub instance: InstanceId,
    pub value: Value,
    /// Requests executed for the first time, in order.
    pub requests: Vec<RequestId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Emit(Message),
    Persist(RecordKind),
    SetTimer { timer: TimerKind, after: Tick },
    Execute(Execution),
    /// Client-side: the reply for a request arrived.
    Completed(RequestId),
    LeadershipLost { round: Round },
    ViewChangeRequested { round: Round },
    DistanceIncreased { d: u32 },
}

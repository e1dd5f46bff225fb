//! Seeded discrete-event network simulator.
//!
//! Events fire in `(tick, sequence)` order. A single ChaCha8 stream drives
//! every network fault decision and every site gets its own stream derived
//! from the run seed, so a run is a pure function of its setup.
//!
//! Membership runs between replica steps: a failure-detection oracle notices
//! crashes and isolations `detect_delay` ticks after they happen and then
//! elects, rebuilds the ring or reassigns LANs. Restarted and healed nodes
//! receive the current view only after the same delay.

pub mod hops;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::membership::{
    assign_broadcasters, build_ring, elect_leader, LanAssignment, MemberReport, RingMode,
    RingView, ViewRegistry,
};
use crate::protocol::{
    Action, Context, Input, ProtocolConfig, Proposer, Site, SiteRole, TargetPolicy, TimerKind,
    Topology, ViewInstall,
};
use crate::storage::{MemoryStore, StableStore};
use crate::types::{encoded_size, Message, NodeId, RequestId, Tick, Transport};

pub use trace::{DropReason, Event, MessageSummary, TraceRecord};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub node: u32,
    pub at: Tick,
    pub restart_at: Option<Tick>,
}

/// A window during which every message to or from `node` is dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Isolation {
    pub node: u32,
    pub from: Tick,
    pub until: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultProfile {
    pub loss: f64,
    pub duplication: f64,
    pub delay_min: Tick,
    pub delay_max: Tick,
    /// When false each link delivers in send order.
    pub reorder: bool,
    pub crashes: Vec<CrashSpec>,
    pub isolations: Vec<Isolation>,
    /// From this tick on, no message is lost or duplicated.
    pub quiescence: Option<Tick>,
}

impl Default for FaultProfile {
    fn default() -> Self {
        FaultProfile {
            loss: 0.0,
            duplication: 0.0,
            delay_min: 1,
            delay_max: 1,
            reorder: false,
            crashes: Vec::new(),
            isolations: Vec::new(),
            quiescence: None,
        }
    }
}

impl FaultProfile {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("loss", self.loss), ("duplication", self.duplication)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("faults.{name} must be within [0, 1], got {p}"));
            }
        }
        if self.delay_min < 1 {
            return Err("faults.delay_min must be at least 1 tick".into());
        }
        if self.delay_max < self.delay_min {
            return Err("faults.delay_max must be >= faults.delay_min".into());
        }
        Ok(())
    }
}

/// Crash `node` right after the trace reaches `record` entries, cutting
/// short whatever the node was doing at that point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordCrash {
    pub node: NodeId,
    pub record: usize,
    pub restart_after: Option<Tick>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSpec {
    pub policy: TargetPolicy,
    /// `(arrival tick, payload bytes)` per request.
    pub requests: Vec<(Tick, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSetup {
    pub seed: u64,
    pub n: usize,
    pub lans: u32,
    pub learners_only: usize,
    pub colocated_learners: bool,
    pub clients: Vec<ClientSpec>,
    pub protocol: ProtocolConfig,
    pub faults: FaultProfile,
    pub detect_delay: Tick,
    pub max_ticks: Tick,
    pub record_crash: Option<RecordCrash>,
}

#[derive(Clone, Debug)]
enum Ev {
    Deliver {
        to: NodeId,
        mid: u64,
        msg: Arc<Message>,
    },
    Timer {
        node: NodeId,
        inc: u32,
        timer: TimerKind,
        cause: Option<u64>,
    },
    Submit {
        client: NodeId,
        len: usize,
    },
    Crash(NodeId),
    Restart(NodeId),
    Detect {
        force: bool,
    },
    Install(NodeId),
    Isolate(NodeId),
    Heal(NodeId),
}

struct Slot {
    site: Option<Site>,
    role: SiteRole,
    store: MemoryStore,
    inc: u32,
}

/// Facts visible to every handler, kept apart from the node slots so both
/// can be borrowed at once.
struct Shared {
    topology: Topology,
    views: ViewRegistry,
    current: Option<Arc<RingView>>,
    lans: Arc<LanAssignment>,
}

impl Shared {
    fn ctx(&self, now: Tick) -> Context<'_> {
        Context {
            now,
            views: &self.views,
            topology: &self.topology,
            lans: &self.lans,
            current_view: self.current.as_deref(),
        }
    }
}

/// Final state of a run, beyond its trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunStats {
    pub end_tick: Tick,
    pub done: bool,
    pub submitted: usize,
    pub completed: usize,
    pub views: u64,
    pub distance_increments: u64,
    pub protocol_errors: usize,
    pub leader: Option<NodeId>,
    /// Learners alive at the end.
    pub surviving_learners: Vec<NodeId>,
}

pub struct World {
    setup: SimSetup,
    cfg: Arc<ProtocolConfig>,
    now: Tick,
    seq: u64,
    queue: BTreeMap<(Tick, u64), Ev>,
    rng: ChaCha8Rng,
    shared: Shared,
    slots: BTreeMap<NodeId, Slot>,
    proposers: BTreeMap<NodeId, Proposer>,
    trace: Vec<TraceRecord>,
    next_mid: u64,
    link_clock: BTreeMap<(NodeId, NodeId), Tick>,
    isolated: BTreeSet<NodeId>,
    record_crash: Option<RecordCrash>,
    view_number: u64,
    distance_increments: u64,
    protocol_errors: usize,
    submitted: BTreeSet<RequestId>,
    pending_submissions: usize,
    completed: BTreeSet<RequestId>,
    executed: BTreeMap<NodeId, HashSet<RequestId>>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl World {
    pub fn new(setup: SimSetup) -> Self {
        let n = setup.n as u32;
        let acceptors: Vec<NodeId> = (1..=n).map(NodeId).collect();
        let learners_only: Vec<NodeId> = (n + 1..=n + setup.learners_only as u32)
            .map(NodeId)
            .collect();
        let base = n + setup.learners_only as u32 + 1;
        let clients: Vec<NodeId> = (0..setup.clients.len() as u32)
            .map(|c| NodeId(base + c))
            .collect();
        let topology = Topology {
            acceptors: acceptors.clone(),
            learners_only: learners_only.clone(),
            clients: clients.clone(),
            colocated_learners: setup.colocated_learners,
        };
        let lans = Arc::new(assign_broadcasters(&acceptors, setup.lans));
        let cfg = Arc::new(setup.protocol.clone());
        let mut slots = BTreeMap::new();
        let roles = acceptors
            .iter()
            .map(|a| {
                (
                    *a,
                    SiteRole::Acceptor {
                        learner: setup.colocated_learners,
                    },
                )
            })
            .chain(learners_only.iter().map(|l| (*l, SiteRole::Learner)));
        for (id, role) in roles {
            let site = Site::new(
                id,
                role,
                cfg.clone(),
                lans.clone(),
                mix(setup.seed, id.0 as u64, 0),
            );
            slots.insert(
                id,
                Slot {
                    site: Some(site),
                    role,
                    store: MemoryStore::new(),
                    inc: 0,
                },
            );
        }
        let mut proposers = BTreeMap::new();
        for (c, spec) in setup.clients.iter().enumerate() {
            let id = clients[c];
            proposers.insert(
                id,
                Proposer::new(
                    id,
                    c as u32,
                    spec.policy,
                    setup.protocol.client_retry,
                    mix(setup.seed, id.0 as u64, 1 << 40),
                ),
            );
        }
        let mut world = World {
            cfg,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(setup.seed),
            shared: Shared {
                topology,
                views: ViewRegistry::default(),
                current: None,
                lans,
            },
            slots,
            proposers,
            trace: Vec::new(),
            next_mid: 0,
            link_clock: BTreeMap::new(),
            isolated: BTreeSet::new(),
            record_crash: setup.record_crash,
            view_number: 0,
            distance_increments: 0,
            protocol_errors: 0,
            submitted: BTreeSet::new(),
            pending_submissions: 0,
            completed: BTreeSet::new(),
            executed: BTreeMap::new(),
            setup,
        };
        world.bootstrap();
        world
    }

    fn bootstrap(&mut self) {
        let ids: Vec<NodeId> = self.slots.keys().copied().collect();
        for id in ids {
            self.step_site(id, Input::Startup, None);
        }
        self.record(Event::Lans {
            owners: self.lans_owners(),
        });
        self.membership_check(true);
        let clients: Vec<(NodeId, Vec<(Tick, usize)>)> = self
            .shared
            .topology
            .clients
            .iter()
            .zip(&self.setup.clients)
            .map(|(id, spec)| (*id, spec.requests.clone()))
            .collect();
        for (client, reqs) in clients {
            for (at, len) in reqs {
                self.pending_submissions += 1;
                self.schedule(at, Ev::Submit { client, len });
            }
        }
        for c in self.setup.faults.crashes.clone() {
            self.schedule(c.at, Ev::Crash(NodeId(c.node)));
            if let Some(r) = c.restart_at {
                self.schedule(r, Ev::Restart(NodeId(c.node)));
            }
        }
        for iso in self.setup.faults.isolations.clone() {
            let node = NodeId(iso.node);
            self.schedule(iso.from, Ev::Isolate(node));
            self.schedule(iso.until, Ev::Heal(node));
        }
    }

    fn schedule(&mut self, at: Tick, ev: Ev) {
        self.seq += 1;
        self.queue.insert((at, self.seq), ev);
    }

    fn record(&mut self, event: Event) {
        self.trace.push(TraceRecord {
            tick: self.now,
            event,
        });
    }

    fn lans_owners(&self) -> Vec<(u32, NodeId)> {
        self.shared
            .lans
            .owner
            .iter()
            .map(|(l, n)| (*l, *n))
            .collect()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRecord> {
        self.trace
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn site(&self, id: NodeId) -> Option<&Site> {
        self.slots.get(&id).and_then(|s| s.site.as_ref())
    }

    pub fn topology(&self) -> &Topology {
        &self.shared.topology
    }

    pub fn current_view(&self) -> Option<&Arc<RingView>> {
        self.shared.current.as_ref()
    }

    fn is_up(&self, id: NodeId) -> bool {
        self.slots.get(&id).is_some_and(|s| s.site.is_some())
    }

    fn reachable(&self, id: NodeId) -> bool {
        self.is_up(id) && !self.isolated.contains(&id)
    }

    fn faulty_now(&self) -> bool {
        self.setup.faults.quiescence.is_none_or(|q| self.now < q)
    }

    pub fn stats(&self) -> RunStats {
        RunStats {
            end_tick: self.now,
            done: self.done(),
            submitted: self.submitted.len(),
            completed: self.completed.len(),
            views: self.view_number,
            distance_increments: self.distance_increments,
            protocol_errors: self.protocol_errors,
            leader: self.shared.current.as_ref().map(|v| v.leader),
            surviving_learners: self.surviving_learners(),
        }
    }

    fn surviving_learners(&self) -> Vec<NodeId> {
        self.shared
            .topology
            .learners()
            .into_iter()
            .filter(|l| self.is_up(*l))
            .collect()
    }

    fn done(&self) -> bool {
        if self.pending_submissions > 0 || self.completed.len() < self.submitted.len() {
            return false;
        }
        let total = self.submitted.len();
        self.surviving_learners()
            .iter()
            .all(|l| self.executed.get(l).map_or(0, HashSet::len) >= total)
    }

    /// Run until every request is executed everywhere or `max_ticks`.
    pub fn run(&mut self) -> RunStats {
        while let Some((&(tick, seq), _)) = self.queue.iter().next() {
            if tick > self.setup.max_ticks {
                break;
            }
            let ev = self.queue.remove(&(tick, seq)).expect("present");
            self.now = tick;
            self.maybe_record_crash();
            self.process(ev);
            self.maybe_record_crash();
            if self.done() {
                break;
            }
        }
        self.stats()
    }

    fn maybe_record_crash(&mut self) {
        if let Some(rc) = self.record_crash {
            if self.trace.len() >= rc.record {
                self.record_crash = None;
                self.crash(rc.node);
                if let Some(after) = rc.restart_after {
                    self.schedule(self.now + after, Ev::Restart(rc.node));
                }
            }
        }
    }

    fn process(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { to, mid, msg } => self.deliver(to, mid, msg),
            Ev::Timer {
                node,
                inc,
                timer,
                cause,
            } => {
                if self.proposers.contains_key(&node) {
                    self.step_client(node, Input::Timer(timer), cause);
                } else if self.slots.get(&node).is_some_and(|s| s.inc == inc) && self.is_up(node)
                {
                    self.step_site(node, Input::Timer(timer), cause);
                }
            }
            Ev::Submit { client, len } => {
                self.pending_submissions -= 1;
                let ctx = self.shared.ctx(self.now);
                let p = self.proposers.get_mut(&client).expect("client exists");
                let (id, actions) = p.submit(&ctx, len);
                self.submitted.insert(id);
                self.record(Event::Submit {
                    client,
                    id,
                    psize: len as u64,
                });
                self.apply(client, actions, None);
            }
            Ev::Crash(node) => {
                if self.crash(node) {
                    self.schedule(
                        self.now + self.setup.detect_delay,
                        Ev::Detect { force: false },
                    );
                }
            }
            Ev::Restart(node) => self.restart(node),
            Ev::Detect { force } => self.membership_check(force),
            Ev::Install(node) => self.install_current(node),
            Ev::Isolate(node) => {
                if self.isolated.insert(node) {
                    self.schedule(
                        self.now + self.setup.detect_delay,
                        Ev::Detect { force: false },
                    );
                }
            }
            Ev::Heal(node) => {
                if self.isolated.remove(&node) {
                    self.schedule(self.now + self.setup.detect_delay, Ev::Install(node));
                    self.schedule(
                        self.now + self.setup.detect_delay,
                        Ev::Detect { force: false },
                    );
                }
            }
        }
    }

    fn deliver(&mut self, to: NodeId, mid: u64, msg: Arc<Message>) {
        let bytes = encoded_size(&msg);
        let kind = msg.kind();
        if self.proposers.contains_key(&to) {
            self.record(Event::Recv {
                mid,
                to,
                kind,
                bytes,
            });
            self.step_client(to, Input::Deliver(&msg), Some(mid));
            return;
        }
        let reason = if !self.is_up(to) {
            Some(DropReason::Crashed)
        } else if self.isolated.contains(&to) || self.isolated.contains(&msg.sender) {
            Some(DropReason::Isolated)
        } else {
            None
        };
        if let Some(reason) = reason {
            self.record(Event::Drop { mid, to, reason });
            return;
        }
        self.record(Event::Recv {
            mid,
            to,
            kind,
            bytes,
        });
        self.step_site(to, Input::Deliver(&msg), Some(mid));
    }

    fn step_client(&mut self, id: NodeId, input: Input, cause: Option<u64>) {
        let ctx = self.shared.ctx(self.now);
        let p = self.proposers.get_mut(&id).expect("client exists");
        let actions = p.handle(&ctx, input);
        self.apply(id, actions, cause);
    }

    fn step_site(&mut self, id: NodeId, input: Input, cause: Option<u64>) {
        let Some(slot) = self.slots.get_mut(&id) else {
            return;
        };
        let Some(site) = slot.site.as_mut() else {
            return;
        };
        let ctx = self.shared.ctx(self.now);
        match site.handle(&ctx, input) {
            Ok(actions) => self.apply(id, actions, cause),
            Err(e) => {
                self.protocol_errors += 1;
                self.record(Event::ProtocolError {
                    node: id,
                    detail: e.to_string(),
                });
            }
        }
    }

    /// Carry out a handler's actions in order. Stops early if the node is
    /// crashed part-way by a record-indexed crash.
    fn apply(&mut self, node: NodeId, actions: Vec<Action>, cause: Option<u64>) {
        for a in actions {
            if let Some(rc) = self.record_crash {
                if rc.node == node && self.trace.len() >= rc.record {
                    self.maybe_record_crash();
                    return;
                }
            }
            match a {
                Action::Emit(m) => self.emit(m, cause),
                Action::Persist(kind) => {
                    let slot = self.slots.get_mut(&node).expect("site slot");
                    slot.store
                        .persist(node, kind.clone())
                        .expect("memory store never fails");
                    self.record(Event::Persist { node, record: kind });
                }
                Action::SetTimer { timer, after } => {
                    let inc = self.slots.get(&node).map_or(0, |s| s.inc);
                    self.schedule(
                        self.now + after.max(1),
                        Ev::Timer {
                            node,
                            inc,
                            timer,
                            cause,
                        },
                    );
                }
                Action::Execute(e) => {
                    let inc = self.slots.get(&node).map_or(0, |s| s.inc);
                    self.executed
                        .entry(node)
                        .or_default()
                        .extend(e.requests.iter().copied());
                    self.record(Event::Exec {
                        node,
                        inc,
                        instance: e.instance,
                        value: e.value,
                        reqs: e.requests,
                    });
                }
                Action::Completed(id) => {
                    self.completed.insert(id);
                    self.record(Event::Reply { client: node, id });
                }
                Action::LeadershipLost { round } => {
                    self.record(Event::LeadershipLost { node, round });
                    if self.current_leader_round() == Some((node, round)) {
                        self.schedule(
                            self.now + self.setup.detect_delay,
                            Ev::Detect { force: true },
                        );
                    }
                }
                Action::ViewChangeRequested { round } => {
                    self.record(Event::ViewChangeRequested { node, round });
                    if self.current_leader_round() == Some((node, round)) {
                        self.schedule(
                            self.now + self.setup.detect_delay,
                            Ev::Detect { force: true },
                        );
                    }
                }
                Action::DistanceIncreased { d } => {
                    self.distance_increments += 1;
                    self.record(Event::Distance { node, d });
                }
            }
        }
    }

    fn current_leader_round(&self) -> Option<(NodeId, crate::types::Round)> {
        self.shared.current.as_ref().map(|v| (v.leader, v.lsn))
    }

    fn emit(&mut self, m: Message, cause: Option<u64>) {
        self.next_mid += 1;
        let mid = self.next_mid;
        let bytes = encoded_size(&m);
        self.record(Event::Send {
            mid,
            cause,
            msg: MessageSummary::from(&m),
            bytes,
        });
        let targets: Vec<NodeId> = match m.transport {
            Transport::Unicast(to) => vec![to],
            Transport::Multicast(_) => self
                .shared
                .topology
                .acceptors
                .iter()
                .chain(&self.shared.topology.learners_only)
                .copied()
                .filter(|x| *x != m.sender)
                .collect(),
        };
        let msg = Arc::new(m);
        for to in targets {
            self.transmit(mid, to, msg.clone());
        }
    }

    fn transmit(&mut self, mid: u64, to: NodeId, msg: Arc<Message>) {
        if self.isolated.contains(&msg.sender) || self.isolated.contains(&to) {
            self.record(Event::Drop {
                mid,
                to,
                reason: DropReason::Isolated,
            });
            return;
        }
        let f = &self.setup.faults;
        let (loss, dup) = if self.faulty_now() {
            (f.loss, f.duplication)
        } else {
            (0.0, 0.0)
        };
        if loss > 0.0 && self.rng.gen_bool(loss) {
            self.record(Event::Drop {
                mid,
                to,
                reason: DropReason::Loss,
            });
            return;
        }
        let copies = if dup > 0.0 && self.rng.gen_bool(dup) {
            2
        } else {
            1
        };
        for _ in 0..copies {
            let at = self.arrival(msg.sender, to);
            self.schedule(
                at,
                Ev::Deliver {
                    to,
                    mid,
                    msg: msg.clone(),
                },
            );
        }
    }

    fn arrival(&mut self, from: NodeId, to: NodeId) -> Tick {
        let f = &self.setup.faults;
        let (lo, hi) = (f.delay_min, f.delay_max);
        let delay = if hi > lo {
            self.rng.gen_range(lo..=hi)
        } else {
            lo
        };
        let mut at = self.now + delay;
        if !self.setup.faults.reorder {
            let clock = self.link_clock.entry((from, to)).or_insert(0);
            at = at.max(*clock);
            *clock = at;
        }
        at
    }

    /// Discard a node's volatile state. Returns false if already down.
    fn crash(&mut self, node: NodeId) -> bool {
        let Some(slot) = self.slots.get_mut(&node) else {
            return false;
        };
        if slot.site.take().is_none() {
            return false;
        }
        slot.inc += 1;
        self.record(Event::Crash { node });
        true
    }

    fn restart(&mut self, node: NodeId) {
        let Some(slot) = self.slots.get_mut(&node) else {
            return;
        };
        if slot.site.is_some() {
            return;
        }
        let records = slot.store.recover().expect("memory store never fails");
        let inc = slot.inc;
        slot.site = Some(Site::recover(
            node,
            slot.role,
            self.cfg.clone(),
            self.shared.lans.clone(),
            mix(self.setup.seed, node.0 as u64, inc as u64),
            inc,
            &records,
        ));
        self.executed.remove(&node);
        self.record(Event::Restart { node, inc });
        self.step_site(node, Input::Startup, None);
        self.schedule(self.now + self.setup.detect_delay, Ev::Install(node));
        self.schedule(
            self.now + self.setup.detect_delay,
            Ev::Detect { force: false },
        );
    }

    fn install_current(&mut self, node: NodeId) {
        if !self.reachable(node) {
            return;
        }
        let Some(view) = self.shared.current.clone() else {
            return;
        };
        self.install(node, view);
    }

    fn install(&mut self, node: NodeId, view: Arc<RingView>) {
        let lans = self.shared.lans.clone();
        let already = self.site(node).and_then(Site::lsn) == Some(view.lsn);
        if self.slots[&node].role.is_acceptor() && !already {
            self.record(Event::Install {
                node,
                lsn: view.lsn,
            });
        }
        self.step_site(node, Input::Install(ViewInstall { view, lans }), None);
    }

    /// The failure-detection oracle plus membership controller.
    fn membership_check(&mut self, force: bool) {
        let acceptors = self.shared.topology.acceptors.clone();
        let alive: BTreeSet<NodeId> = acceptors
            .iter()
            .copied()
            .filter(|a| self.reachable(*a))
            .collect();
        let current = self.shared.current.clone();
        let leader_down = current.as_ref().is_none_or(|v| !alive.contains(&v.leader));
        let ring_broken = self.cfg.ring_mode == RingMode::Static
            && current
                .as_ref()
                .is_some_and(|v| v.ring.iter().any(|r| !alive.contains(r)));
        let owners_down = self
            .shared
            .lans
            .owner
            .values()
            .any(|o| !alive.contains(o));

        if force || leader_down || ring_broken {
            if alive.len() < crate::membership::majority(acceptors.len()) {
                return;
            }
            let lans = if owners_down {
                let order: Vec<NodeId> = alive.iter().copied().collect();
                assign_broadcasters(&order, self.setup.lans)
            } else {
                (*self.shared.lans).clone()
            };
            let reports: Vec<MemberReport> = alive
                .iter()
                .map(|a| {
                    let s = self.site(*a).expect("alive");
                    MemberReport {
                        node: *a,
                        lsn: s.lsn(),
                        highest_instance: s.highest_stored_instance(),
                    }
                })
                .collect();
            let Ok(elected) = elect_leader(acceptors.len(), &reports, &lans) else {
                return;
            };
            let Ok(ring) = build_ring(&acceptors, &alive, elected.leader) else {
                return;
            };
            // Keep the leader a broadcaster and first in rotation.
            let lans = if lans.is_broadcaster(elected.leader) {
                lans
            } else {
                let mut order = vec![elected.leader];
                order.extend(alive.iter().copied().filter(|a| *a != elected.leader));
                assign_broadcasters(&order, self.setup.lans)
            };
            self.view_number += 1;
            let view = Arc::new(RingView {
                number: self.view_number,
                leader: elected.leader,
                lsn: elected.lsn,
                highest_instance: elected.highest_instance,
                ring: ring.clone(),
                acceptors: acceptors.clone(),
                mode: self.cfg.ring_mode,
            });
            self.record(Event::View {
                number: view.number,
                leader: view.leader,
                lsn: view.lsn,
                highest: view.highest_instance,
                ring,
            });
            if *self.shared.lans != lans {
                self.shared.lans = Arc::new(lans);
                self.record(Event::Lans {
                    owners: self.lans_owners(),
                });
            }
            self.shared.views.insert(view.clone());
            self.shared.current = Some(view.clone());
            // Followers first so the leader's phase 1 meets installed floors.
            let mut order: Vec<NodeId> = alive.iter().copied().filter(|a| *a != view.leader).collect();
            order.push(view.leader);
            for a in order {
                self.install(a, view.clone());
            }
            self.broadcast_lans();
        } else if owners_down {
            let leader = current.as_ref().expect("view exists").leader;
            let mut order = vec![leader];
            order.extend(alive.iter().copied().filter(|a| *a != leader));
            self.shared.lans = Arc::new(assign_broadcasters(&order, self.setup.lans));
            self.record(Event::Lans {
                owners: self.lans_owners(),
            });
            self.broadcast_lans();
        }
    }

    /// Hand the current LAN assignment to every live site.
    fn broadcast_lans(&mut self) {
        let ids: Vec<NodeId> = self.slots.keys().copied().filter(|n| self.is_up(*n)).collect();
        for id in ids {
            self.step_site(id, Input::Lans(self.shared.lans.clone()), None);
        }
    }
}

//! A replica site: an acceptor with its coordinator and, optionally, a
//! learner, or a learner alone. The roles on one site share the request
//! set, the learned map and the pending client replies.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::acceptor::{self, AcceptorInstance, Phase1Outcome, Phase2Outcome};
use super::coordinator::{choose_value, Coordinator, InstancePhase};
use super::learner::Learner;
use super::{
    Action, Context, Execution, ForwardPolicy, Input, ProtocolConfig, TimerKind, ViewInstall,
};
use crate::error::ProtocolError;
use crate::membership::{DynamicRingState, LanAssignment, RingMode, RingView};
use crate::storage::{RecordKind, StableRecord};
use crate::types::{
    Batch, BatchId, Body, InstanceId, Message, MessageKind, NodeId, Payload, Request, RequestId,
    Round, Transport, Value,
};

/// How many LEARNED values a coordinator returns for one catch-up query.
const CATCHUP_SPAN: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteRole {
    Acceptor { learner: bool },
    Learner,
}

impl SiteRole {
    pub fn is_acceptor(self) -> bool {
        matches!(self, SiteRole::Acceptor { .. })
    }

    pub fn is_learner(self) -> bool {
        matches!(self, SiteRole::Acceptor { learner: true } | SiteRole::Learner)
    }
}

/// A ring message held back until the payload of its value arrives.
#[derive(Clone, Copy, Debug)]
struct Held {
    from: NodeId,
    kind: MessageKind,
    round: Round,
    instance: InstanceId,
    sn_in: Option<u32>,
}

#[derive(Clone, Debug)]
struct PendingAck {
    body: Body,
    d: u32,
}

pub struct Site {
    id: NodeId,
    role: SiteRole,
    cfg: Arc<ProtocolConfig>,
    rng: ChaCha8Rng,

    leader: bool,
    lsn: Option<Round>,
    highest: Option<InstanceId>,
    lans: Arc<LanAssignment>,

    req_set: IndexMap<RequestId, Request>,
    batches: HashMap<BatchId, Batch>,
    batch_of: HashMap<RequestId, BatchId>,
    learned: BTreeMap<InstanceId, Value>,
    learned_at: HashMap<Value, InstanceId>,
    reply_to: HashMap<RequestId, NodeId>,

    coord: Coordinator,
    acc: BTreeMap<InstanceId, AcceptorInstance>,
    ring: DynamicRingState,
    pending_acks: BTreeMap<(InstanceId, Round, MessageKind), PendingAck>,
    /// Ring messages waiting for a payload, by value.
    held: HashMap<Value, Vec<Held>>,
    learner: Option<Learner>,

    out: Vec<Action>,
    local: VecDeque<Message>,
}

impl Site {
    pub fn new(
        id: NodeId,
        role: SiteRole,
        cfg: Arc<ProtocolConfig>,
        lans: Arc<LanAssignment>,
        seed: u64,
    ) -> Self {
        Site {
            id,
            role,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            leader: false,
            lsn: None,
            highest: None,
            lans,
            req_set: IndexMap::new(),
            batches: HashMap::new(),
            batch_of: HashMap::new(),
            learned: BTreeMap::new(),
            learned_at: HashMap::new(),
            reply_to: HashMap::new(),
            coord: Coordinator::default(),
            acc: BTreeMap::new(),
            ring: DynamicRingState::default(),
            pending_acks: BTreeMap::new(),
            held: HashMap::new(),
            learner: role.is_learner().then(Learner::default),
            out: Vec::new(),
            local: VecDeque::new(),
        }
    }

    /// Rebuild a site after a crash from its stable records. Everything
    /// else starts empty.
    pub fn recover(
        id: NodeId,
        role: SiteRole,
        cfg: Arc<ProtocolConfig>,
        lans: Arc<LanAssignment>,
        seed: u64,
        epoch: u32,
        records: &[StableRecord],
    ) -> Self {
        let mut site = Site::new(id, role, cfg, lans, seed);
        // Batch ids must not repeat across restarts; `epoch` counts boots.
        site.coord.batcher.seq = u64::from(epoch) << 32;
        for rec in records {
            match rec.kind {
                RecordKind::Election {
                    leader,
                    highest_instance,
                    lsn,
                } => {
                    site.leader = leader;
                    site.highest = highest_instance;
                    site.lsn = lsn;
                }
                RecordKind::Coordinator {
                    instance,
                    crnd,
                    cval,
                } => {
                    let inst = site.coord.instances.entry(instance).or_default();
                    inst.crnd = crnd;
                    inst.cval = cval;
                }
                RecordKind::Acceptor {
                    instance,
                    rnd,
                    vrnd,
                    vval,
                    sn,
                } => {
                    site.acc.insert(
                        instance,
                        AcceptorInstance {
                            rnd,
                            vrnd,
                            vval,
                            sn,
                        },
                    );
                }
            }
        }
        site
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> SiteRole {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.leader
    }

    pub fn lsn(&self) -> Option<Round> {
        self.lsn
    }

    pub fn learned(&self) -> &BTreeMap<InstanceId, Value> {
        &self.learned
    }

    pub fn executed_upto(&self) -> Option<InstanceId> {
        self.learner.as_ref().map(|l| l.executed_upto)
    }

    pub fn dynamic_distance(&self) -> u32 {
        self.ring.d
    }

    pub fn acceptor_state(&self, instance: InstanceId) -> Option<&AcceptorInstance> {
        self.acc.get(&instance)
    }

    /// Highest instance with any coordinator or acceptor state here.
    pub fn highest_stored_instance(&self) -> Option<InstanceId> {
        let c = self.coord.instances.keys().next_back().copied();
        let a = self.acc.keys().next_back().copied();
        c.max(a)
    }

    pub fn handle(&mut self, ctx: &Context, input: Input) -> Result<Vec<Action>, ProtocolError> {
        match input {
            Input::Startup => self.on_startup(ctx)?,
            Input::Deliver(m) => self.dispatch(ctx, m)?,
            Input::Timer(t) => self.on_timer(ctx, t)?,
            Input::Install(vi) => self.on_install(ctx, vi)?,
            Input::Lans(l) => self.lans = l,
        }
        while let Some(m) = self.local.pop_front() {
            self.dispatch(ctx, &m)?;
        }
        Ok(std::mem::take(&mut self.out))
    }

    // ---- output helpers -------------------------------------------------

    fn send(&mut self, to: NodeId, body: Body) {
        let m = Message::unicast(self.id, to, body);
        if to == self.id {
            self.local.push_back(m);
        } else {
            self.out.push(Action::Emit(m));
        }
    }

    /// Multicast on one of this site's LANs. LEARNED is also processed
    /// locally since the sender is a learner of its own announcement.
    fn multicast(&mut self, body: Body) -> bool {
        let lans = self.lans.lans_of(self.id);
        let Some(&lan) = lans.choose(&mut self.rng) else {
            return false;
        };
        if matches!(body, Body::Learned { .. }) {
            self.local
                .push_back(Message::multicast(self.id, lan, body.clone()));
        }
        self.out
            .push(Action::Emit(Message::multicast(self.id, lan, body)));
        true
    }

    fn timer(&mut self, timer: TimerKind, after: u64) {
        self.out.push(Action::SetTimer { timer, after });
    }

    fn persist(&mut self, kind: RecordKind) {
        self.out.push(Action::Persist(kind));
    }

    fn is_broadcaster(&self) -> bool {
        self.lans.is_broadcaster(self.id)
    }

    fn dynamic(&self) -> bool {
        self.cfg.ring_mode == RingMode::Dynamic
    }

    fn random_coordinator(&mut self, ctx: &Context) -> Option<NodeId> {
        let others: Vec<NodeId> = ctx
            .topology
            .acceptors
            .iter()
            .copied()
            .filter(|a| *a != self.id)
            .collect();
        others.choose(&mut self.rng).copied()
    }

    fn is_learned(&self, v: &Value) -> bool {
        self.learned_at.contains_key(v)
    }

    fn request_learned(&self, id: RequestId) -> bool {
        self.is_learned(&Value::Request(id))
            || self
                .batch_of
                .get(&id)
                .is_some_and(|b| self.is_learned(&Value::Batch(*b)))
    }

    /// Request ids carried by `v`, if the payload is known here.
    fn members(&self, v: Value) -> Option<Vec<RequestId>> {
        match v {
            Value::Null => Some(Vec::new()),
            Value::Request(id) => self.req_set.contains_key(&id).then(|| vec![id]),
            Value::Batch(b) => self.batches.get(&b).map(|b| b.members().collect()),
        }
    }

    fn payload_of(&self, v: Value) -> Option<Payload> {
        match v {
            Value::Null => None,
            Value::Request(id) => self.req_set.get(&id).cloned().map(Payload::Request),
            Value::Batch(b) => self.batches.get(&b).cloned().map(Payload::Batch),
        }
    }

    fn reply(&mut self, ids: &[RequestId]) {
        for id in ids {
            if let Some(client) = self.reply_to.remove(id) {
                self.send(client, Body::IdReply { id: *id });
            }
        }
    }

    // ---- dispatch ---------------------------------------------------------

    fn dispatch(&mut self, ctx: &Context, m: &Message) -> Result<(), ProtocolError> {
        let from = m.sender;
        let acceptor = self.role.is_acceptor();
        match &m.body {
            Body::Request(p) => {
                if acceptor && ctx.topology.is_client(from) {
                    if let Payload::Request(r) = p {
                        self.on_client_request(ctx, from, r.clone())?;
                    }
                } else {
                    let unicast = matches!(m.transport, Transport::Unicast(_));
                    self.on_peer_request(ctx, unicast, p.clone())?;
                }
                self.release_held(ctx)?;
            }
            Body::Phase1a { round, instance } if acceptor => {
                self.on_phase1a(from, *round, *instance)
            }
            Body::Phase1b {
                round,
                instance,
                vrnd,
                vval,
            } if acceptor => self.on_phase1b(ctx, from, *round, *instance, *vrnd, *vval)?,
            Body::Phase2a {
                round,
                instance,
                value,
            } if acceptor => {
                self.on_phase2(ctx, from, MessageKind::Phase2a, *round, *instance, *value, None)?
            }
            Body::Phase2a2b {
                round,
                instance,
                value,
                sn,
            } if acceptor => self.on_phase2(
                ctx,
                from,
                MessageKind::Phase2a2b,
                *round,
                *instance,
                *value,
                Some(*sn),
            )?,
            Body::Phase2b {
                round,
                instance,
                value,
            } if acceptor => self.on_phase2b(ctx, from, *round, *instance, *value)?,
            Body::Learned { instance, value } => self.on_learned(ctx, *instance, *value)?,
            Body::Denial { round, .. } if acceptor => {
                if self.leader && self.lsn == Some(*round) {
                    self.demote(*round);
                }
            }
            Body::IdQuery { value, instance } if acceptor => {
                self.on_id_query(from, *value, *instance)
            }
            Body::Ack {
                round,
                instance,
                kind,
            } => {
                self.pending_acks.remove(&(*instance, *round, *kind));
            }
            _ => {}
        }
        Ok(())
    }

    // ---- request dissemination -------------------------------------------

    fn on_client_request(
        &mut self,
        ctx: &Context,
        client: NodeId,
        mut req: Request,
    ) -> Result<(), ProtocolError> {
        let id = req.id;
        self.reply_to.insert(id, client);
        if self.request_learned(id) {
            // Answer now if executed here, otherwise on execution.
            let executed = self
                .learner
                .as_ref()
                .is_none_or(|l| l.executed.contains(&id));
            if executed {
                self.reply(&[id]);
            }
            return Ok(());
        }
        req.origin_coordinator = Some(self.id);
        let new = self.insert_request(ctx, req.clone());
        if self.is_broadcaster() {
            if self.cfg.batching {
                self.batch_accumulate(ctx, req)?;
            } else {
                self.multicast(Body::Request(Payload::Request(req)));
            }
        } else if let Some(to) = self.forward_target(ctx) {
            self.send(to, Body::Request(Payload::Request(req)));
        }
        if new {
            self.try_open(ctx)?;
        }
        Ok(())
    }

    fn forward_target(&mut self, ctx: &Context) -> Option<NodeId> {
        let leader = self.lsn.map(|r| r.node);
        let bs: Vec<NodeId> = self.lans.broadcasters().into_iter().collect();
        match self.cfg.forward_policy {
            ForwardPolicy::Random => bs.choose(&mut self.rng).copied().or(leader),
            ForwardPolicy::Leader => leader.or_else(|| bs.first().copied()),
            ForwardPolicy::NonLeader => bs
                .iter()
                .copied()
                .find(|b| Some(*b) != leader)
                .or(leader),
        }
        .filter(|_| !ctx.topology.acceptors.is_empty())
    }

    fn on_peer_request(
        &mut self,
        ctx: &Context,
        unicast: bool,
        payload: Payload,
    ) -> Result<(), ProtocolError> {
        match payload {
            Payload::Request(r) => {
                let v = Value::Request(r.id);
                let fetched = self.held.contains_key(&v)
                    || self
                        .learner
                        .as_ref()
                        .is_some_and(|l| l.pending_fetch.contains(&v));
                if unicast && !fetched && self.role.is_acceptor() && self.is_broadcaster() {
                    if self.cfg.batching {
                        self.batch_accumulate(ctx, r.clone())?;
                    } else {
                        self.multicast(Body::Request(Payload::Request(r.clone())));
                    }
                }
                if self.insert_request(ctx, r) {
                    self.try_open(ctx)?;
                }
            }
            Payload::Batch(b) => {
                if self.insert_batch(ctx, b) {
                    self.try_open(ctx)?;
                }
            }
        }
        Ok(())
    }

    fn insert_request(&mut self, ctx: &Context, r: Request) -> bool {
        let id = r.id;
        if self.req_set.contains_key(&id) {
            return false;
        }
        self.req_set.insert(id, r);
        let v = Value::Request(id);
        if self.role.is_acceptor() && !self.cfg.batching && !self.is_learned(&v) {
            self.coord.candidates.add(v);
        }
        if let Some(l) = self.learner.as_mut() {
            l.pending_fetch.remove(&v);
        }
        self.try_execute(ctx);
        true
    }

    fn insert_batch(&mut self, ctx: &Context, b: Batch) -> bool {
        if self.batches.contains_key(&b.id) {
            return false;
        }
        for r in &b.requests {
            self.req_set.entry(r.id).or_insert_with(|| r.clone());
            self.batch_of.insert(r.id, b.id);
        }
        let v = Value::Batch(b.id);
        self.batches.insert(b.id, b);
        if self.role.is_acceptor() && !self.is_learned(&v) {
            self.coord.candidates.add(v);
        }
        if let Some(l) = self.learner.as_mut() {
            l.pending_fetch.remove(&v);
        }
        self.try_execute(ctx);
        true
    }

    fn batch_accumulate(&mut self, ctx: &Context, r: Request) -> Result<(), ProtocolError> {
        let b = &mut self.coord.batcher;
        if !b.seen.insert(r.id) {
            return Ok(());
        }
        b.open.push(r);
        let (len, seq) = (b.open.len(), b.seq);
        if len >= self.cfg.max_batch_size {
            self.flush_batch(ctx)?;
        } else if len == 1 {
            self.timer(TimerKind::BatchFlush(seq), self.cfg.max_batch_delay);
        }
        Ok(())
    }

    fn flush_batch(&mut self, ctx: &Context) -> Result<(), ProtocolError> {
        let b = &mut self.coord.batcher;
        if b.open.is_empty() {
            return Ok(());
        }
        let batch = Batch {
            id: BatchId {
                broadcaster: self.id,
                batch_seq: b.seq,
            },
            requests: std::mem::take(&mut b.open),
        };
        b.seq += 1;
        self.multicast(Body::Request(Payload::Batch(batch.clone())));
        if self.insert_batch(ctx, batch) {
            self.try_open(ctx)?;
        }
        Ok(())
    }

    // ---- coordinator --------------------------------------------------------

    fn view(&self, ctx: &Context, round: Round) -> Option<Arc<RingView>> {
        ctx.views.get(round).cloned()
    }

    fn try_open(&mut self, ctx: &Context) -> Result<(), ProtocolError> {
        if !self.leader || !self.role.is_acceptor() || !self.coord.recovering.is_empty() {
            return Ok(());
        }
        while self.leader && self.coord.open.len() < self.cfg.pipeline_depth {
            let learned = &self.learned_at;
            let Some(v) = self.coord.candidates.peek(|v| learned.contains_key(v)) else {
                break;
            };
            let mut i = self.coord.next_instance + 1;
            while self.learned.contains_key(&i) {
                i += 1;
            }
            self.coord.next_instance = i;
            self.propose(ctx, i, v)?;
        }
        Ok(())
    }

    /// Start (or restart) phase 2 of `instance` with `v` in the current round.
    fn propose(&mut self, ctx: &Context, instance: InstanceId, v: Value) -> Result<(), ProtocolError> {
        let Some(lsn) = self.lsn else {
            return Ok(());
        };
        let inst = self.coord.instances.entry(instance).or_default();
        inst.crnd = Some(lsn);
        inst.cval = Some(v);
        inst.phase = InstancePhase::Phase2;
        inst.retransmits = 0;
        inst.escalated = false;
        let rec = inst.record(instance);
        self.persist(rec);

        let st = self.acc.entry(instance).or_default();
        match acceptor::on_phase2(st, Some(lsn), instance, lsn, v)? {
            Phase2Outcome::Accepted => {
                st.sn = 0;
                let rec = st.record(instance);
                self.persist(rec);
            }
            Phase2Outcome::Retransmission => {}
            Phase2Outcome::Stale => {
                self.demote(lsn);
                return Ok(());
            }
        }
        self.coord.candidates.mark_proposed(v, instance);
        self.coord.open.insert(instance);
        self.send_phase2a(ctx, instance, lsn, v);
        self.timer(
            TimerKind::Retransmit {
                instance,
                round: lsn,
            },
            self.cfg.timeout,
        );
        Ok(())
    }

    fn send_phase2a(&mut self, ctx: &Context, instance: InstanceId, round: Round, value: Value) {
        let Some(view) = self.view(ctx, round) else {
            return;
        };
        let body = Body::Phase2a {
            round,
            instance,
            value,
        };
        self.send_ring(&view, body);
    }

    /// Send a ring message to this site's successor in `view`, tracking the
    /// ACK in dynamic mode.
    fn send_ring(&mut self, view: &RingView, body: Body) {
        if self.dynamic() {
            let d = self.ring.d;
            let Ok(next) = view.dynamic_successor(self.id, d) else {
                return;
            };
            let probe = Message::unicast(self.id, next, body.clone());
            let key = (
                probe.instance().unwrap_or(0),
                probe.round().expect("ring messages carry a round"),
                probe.kind(),
            );
            self.pending_acks.insert(
                key,
                PendingAck {
                    body: body.clone(),
                    d,
                },
            );
            self.timer(
                TimerKind::AckTimeout {
                    instance: key.0,
                    round: key.1,
                    kind: key.2,
                    d,
                },
                self.cfg.ack_timeout,
            );
            self.send(next, body);
        } else if let Some(next) = view.ring_successor(self.id) {
            self.send(next, body);
        }
    }

    fn phase1_targets(&self, view: &RingView) -> Vec<NodeId> {
        if self.dynamic() {
            view.acceptors.clone()
        } else {
            view.ring.clone()
        }
    }

    fn start_phase1(&mut self, ctx: &Context, instance: InstanceId) {
        let Some(lsn) = self.lsn else {
            return;
        };
        let Some(view) = self.view(ctx, lsn) else {
            return;
        };
        let inst = self.coord.instances.entry(instance).or_default();
        inst.crnd = Some(lsn);
        inst.cval = None;
        inst.phase = InstancePhase::Phase1 {
            replies: BTreeMap::new(),
        };
        inst.retransmits = 0;
        inst.escalated = false;
        self.coord.recovering.insert(instance);
        for to in self.phase1_targets(&view) {
            self.send(
                to,
                Body::Phase1a {
                    round: lsn,
                    instance,
                },
            );
        }
        self.timer(
            TimerKind::Retransmit {
                instance,
                round: lsn,
            },
            self.cfg.timeout,
        );
    }

    /// Take up (or resume) leadership in the current round: instances up to
    /// the election's highest go through phase 1, except those this
    /// coordinator already proposed in this very round.
    fn resume_leadership(&mut self, ctx: &Context) -> Result<(), ProtocolError> {
        let Some(lsn) = self.lsn else {
            return Ok(());
        };
        self.coord.candidates.release_all();
        self.coord.open.clear();
        self.coord.recovering.clear();
        let top = self
            .highest
            .max(self.highest_stored_instance())
            .unwrap_or(0);
        self.coord.next_instance = top;
        let mut direct = Vec::new();
        for i in 1..=top {
            if self.learned.contains_key(&i) {
                continue;
            }
            let inst = self.coord.instances.get(&i);
            match inst.and_then(|x| x.cval.filter(|_| x.crnd == Some(lsn))) {
                Some(v) => direct.push((i, v)),
                None => self.start_phase1(ctx, i),
            }
        }
        for (i, v) in direct {
            self.propose(ctx, i, v)?;
        }
        self.try_open(ctx)
    }

    fn demote(&mut self, round: Round) {
        self.leader = false;
        self.coord.candidates.release_all();
        self.coord.open.clear();
        self.coord.recovering.clear();
        self.out.push(Action::LeadershipLost { round });
    }

    fn on_phase1b(
        &mut self,
        ctx: &Context,
        from: NodeId,
        round: Round,
        instance: InstanceId,
        vrnd: Option<Round>,
        vval: Option<Value>,
    ) -> Result<(), ProtocolError> {
        if !self.leader || self.lsn != Some(round) {
            return Ok(());
        }
        let Some(view) = self.view(ctx, round) else {
            return Ok(());
        };
        let need = if self.dynamic() {
            view.quorum_size()
        } else {
            view.ring.len()
        };
        if !self.phase1_targets(&view).contains(&from) {
            return Ok(());
        }
        let Some(inst) = self.coord.instances.get_mut(&instance) else {
            return Ok(());
        };
        if inst.crnd != Some(round) {
            return Ok(());
        }
        let InstancePhase::Phase1 { replies } = &mut inst.phase else {
            return Ok(());
        };
        replies.insert(from, (vrnd, vval));
        if replies.len() < need {
            return Ok(());
        }
        let forced = choose_value(instance, replies.values())?;
        let learned = &self.learned_at;
        let v = forced
            .or_else(|| self.coord.candidates.peek(|v| learned.contains_key(v)))
            .unwrap_or(Value::Null);
        self.coord.recovering.remove(&instance);
        self.propose(ctx, instance, v)?;
        self.try_open(ctx)
    }

    fn on_phase2b(
        &mut self,
        ctx: &Context,
        from: NodeId,
        round: Round,
        instance: InstanceId,
        value: Value,
    ) -> Result<(), ProtocolError> {
        if self.dynamic() && from != self.id {
            self.send(
                from,
                Body::Ack {
                    round,
                    instance,
                    kind: MessageKind::Phase2b,
                },
            );
        }
        let broadcaster = self.is_broadcaster();
        let Some(inst) = self.coord.instances.get_mut(&instance) else {
            return Ok(());
        };
        if inst.crnd != Some(round) || inst.cval != Some(value) {
            return Ok(());
        }
        if inst.phase == InstancePhase::Closed {
            // The LEARNED announcement may have been lost; repeat it, but at
            // most once per retransmission period.
            let due = inst
                .last_learned
                .is_none_or(|t| ctx.now >= t + self.cfg.timeout);
            if broadcaster && due {
                inst.last_learned = Some(ctx.now);
                self.multicast(Body::Learned { instance, value });
            }
            return Ok(());
        }
        inst.phase = InstancePhase::Closed;
        inst.last_learned = Some(ctx.now);
        self.coord.open.remove(&instance);
        self.coord.recovering.remove(&instance);
        let body = Body::Learned { instance, value };
        if !self.multicast(body.clone()) {
            self.local.push_back(Message::unicast(self.id, self.id, body));
        }
        self.try_open(ctx)
    }

    fn on_id_query(&mut self, from: NodeId, value: Option<Value>, instance: Option<InstanceId>) {
        match (value, instance) {
            (Some(v), _) => {
                if let Some(p) = self.payload_of(v) {
                    self.send(from, Body::Request(p));
                }
            }
            (None, Some(i)) => {
                for j in i..i + CATCHUP_SPAN {
                    let Some(&v) = self.learned.get(&j) else {
                        break;
                    };
                    self.send(
                        from,
                        Body::Learned {
                            instance: j,
                            value: v,
                        },
                    );
                }
            }
            (None, None) => {}
        }
    }

    // ---- acceptor -----------------------------------------------------------

    fn on_phase1a(&mut self, from: NodeId, round: Round, instance: InstanceId) {
        let st = self.acc.entry(instance).or_default();
        match acceptor::on_phase1a(st, self.lsn, round) {
            out @ (Phase1Outcome::Promise | Phase1Outcome::Repeat) => {
                let st = *st;
                if out == Phase1Outcome::Promise {
                    self.persist(st.record(instance));
                }
                self.send(
                    from,
                    Body::Phase1b {
                        round,
                        instance,
                        vrnd: st.vrnd,
                        vval: st.vval,
                    },
                );
            }
            Phase1Outcome::Deny => self.send(from, Body::Denial { round, instance }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_phase2(
        &mut self,
        ctx: &Context,
        from: NodeId,
        kind: MessageKind,
        round: Round,
        instance: InstanceId,
        value: Value,
        sn_in: Option<u32>,
    ) -> Result<(), ProtocolError> {
        let Some(view) = self.view(ctx, round) else {
            return Ok(());
        };
        if self.dynamic() && from != self.id {
            self.send(
                from,
                Body::Ack {
                    round,
                    instance,
                    kind,
                },
            );
        }
        let sn = sn_in.map_or(1, |s| s + 1);
        if self.dynamic() {
            let (Some(me), Some(prev)) = (
                view.offset_from_leader(self.id),
                view.offset_from_leader(from),
            ) else {
                return Ok(());
            };
            if me <= prev || sn as usize > me {
                return Ok(());
            }
        } else if view.position(self.id) != Some(sn as usize) {
            return Ok(());
        }
        // Vote only for values whose payload is here, so every decided id
        // stays retrievable from some ring member.
        if self.members(value).is_none() {
            self.hold(
                value,
                Held {
                    from,
                    kind,
                    round,
                    instance,
                    sn_in,
                },
            );
            return Ok(());
        }
        let st = self.acc.entry(instance).or_default();
        match acceptor::on_phase2(st, self.lsn, instance, round, value)? {
            Phase2Outcome::Accepted => {
                st.sn = sn;
                let rec = st.record(instance);
                self.persist(rec);
            }
            Phase2Outcome::Retransmission => {}
            Phase2Outcome::Stale => return Ok(()),
        }
        self.forward(&view, instance, round, value, sn);
        Ok(())
    }

    fn hold(&mut self, value: Value, h: Held) {
        let fetching = self
            .learner
            .as_ref()
            .is_some_and(|l| l.pending_fetch.contains(&value));
        let first = !self.held.contains_key(&value);
        self.held.entry(value).or_default().push(h);
        if first && !fetching {
            // The sender voted for it, so it has the payload.
            self.send(
                h.from,
                Body::IdQuery {
                    value: Some(value),
                    instance: None,
                },
            );
            self.timer(TimerKind::Fetch(value), self.cfg.fetch_retry);
        }
    }

    fn release_held(&mut self, ctx: &Context) -> Result<(), ProtocolError> {
        let ready: Vec<Value> = self
            .held
            .keys()
            .copied()
            .filter(|v| self.members(*v).is_some())
            .collect();
        for v in ready {
            for h in self.held.remove(&v).unwrap_or_default() {
                self.on_phase2(ctx, h.from, h.kind, h.round, h.instance, v, h.sn_in)?;
            }
        }
        Ok(())
    }

    /// Pass an accepted value on: to the successor, or to the coordinator
    /// once the last ring member has accepted.
    fn forward(&mut self, view: &RingView, instance: InstanceId, round: Round, value: Value, sn: u32) {
        if sn as usize + 1 >= view.quorum_size() {
            self.send(
                round.node,
                Body::Phase2b {
                    round,
                    instance,
                    value,
                },
            );
        } else {
            self.send_ring(
                view,
                Body::Phase2a2b {
                    round,
                    instance,
                    value,
                    sn,
                },
            );
        }
    }

    // ---- learner ------------------------------------------------------------

    fn on_learned(&mut self, ctx: &Context, instance: InstanceId, v: Value) -> Result<(), ProtocolError> {
        if let Some(l) = self.learner.as_mut() {
            l.last_progress = ctx.now;
        }
        if self.learned.contains_key(&instance) {
            return Ok(());
        }
        self.learned.insert(instance, v);
        if v != Value::Null {
            self.learned_at.insert(v, instance);
        }
        if self.role.is_acceptor() {
            self.coord.candidates.forget(v);
            if let Some(inst) = self.coord.instances.get_mut(&instance) {
                if inst.phase != InstancePhase::Closed {
                    inst.phase = InstancePhase::Closed;
                    if let Some(c) = inst.cval.filter(|c| *c != v) {
                        self.coord.candidates.release(c, instance);
                    }
                }
            }
            self.coord.open.remove(&instance);
            self.coord.recovering.remove(&instance);
            if self.learner.is_none() {
                if let Some(ids) = self.members(v) {
                    self.reply(&ids);
                }
            }
        }
        if self.learner.is_some() {
            if self.members(v).is_none() {
                self.fetch(ctx, v);
            }
            self.try_execute(ctx);
        }
        self.try_open(ctx)
    }

    fn fetch(&mut self, ctx: &Context, v: Value) {
        let Some(l) = self.learner.as_mut() else {
            return;
        };
        if !l.pending_fetch.insert(v) || self.held.contains_key(&v) {
            return;
        }
        self.query_payload(ctx, v);
    }

    fn query_payload(&mut self, ctx: &Context, v: Value) {
        if let Some(to) = self.random_coordinator(ctx) {
            self.send(
                to,
                Body::IdQuery {
                    value: Some(v),
                    instance: None,
                },
            );
        }
        self.timer(TimerKind::Fetch(v), self.cfg.fetch_retry);
    }

    fn try_execute(&mut self, ctx: &Context) {
        loop {
            let Some(l) = self.learner.as_ref() else {
                return;
            };
            let next = l.executed_upto + 1;
            let Some(&v) = self.learned.get(&next) else {
                return;
            };
            let Some(members) = self.members(v) else {
                self.fetch(ctx, v);
                return;
            };
            let l = self.learner.as_mut().expect("learner present");
            let requests = l.execute(members.iter().copied());
            l.last_progress = ctx.now;
            self.out.push(Action::Execute(Execution {
                instance: next,
                value: v,
                requests,
            }));
            self.reply(&members);
        }
    }

    // ---- timers -------------------------------------------------------------

    fn on_timer(&mut self, ctx: &Context, t: TimerKind) -> Result<(), ProtocolError> {
        match t {
            TimerKind::Fetch(v) => {
                let pending = self.held.contains_key(&v)
                    || self
                        .learner
                        .as_ref()
                        .is_some_and(|l| l.pending_fetch.contains(&v));
                if !pending {
                    return Ok(());
                }
                if self.members(v).is_some() {
                    if let Some(l) = self.learner.as_mut() {
                        l.pending_fetch.remove(&v);
                    }
                } else {
                    self.query_payload(ctx, v);
                }
            }
            TimerKind::Retransmit { instance, round } => self.on_retransmit(ctx, instance, round),
            TimerKind::BatchFlush(seq) => {
                if self.coord.batcher.seq == seq {
                    self.flush_batch(ctx)?;
                }
            }
            TimerKind::AckTimeout {
                instance,
                round,
                kind,
                d,
            } => self.on_ack_timeout(ctx, instance, round, kind, d),
            TimerKind::CatchupPoll => {
                if self.cfg.catchup_poll == 0 {
                    return Ok(());
                }
                let stalled = self
                    .learner
                    .as_ref()
                    .is_some_and(|l| ctx.now >= l.last_progress + self.cfg.catchup_poll);
                // A learner that lost both the value and its decision cannot
                // tell it is behind, so any stall triggers a query.
                if stalled {
                    let next = self.learner.as_ref().map_or(1, |l| l.executed_upto + 1);
                    if let Some(to) = self.random_coordinator(ctx) {
                        self.send(
                            to,
                            Body::IdQuery {
                                value: None,
                                instance: Some(next),
                            },
                        );
                    }
                }
                self.timer(TimerKind::CatchupPoll, self.cfg.catchup_poll);
            }
            TimerKind::ClientRetry(_) => {}
        }
        Ok(())
    }

    fn on_retransmit(&mut self, ctx: &Context, instance: InstanceId, round: Round) {
        if !self.leader || self.lsn != Some(round) {
            return;
        }
        let Some(view) = self.view(ctx, round) else {
            return;
        };
        let targets = self.phase1_targets(&view);
        let cap = self.cfg.retransmit_cap;
        let Some(inst) = self.coord.instances.get_mut(&instance) else {
            return;
        };
        if inst.crnd != Some(round) || matches!(inst.phase, InstancePhase::Closed | InstancePhase::Idle)
        {
            return;
        }
        inst.retransmits += 1;
        if inst.retransmits > cap {
            if !inst.escalated {
                inst.escalated = true;
                self.out.push(Action::ViewChangeRequested { round });
            }
            return;
        }
        match &inst.phase {
            InstancePhase::Phase1 { replies } => {
                let missing: Vec<NodeId> = targets
                    .into_iter()
                    .filter(|t| !replies.contains_key(t))
                    .collect();
                for to in missing {
                    self.send(to, Body::Phase1a { round, instance });
                }
            }
            InstancePhase::Phase2 => {
                let v = inst.cval.expect("phase 2 has a value");
                self.send_phase2a(ctx, instance, round, v);
            }
            _ => {}
        }
        self.timer(TimerKind::Retransmit { instance, round }, self.cfg.timeout);
    }

    fn on_ack_timeout(
        &mut self,
        ctx: &Context,
        instance: InstanceId,
        round: Round,
        kind: MessageKind,
        d: u32,
    ) {
        let key = (instance, round, kind);
        let Some(p) = self.pending_acks.get(&key) else {
            return;
        };
        if p.d != d {
            return;
        }
        let body = p.body.clone();
        match self.ring.on_ack_timeout(d, ctx.topology.acceptors.len()) {
            Ok(true) => self.out.push(Action::DistanceIncreased { d: self.ring.d }),
            Ok(false) => {}
            Err(_) => {
                self.pending_acks.remove(&key);
                return;
            }
        }
        let Some(view) = self.view(ctx, round) else {
            return;
        };
        self.send_ring(&view, body);
    }

    // ---- membership ---------------------------------------------------------

    fn on_install(&mut self, ctx: &Context, vi: ViewInstall) -> Result<(), ProtocolError> {
        self.lans = vi.lans;
        if !self.role.is_acceptor() {
            return Ok(());
        }
        let view = vi.view;
        let old = self.lsn;
        if old == Some(view.lsn) {
            return Ok(());
        }
        self.lsn = Some(view.lsn);
        self.highest = view.highest_instance;
        self.leader = view.leader == self.id;
        self.persist(RecordKind::Election {
            leader: self.leader,
            highest_instance: self.highest,
            lsn: self.lsn,
        });
        self.ring = DynamicRingState::default();
        self.pending_acks.clear();
        if self.leader {
            self.resume_leadership(ctx)?;
        } else {
            self.coord.candidates.release_all();
            self.coord.open.clear();
            self.coord.recovering.clear();
        }
        Ok(())
    }

    fn on_startup(&mut self, ctx: &Context) -> Result<(), ProtocolError> {
        if self.role.is_acceptor() {
            if let Some(lsn) = self.lsn {
                if lsn.node != self.id {
                    if let Some(view) = self.view(ctx, lsn) {
                        let resend: Vec<(InstanceId, AcceptorInstance)> = self
                            .acc
                            .iter()
                            .filter(|(_, st)| st.vrnd == Some(lsn))
                            .map(|(i, st)| (*i, *st))
                            .collect();
                        for (i, st) in resend {
                            if let Some(v) = st.vval {
                                self.forward(&view, i, lsn, v, st.sn);
                            }
                        }
                    }
                }
                if self.leader {
                    self.resume_leadership(ctx)?;
                }
            }
        }
        if self.learner.is_some() && self.cfg.catchup_poll > 0 {
            self.timer(TimerKind::CatchupPoll, self.cfg.catchup_poll);
        }
        Ok(())
    }
}

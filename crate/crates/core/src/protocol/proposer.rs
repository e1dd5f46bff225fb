//! Client-side proposer: sends each request to one coordinator and retries
//! elsewhere until an ID_REPLY arrives.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, Context, Input, TimerKind};
use crate::types::{Body, ClientState, Message, NodeId, Payload, Request, RequestId};

/// First coordinator a new request is sent to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Any acceptor site, uniformly.
    #[default]
    RandomCoordinator,
    RandomBroadcaster,
    Leader,
    /// A broadcaster other than the leader.
    NonLeaderBroadcaster,
    /// An acceptor site that is not a broadcaster.
    NonBroadcaster,
    Fixed(NodeId),
}

pub struct Proposer {
    id: NodeId,
    client: ClientState,
    policy: TargetPolicy,
    retry_after: u64,
    outstanding: BTreeMap<RequestId, Request>,
    completed: BTreeSet<RequestId>,
    rng: ChaCha8Rng,
}

impl Proposer {
    pub fn new(id: NodeId, client_id: u32, policy: TargetPolicy, retry_after: u64, seed: u64) -> Self {
        Proposer {
            id,
            client: ClientState::new(client_id),
            policy,
            retry_after,
            outstanding: BTreeMap::new(),
            completed: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn completed(&self) -> &BTreeSet<RequestId> {
        &self.completed
    }

    fn target(&mut self, ctx: &Context) -> Option<NodeId> {
        let acceptors = &ctx.topology.acceptors;
        let broadcasters: Vec<NodeId> = ctx.lans.broadcasters().into_iter().collect();
        let leader = ctx.current_view.map(|v| v.leader);
        let pick = |xs: Vec<NodeId>, rng: &mut ChaCha8Rng| xs.choose(rng).copied();
        match self.policy {
            TargetPolicy::RandomCoordinator => pick(acceptors.clone(), &mut self.rng),
            TargetPolicy::RandomBroadcaster => pick(broadcasters, &mut self.rng),
            TargetPolicy::Leader => leader,
            TargetPolicy::NonLeaderBroadcaster => {
                broadcasters.into_iter().find(|b| Some(*b) != leader)
            }
            TargetPolicy::NonBroadcaster => acceptors
                .iter()
                .copied()
                .find(|a| !broadcasters.contains(a)),
            TargetPolicy::Fixed(n) => Some(n),
        }
        .or_else(|| acceptors.first().copied())
    }

    /// Issue a fresh request with a zero-filled payload of `len` bytes.
    pub fn submit(&mut self, ctx: &Context, len: usize) -> (RequestId, Vec<Action>) {
        let id = self.client.fresh_request_id();
        let req = Request::new(id, Bytes::from(vec![0u8; len]));
        self.outstanding.insert(id, req.clone());
        let mut out = Vec::new();
        if let Some(to) = self.target(ctx) {
            out.push(Action::Emit(Message::unicast(
                self.id,
                to,
                Body::Request(Payload::Request(req)),
            )));
        }
        out.push(Action::SetTimer {
            timer: TimerKind::ClientRetry(id),
            after: self.retry_after,
        });
        (id, out)
    }

    pub fn handle(&mut self, ctx: &Context, input: Input) -> Vec<Action> {
        let mut out = Vec::new();
        match input {
            Input::Deliver(m) => {
                if let Body::IdReply { id } = m.body {
                    if self.outstanding.remove(&id).is_some() {
                        self.completed.insert(id);
                        out.push(Action::Completed(id));
                    }
                }
            }
            Input::Timer(TimerKind::ClientRetry(id)) => {
                if let Some(req) = self.outstanding.get(&id).cloned() {
                    let to = ctx.topology.acceptors.choose(&mut self.rng).copied();
                    if let Some(to) = to {
                        out.push(Action::Emit(Message::unicast(
                            self.id,
                            to,
                            Body::Request(Payload::Request(req)),
                        )));
                    }
                    out.push(Action::SetTimer {
                        timer: TimerKind::ClientRetry(id),
                        after: self.retry_after,
                    });
                }
            }
            _ => {}
        }
        out
    }
}

//! Exhaustive single-instance exploration: three acceptors, two rounds
//! with their own coordinators, every delivery order. A hand-written model
//! of the classic rules runs in lockstep with the crate's acceptor and
//! coordinator functions.

use std::collections::{BTreeSet, HashSet};

use htring::protocol::acceptor::{on_phase1a, on_phase2};
use htring::protocol::{choose_value, AcceptorInstance, Phase1Outcome, Phase2Outcome};
use htring::{NodeId, RequestId, Round, Value};

const ACCEPTORS: usize = 3;
const ROUNDS: usize = 2;
const QUORUM: usize = 2;

/// Model acceptor: promised round number and accepted (round, value).
type ModelAcceptor = (u8, Option<(u8, u8)>);
/// Implementation acceptor: rnd, vrnd, vval.
type ImplAcceptor = (Option<Round>, Option<Round>, Option<Value>);
type ModelReply = Option<Option<(u8, u8)>>;
type ImplReply = Option<(Option<Round>, Option<Value>)>;

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    model: [ModelAcceptor; ACCEPTORS],
    imp: [ImplAcceptor; ACCEPTORS],
    /// 1B replies per round and acceptor, as seen by the model.
    model_1b: [[ModelReply; ACCEPTORS]; ROUNDS],
    imp_1b: [[ImplReply; ACCEPTORS]; ROUNDS],
    /// Phase 2 value picked by each round's coordinator.
    model_pick: [Option<u8>; ROUNDS],
    imp_pick: [Option<Value>; ROUNDS],
    model_accepts: BTreeSet<(u8, usize, u8)>,
    imp_accepts: BTreeSet<(Round, usize, Value)>,
}

pub struct Outcome {
    pub model_learnable: BTreeSet<Value>,
    pub impl_learnable: BTreeSet<Value>,
    pub states: usize,
    pub mismatches: Vec<String>,
}

fn round(r: usize) -> Round {
    Round::new(r as u64 + 1, NodeId(r as u32 + 1))
}

/// Value proposed by a round's coordinator when it is free to choose.
fn own(r: usize) -> u8 {
    r as u8
}

fn value(v: u8) -> Value {
    Value::Request(RequestId::new(v as u32 + 1, 1))
}

fn imp_state(s: &ImplAcceptor) -> AcceptorInstance {
    AcceptorInstance {
        rnd: s.0,
        vrnd: s.1,
        vval: s.2,
        sn: 0,
    }
}

fn learnable<K: Ord + Copy, V: Ord + Copy>(accepts: &BTreeSet<(K, usize, V)>) -> BTreeSet<V> {
    let mut out = BTreeSet::new();
    for &(r, _, v) in accepts {
        let votes = accepts.iter().filter(|(r2, _, v2)| *r2 == r && *v2 == v).count();
        if votes >= QUORUM {
            out.insert(v);
        }
    }
    out
}

fn quorums() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
}

fn successors(s: &State, mismatches: &mut Vec<String>) -> Vec<State> {
    let mut next = Vec::new();
    for r in 0..ROUNDS {
        let rn = r as u8 + 1;
        for a in 0..ACCEPTORS {
            // PHASE 1A of round r reaches acceptor a.
            if s.model_1b[r][a].is_none() {
                let mut t = s.clone();
                let model_ok = rn > t.model[a].0;
                if model_ok {
                    t.model[a].0 = rn;
                    t.model_1b[r][a] = Some(t.model[a].1);
                }
                let mut st = imp_state(&t.imp[a]);
                let imp_ok = on_phase1a(&mut st, None, round(r)) == Phase1Outcome::Promise;
                if imp_ok {
                    t.imp_1b[r][a] = Some((st.vrnd, st.vval));
                }
                t.imp[a] = (st.rnd, st.vrnd, st.vval);
                if model_ok != imp_ok {
                    mismatches.push(format!("phase 1a round {rn} at {a}: model {model_ok}, impl {imp_ok}"));
                }
                if t != *s {
                    next.push(t);
                }
            }
            // PHASE 2A of round r reaches acceptor a.
            if let (Some(mv), Some(iv)) = (s.model_pick[r], s.imp_pick[r]) {
                let mut t = s.clone();
                // A vote already cast may be announced again; only new votes
                // are compared.
                let voted = t.model_accepts.contains(&(rn, a, mv));
                let model_new = rn >= t.model[a].0 && !voted;
                if rn >= t.model[a].0 {
                    t.model[a] = (rn, Some((rn, mv)));
                    t.model_accepts.insert((rn, a, mv));
                }
                let mut st = imp_state(&t.imp[a]);
                let imp_new = match on_phase2(&mut st, None, 1, round(r), iv) {
                    Ok(Phase2Outcome::Accepted) => true,
                    Ok(Phase2Outcome::Retransmission) => {
                        if !t.imp_accepts.contains(&(round(r), a, iv)) {
                            mismatches.push(format!("phase 2a round {rn} at {a}: repeat of a vote never cast"));
                        }
                        false
                    }
                    Ok(Phase2Outcome::Stale) => false,
                    Err(e) => {
                        mismatches.push(format!("phase 2a round {rn} at {a}: {e}"));
                        false
                    }
                };
                if imp_new {
                    t.imp_accepts.insert((round(r), a, iv));
                }
                t.imp[a] = (st.rnd, st.vrnd, st.vval);
                if model_new != imp_new {
                    mismatches.push(format!("phase 2a round {rn} at {a}: model {model_new}, impl {imp_new}"));
                }
                if t != *s {
                    next.push(t);
                }
            }
        }
        // Round r's coordinator picks a value from some quorum of replies.
        if s.model_pick[r].is_none() {
            for q in quorums() {
                if !q.iter().all(|&a| s.model_1b[r][a].is_some() && s.imp_1b[r][a].is_some()) {
                    continue;
                }
                let model_choice = q
                    .iter()
                    .filter_map(|&a| s.model_1b[r][a].flatten())
                    .max_by_key(|(vr, _)| *vr)
                    .map_or(own(r), |(_, v)| v);
                let replies: Vec<_> = q.iter().map(|&a| s.imp_1b[r][a].unwrap()).collect();
                let imp_choice = match choose_value(1, &replies) {
                    Ok(v) => v.unwrap_or(value(own(r))),
                    Err(e) => {
                        mismatches.push(format!("choose round {rn}: {e}"));
                        continue;
                    }
                };
                if value(model_choice) != imp_choice {
                    mismatches.push(format!(
                        "choose round {rn} quorum {q:?}: model {}, impl {imp_choice}",
                        value(model_choice)
                    ));
                }
                let mut t = s.clone();
                t.model_pick[r] = Some(model_choice);
                t.imp_pick[r] = Some(imp_choice);
                next.push(t);
            }
        }
    }
    next
}

pub fn explore() -> Outcome {
    let init = State {
        model: [(0, None); ACCEPTORS],
        imp: [(None, None, None); ACCEPTORS],
        model_1b: [[None; ACCEPTORS]; ROUNDS],
        imp_1b: [[None; ACCEPTORS]; ROUNDS],
        model_pick: [None; ROUNDS],
        imp_pick: [None; ROUNDS],
        model_accepts: BTreeSet::new(),
        imp_accepts: BTreeSet::new(),
    };
    let mut seen = HashSet::new();
    let mut stack = vec![init];
    let mut mismatches = Vec::new();
    let mut model_learnable = BTreeSet::new();
    let mut impl_learnable = BTreeSet::new();
    while let Some(s) = stack.pop() {
        if !seen.insert(s.clone()) {
            continue;
        }
        let m: BTreeSet<Value> = learnable(&s.model_accepts).into_iter().map(value).collect();
        let i = learnable(&s.imp_accepts);
        if m.len() > 1 || i.len() > 1 {
            mismatches.push(format!("two values chosen: model {m:?}, impl {i:?}"));
        }
        model_learnable.extend(m);
        impl_learnable.extend(i);
        stack.extend(successors(&s, &mut mismatches));
    }
    mismatches.sort();
    mismatches.dedup();
    Outcome {
        model_learnable,
        impl_learnable,
        states: seen.len(),
        mismatches,
    }
}

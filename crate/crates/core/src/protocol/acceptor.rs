//! Acceptor rules for one instance, as pure functions over its state.
//!
//! `floor` is the node's persisted election round. Having taken part in an
//! election the node treats that round as a promise for every instance, so
//! no coordinator with a lower round can start or complete an instance the
//! new leader may open directly in phase 2.

use crate::error::ProtocolError;
use crate::storage::RecordKind;
use crate::types::{InstanceId, Round, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcceptorInstance {
    pub rnd: Option<Round>,
    pub vrnd: Option<Round>,
    pub vval: Option<Value>,
    /// Ring position at which the value was accepted (0 for the leader).
    pub sn: u32,
}

impl AcceptorInstance {
    pub fn record(&self, instance: InstanceId) -> RecordKind {
        RecordKind::Acceptor {
            instance,
            rnd: self.rnd,
            vrnd: self.vrnd,
            vval: self.vval,
            sn: self.sn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase1Outcome {
    /// New promise: persist, then reply PHASE 1B.
    Promise,
    /// Duplicate 1A for the promised round: reply again without a write.
    Repeat,
    Deny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase2Outcome {
    /// New acceptance: persist, then forward.
    Accepted,
    /// Already accepted this round: forward again without a write.
    Retransmission,
    /// Round below the promise: drop.
    Stale,
}

pub fn on_phase1a(st: &mut AcceptorInstance, floor: Option<Round>, crnd: Round) -> Phase1Outcome {
    let crnd = Some(crnd);
    if crnd < floor {
        Phase1Outcome::Deny
    } else if st.rnd < crnd {
        st.rnd = crnd;
        Phase1Outcome::Promise
    } else if st.rnd == crnd {
        Phase1Outcome::Repeat
    } else {
        Phase1Outcome::Deny
    }
}

pub fn on_phase2(
    st: &mut AcceptorInstance,
    floor: Option<Round>,
    instance: InstanceId,
    crnd: Round,
    value: Value,
) -> Result<Phase2Outcome, ProtocolError> {
    if st.vrnd == Some(crnd) {
        return match st.vval {
            Some(v) if v != value => Err(ProtocolError::RoundValueChanged {
                instance,
                round: crnd,
                accepted: v,
                received: value,
            }),
            _ => Ok(Phase2Outcome::Retransmission),
        };
    }
    if Some(crnd) >= st.rnd.max(floor) {
        st.rnd = Some(crnd);
        st.vrnd = Some(crnd);
        st.vval = Some(value);
        Ok(Phase2Outcome::Accepted)
    } else {
        Ok(Phase2Outcome::Stale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{NodeId, RequestId};
    use proptest::prelude::*;

    fn r(seq: u64, node: u32) -> Round {
        Round::new(seq, NodeId(node))
    }

    fn v(seq: u64) -> Value {
        Value::Request(RequestId::new(0, seq))
    }

    #[test]
    fn promise_then_repeat_then_deny_lower() {
        let mut st = AcceptorInstance::default();
        assert_eq!(on_phase1a(&mut st, None, r(2, 1)), Phase1Outcome::Promise);
        assert_eq!(on_phase1a(&mut st, None, r(2, 1)), Phase1Outcome::Repeat);
        assert_eq!(on_phase1a(&mut st, None, r(1, 3)), Phase1Outcome::Deny);
        assert_eq!(st.rnd, Some(r(2, 1)));
    }

    #[test]
    fn election_floor_blocks_older_rounds() {
        let mut st = AcceptorInstance::default();
        let floor = Some(r(3, 2));
        assert_eq!(on_phase1a(&mut st, floor, r(2, 1)), Phase1Outcome::Deny);
        assert_eq!(
            on_phase2(&mut st, floor, 1, r(2, 1), v(1)).unwrap(),
            Phase2Outcome::Stale
        );
        assert_eq!(
            on_phase2(&mut st, floor, 1, r(3, 2), v(1)).unwrap(),
            Phase2Outcome::Accepted
        );
    }

    #[test]
    fn phase2_accepts_at_or_above_promise() {
        let mut st = AcceptorInstance::default();
        on_phase1a(&mut st, None, r(2, 1));
        assert_eq!(
            on_phase2(&mut st, None, 1, r(1, 1), v(1)).unwrap(),
            Phase2Outcome::Stale
        );
        assert_eq!(
            on_phase2(&mut st, None, 1, r(2, 1), v(2)).unwrap(),
            Phase2Outcome::Accepted
        );
        assert_eq!(
            on_phase2(&mut st, None, 1, r(2, 1), v(2)).unwrap(),
            Phase2Outcome::Retransmission
        );
        assert!(on_phase2(&mut st, None, 1, r(2, 1), v(3)).is_err());
    }

    #[derive(Clone, Debug)]
    enum Op {
        P1(u64),
        P2(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (1u64..6).prop_map(Op::P1),
            (1u64..6).prop_map(Op::P2),
        ]
    }

    proptest! {
        #[test]
        fn promises_are_monotone_and_bound_acceptance(
            ops in proptest::collection::vec(op(), 1..40),
            floor in proptest::option::of(1u64..4),
        ) {
            let floor = floor.map(|f| r(f, 0));
            let mut st = AcceptorInstance::default();
            for o in ops {
                let before = st;
                match o {
                    Op::P1(s) => {
                        let out = on_phase1a(&mut st, floor, r(s, 0));
                        if out == Phase1Outcome::Promise {
                            prop_assert!(Some(r(s, 0)) >= floor);
                        }
                    }
                    Op::P2(s) => {
                        // One value per round, as a correct coordinator sends.
                        let out = on_phase2(&mut st, floor, 1, r(s, 0), v(s)).unwrap();
                        if out == Phase2Outcome::Accepted {
                            prop_assert!(Some(r(s, 0)) >= before.rnd);
                            prop_assert!(Some(r(s, 0)) >= floor);
                        }
                    }
                }
                prop_assert!(st.rnd >= before.rnd);
                prop_assert!(st.vrnd >= before.vrnd);
                prop_assert!(st.vrnd <= st.rnd);
            }
        }
    }
}

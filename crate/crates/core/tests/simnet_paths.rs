use htring::protocol::{ForwardPolicy, ProtocolConfig, TargetPolicy};
use htring::simnet::hops::HopIndex;
use htring::simnet::{trace, ClientSpec, FaultProfile, SimSetup, World};
use htring::{NodeId, RequestId};

fn setup(policy: TargetPolicy, forward: ForwardPolicy, lans: u32) -> SimSetup {
    SimSetup {
        seed: 7,
        n: 5,
        lans,
        learners_only: 0,
        colocated_learners: true,
        clients: vec![ClientSpec {
            policy,
            requests: vec![(10, 64)],
        }],
        protocol: ProtocolConfig {
            forward_policy: forward,
            ..ProtocolConfig::default()
        },
        faults: FaultProfile::default(),
        detect_delay: 5,
        max_ticks: 10_000,
        record_crash: None,
    }
}

fn hops(s: SimSetup) -> (usize, usize) {
    let mut w = World::new(s);
    let stats = w.run();
    assert!(stats.done, "{stats:?}\n{}", trace::render(w.trace()));
    let idx = HopIndex::new(w.trace());
    let lat = idx.first_latency(1, Some(NodeId(1))).unwrap().len();
    let resp = idx.response(RequestId::new(0, 1)).unwrap().len();
    (lat, resp)
}

#[test]
fn leader_target() {
    assert_eq!(hops(setup(TargetPolicy::Leader, ForwardPolicy::Random, 2)), (5, 5));
}

#[test]
fn broadcaster_target() {
    assert_eq!(
        hops(setup(TargetPolicy::NonLeaderBroadcaster, ForwardPolicy::Random, 2)),
        (6, 7)
    );
}

#[test]
fn forward_to_leader() {
    assert_eq!(
        hops(setup(TargetPolicy::NonBroadcaster, ForwardPolicy::Leader, 2)),
        (6, 7)
    );
}

#[test]
fn forward_to_broadcaster() {
    assert_eq!(
        hops(setup(TargetPolicy::NonBroadcaster, ForwardPolicy::NonLeader, 2)),
        (7, 8)
    );
}

#![allow(dead_code)]

pub mod synod;

use htring::harness::{ClientGroup, Scenario};
use htring::membership::RingMode;
use htring::protocol::{ForwardPolicy, ProtocolConfig, TargetPolicy};
use htring::simnet::{CrashSpec, FaultProfile};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Faults stop here; every crash and restart happens earlier.
pub const QUIESCENCE: u64 = 1_500;

/// A lossy, duplicating, reordering run with a minority of crashes, the
/// initial leader among them for roughly half the seeds.
pub fn fault_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_fa17);
    let n = [3, 5, 7][(seed % 3) as usize];
    let mut nodes: Vec<u32> = (2..=n as u32).collect();
    nodes.shuffle(&mut rng);
    let k = rng.gen_range(1..=(n - 1) / 2);
    let mut victims: Vec<u32> = nodes[..k].to_vec();
    if rng.gen_bool(0.5) {
        victims[0] = 1;
    }
    let crashes = victims
        .iter()
        .map(|&node| {
            let at = rng.gen_range(12..600);
            CrashSpec {
                node,
                at,
                restart_at: rng.gen_bool(0.75).then(|| at + rng.gen_range(20..600)),
            }
        })
        .collect();
    let policies = [
        TargetPolicy::RandomCoordinator,
        TargetPolicy::Leader,
        TargetPolicy::NonBroadcaster,
        TargetPolicy::RandomBroadcaster,
    ];
    let clients = (0..2)
        .map(|_| ClientGroup {
            count: rng.gen_range(1..=3),
            policy: *policies.choose(&mut rng).unwrap(),
            requests: rng.gen_range(2..=8),
            payload: rng.gen_range(16..=512),
            start: rng.gen_range(10..200),
            interval: rng.gen_range(5..60),
        })
        .collect();
    Scenario {
        seed,
        n,
        lans: rng.gen_range(1..=n as u32),
        max_ticks: 100_000,
        detect_delay: rng.gen_range(10..40),
        clients,
        protocol: ProtocolConfig {
            batching: rng.gen_bool(0.3),
            max_batch_size: rng.gen_range(2..=6),
            pipeline_depth: rng.gen_range(1..=8),
            ring_mode: if rng.gen_bool(0.25) {
                RingMode::Dynamic
            } else {
                RingMode::Static
            },
            forward_policy: *[ForwardPolicy::Random, ForwardPolicy::Leader, ForwardPolicy::NonLeader]
                .choose(&mut rng)
                .unwrap(),
            ..ProtocolConfig::default()
        },
        faults: FaultProfile {
            loss: rng.gen_range(0.0..=0.3),
            duplication: rng.gen_range(0.0..=0.2),
            delay_min: 1,
            delay_max: rng.gen_range(1..=4),
            reorder: true,
            crashes,
            isolations: Vec::new(),
            quiescence: Some(QUIESCENCE),
        },
        ..Scenario::default()
    }
}

/// Single-request lossless scenario on `n` acceptors.
pub fn path_scenario(n: usize, policy: TargetPolicy, forward: ForwardPolicy) -> Scenario {
    Scenario {
        seed: 11,
        n,
        lans: 2,
        detect_delay: 5,
        max_ticks: 10_000,
        clients: vec![ClientGroup {
            count: 1,
            policy,
            requests: 1,
            payload: 64,
            start: 10,
            interval: 1,
        }],
        protocol: ProtocolConfig {
            forward_policy: forward,
            ..ProtocolConfig::default()
        },
        ..Scenario::default()
    }
}

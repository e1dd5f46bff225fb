//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod support;

use std::collections::{BTreeMap, BTreeSet};

use htring::harness::{self, check_progress, check_safety, Check, ClientGroup, Outcome, Scenario};
use htring::membership::{majority, RingMode};
use htring::metrics::{baseline_leader_cost, Baseline};
use htring::protocol::{ForwardPolicy, ProtocolConfig, TargetPolicy};
use htring::simnet::{CrashSpec, Event, RecordCrash, World};
use htring::{NodeId, Value};
use rayon::prelude::*;

use support::{fault_scenario, path_scenario};

const SAFETY_RUNS: u64 = 500;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, pass: bool, detail: impl Into<String>) -> Line {
    Line {
        id,
        pass,
        detail: detail.into(),
    }
}

fn hops(s: &Scenario) -> (Option<usize>, Option<usize>) {
    let r = harness::simulate(s);
    (r.summary.latency_hops, r.summary.response_hops)
}

fn latency() -> Line {
    let cases = [
        ("leader", TargetPolicy::Leader, ForwardPolicy::Random, 5),
        ("broadcaster", TargetPolicy::NonLeaderBroadcaster, ForwardPolicy::Random, 6),
        ("forwarded", TargetPolicy::NonBroadcaster, ForwardPolicy::NonLeader, 7),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, policy, fwd, want) in cases {
        let got = hops(&path_scenario(5, policy, fwd)).0;
        pass &= got == Some(want);
        let shown = got.map_or("-".to_string(), |h| h.to_string());
        parts.push(format!("{name} {shown} (want {want})"));
    }
    line("latency n=5 lossless", pass, parts.join(", "))
}

fn response() -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [3, 5, 7] {
        let m = majority(n);
        let cases = [
            (TargetPolicy::Leader, ForwardPolicy::Random, m + 2),
            (TargetPolicy::NonLeaderBroadcaster, ForwardPolicy::Random, m + 4),
            (TargetPolicy::NonBroadcaster, ForwardPolicy::Leader, m + 4),
            (TargetPolicy::NonBroadcaster, ForwardPolicy::NonLeader, m + 5),
        ];
        let got: Vec<Option<usize>> = cases
            .iter()
            .map(|(p, f, _)| hops(&path_scenario(n, *p, *f)).1)
            .collect();
        let want: Vec<Option<usize>> = cases.iter().map(|c| Some(c.2)).collect();
        pass &= got == want;
        parts.push(format!("m={m} {got:?}"));
    }
    line(
        "response time m+2/m+4/m+4/m+5",
        pass,
        parts.join("; ").replace("Some(", "").replace(')', ""),
    )
}

struct FaultRuns {
    runs: usize,
    violations: Vec<(u64, String)>,
    stalled: Vec<(u64, String)>,
}

fn fault_runs() -> FaultRuns {
    let results: Vec<(u64, Option<String>, Option<String>)> = (0..SAFETY_RUNS)
        .into_par_iter()
        .map(|seed| {
            let r = harness::simulate(&fault_scenario(seed));
            let v = r.verdict.violations.first().map(|v| v.to_string());
            let p = (!r.progress.ok()).then(|| format!("{:?}", r.progress.missing));
            (seed, v, p)
        })
        .collect();
    let mut out = FaultRuns {
        runs: results.len(),
        violations: Vec::new(),
        stalled: Vec::new(),
    };
    for (seed, v, p) in results {
        if let Some(v) = v {
            out.violations.push((seed, v));
        }
        if let Some(p) = p {
            out.stalled.push((seed, p));
        }
    }
    out
}

fn first_seeds(xs: &[(u64, String)]) -> String {
    xs.iter()
        .take(3)
        .map(|(s, d)| format!("seed {s}: {d}"))
        .collect::<Vec<_>>()
        .join("; ")
}

fn safety(f: &FaultRuns) -> Line {
    line(
        "safety under loss/dup/reorder/crash",
        f.violations.is_empty(),
        format!(
            "{} runs, {} with violations {}",
            f.runs,
            f.violations.len(),
            first_seeds(&f.violations)
        ),
    )
}

fn progress(f: &FaultRuns) -> Line {
    line(
        "progress after quiescence",
        f.stalled.is_empty(),
        format!(
            "{} runs, {} stalled {}",
            f.runs,
            f.stalled.len(),
            first_seeds(&f.stalled)
        ),
    )
}

fn crash_sweep() -> Line {
    let base = Scenario {
        n: 5,
        lans: 2,
        detect_delay: 10,
        max_ticks: 50_000,
        clients: vec![ClientGroup {
            count: 3,
            requests: 1,
            payload: 32,
            start: 10,
            interval: 1,
            policy: TargetPolicy::RandomCoordinator,
        }],
        ..Scenario::default()
    };
    let clean = {
        let mut w = World::new(base.to_setup());
        w.run();
        w.into_trace().len()
    };
    let failures: Vec<String> = (0..clean)
        .into_par_iter()
        .filter_map(|k| {
            let mut setup = base.to_setup();
            setup.record_crash = Some(RecordCrash {
                node: NodeId(1),
                record: k,
                restart_after: Some(25),
            });
            let mut w = World::new(setup);
            let stats = w.run();
            let t = w.into_trace();
            let v = check_safety(&t);
            let p = check_progress(&t, &stats.surviving_learners);
            if !v.ok() {
                Some(format!("index {k}: {}", v.violations[0]))
            } else if !p.ok() || stats.completed != 3 {
                Some(format!("index {k}: completed {} missing {:?}", stats.completed, p.missing))
            } else {
                None
            }
        })
        .collect();
    line(
        "leader crash at every event index",
        failures.is_empty(),
        format!(
            "{clean} indices, {} failed {}",
            failures.len(),
            failures.iter().take(3).cloned().collect::<Vec<_>>().join("; ")
        ),
    )
}

fn cost_scenario(payload: usize) -> Scenario {
    Scenario {
        seed: 3,
        n: 41,
        lans: 8,
        max_ticks: 200_000,
        clients: vec![ClientGroup {
            count: 10,
            requests: 100,
            payload,
            start: 10,
            interval: 10,
            policy: TargetPolicy::RandomCoordinator,
        }],
        // Deep enough to cover a 21-member ring, so clients never time out.
        protocol: ProtocolConfig {
            pipeline_depth: 64,
            ..ProtocolConfig::default()
        },
        ..Scenario::default()
    }
}

fn leader_cost() -> Line {
    let runs: Vec<_> = [256, 1024, 4096]
        .into_par_iter()
        .map(|b| (b, harness::simulate(&cost_scenario(b))))
        .collect();
    let main = &runs[1].1;
    let leader = main.leader_load().expect("leader has traffic").total;
    let (r, m) = (1000, majority(41) as u64);
    let classical = baseline_leader_cost(Baseline::Classical, r, m, 1024);
    let ring = baseline_leader_cost(Baseline::Ring, r, m, 1024);
    let below = leader.msgs() < classical.0.min(ring.0) && leader.bytes() < classical.1.min(ring.1);
    let stripped: Vec<u64> = runs
        .iter()
        .map(|(_, rep)| rep.leader_load().map_or(0, |l| l.without_dissemination().bytes()))
        .collect();
    let flat = stripped.windows(2).all(|w| w[0] == w[1]);
    let ok = runs.iter().all(|(_, rep)| rep.outcome() == Outcome::Ok && rep.stats.completed == 1000);
    line(
        "leader cost R=1000 B=1024 n=41",
        below && flat && ok,
        format!(
            "leader {} msgs {} bytes; classical {} / {}; ring {} / {}; without dissemination {:?} for B=256/1024/4096",
            leader.msgs(),
            leader.bytes(),
            classical.0,
            classical.1,
            ring.0,
            ring.1,
            stripped
        ),
    )
}

fn synod() -> Line {
    let o = support::synod::explore();
    let pass = o.mismatches.is_empty() && !o.model_learnable.is_empty() && o.model_learnable == o.impl_learnable;
    let show = |s: &BTreeSet<Value>| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    line(
        "synod oracle 3 acceptors 2 rounds",
        pass,
        format!(
            "{} states; oracle {{{}}}, implementation {{{}}}; {} mismatches {}",
            o.states,
            show(&o.model_learnable),
            show(&o.impl_learnable),
            o.mismatches.len(),
            o.mismatches.first().cloned().unwrap_or_default()
        ),
    )
}

fn determinism() -> Line {
    let s = fault_scenario(42);
    let a = harness::simulate(&s);
    let b = harness::simulate(&s);
    let same = a.trace_text() == b.trace_text() && a.csv() == b.csv();
    let other = harness::simulate(&fault_scenario(43)).trace_text() != a.trace_text();
    line(
        "same seed, same trace and csv",
        same && other,
        format!("{} trace lines, identical {same}, other seed differs {other}", a.trace.len()),
    )
}

fn dynamic_ring() -> Line {
    let mut s = Scenario {
        n: 5,
        lans: 2,
        detect_delay: 10,
        max_ticks: 50_000,
        clients: vec![ClientGroup {
            count: 2,
            requests: 5,
            payload: 64,
            start: 20,
            interval: 4,
            policy: TargetPolicy::RandomCoordinator,
        }],
        protocol: ProtocolConfig {
            ring_mode: RingMode::Dynamic,
            ..ProtocolConfig::default()
        },
        ..Scenario::default()
    };
    let victim = World::new(s.to_setup()).current_view().expect("view").ring[1];
    s.faults.crashes = vec![CrashSpec {
        node: victim.0,
        at: 5,
        restart_at: None,
    }];
    let r = harness::simulate(&s);
    let pass = r.outcome() == Outcome::Ok
        && r.stats.completed == 10
        && r.stats.views == 1
        && r.stats.distance_increments == 1;
    line(
        "dynamic ring with crashed member",
        pass,
        format!(
            "crashed {victim}; completed {}/10, views {}, d increments {}, {:?}",
            r.stats.completed,
            r.stats.views,
            r.stats.distance_increments,
            r.outcome()
        ),
    )
}

fn batching() -> Line {
    let s = Scenario {
        n: 5,
        lans: 1,
        clients: vec![ClientGroup {
            count: 64,
            requests: 1,
            payload: 100,
            start: 10,
            interval: 1,
            policy: TargetPolicy::RandomBroadcaster,
        }],
        protocol: ProtocolConfig {
            batching: true,
            max_batch_size: 8,
            ..ProtocolConfig::default()
        },
        ..Scenario::default()
    };
    let r = harness::simulate(&s);
    let mut per_node: BTreeMap<NodeId, Vec<(u64, Value)>> = BTreeMap::new();
    for rec in &r.trace {
        if let Event::Exec {
            node,
            instance,
            value,
            ..
        } = &rec.event
        {
            per_node.entry(*node).or_default().push((*instance, *value));
        }
    }
    let instances: BTreeSet<u64> = per_node.values().flatten().map(|(i, _)| *i).collect();
    let orders: BTreeSet<&Vec<(u64, Value)>> = per_node.values().collect();
    let pass = r.outcome() == Outcome::Ok
        && r.stats.completed == 64
        && instances.len() == 8
        && orders.len() == 1
        && per_node.len() == 5
        && r.verdict.holds(Check::Consistency);
    line(
        "batching 64 requests, batch size 8",
        pass,
        format!(
            "{} instances, {} learners, {} distinct orders, completed {}",
            instances.len(),
            per_node.len(),
            orders.len(),
            r.stats.completed
        ),
    )
}

fn main() {
    let faults = fault_runs();
    let lines = vec![
        latency(),
        response(),
        safety(&faults),
        progress(&faults),
        crash_sweep(),
        leader_cost(),
        synod(),
        determinism(),
        dynamic_ring(),
        batching(),
    ];
    let mut failed = 0;
    for (k, l) in lines.iter().enumerate() {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {}: {}", k + 1, l.id, l.detail);
        failed += usize::from(!l.pass);
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

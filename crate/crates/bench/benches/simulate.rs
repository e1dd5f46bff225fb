use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use htring::harness::{self, check_safety, ClientGroup, Scenario};

fn scenario(n: usize, requests: usize) -> Scenario {
    Scenario {
        n,
        lans: 2,
        clients: vec![ClientGroup {
            count: 4,
            requests,
            payload: 1024,
            interval: 2,
            ..ClientGroup::default()
        }],
        ..Scenario::default()
    }
}

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    for n in [3, 5, 9] {
        let s = scenario(n, 50);
        g.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| harness::simulate(black_box(s)))
        });
    }
    g.finish();
}

fn check(c: &mut Criterion) {
    let r = harness::simulate(&scenario(5, 100));
    c.bench_function("check_safety/n5-400req", |b| b.iter(|| check_safety(black_box(&r.trace))));
    let text = r.trace_text();
    c.bench_function("replay/n5-400req", |b| b.iter(|| harness::replay(black_box(&text))));
}

criterion_group!(benches, simulate, check);
criterion_main!(benches);

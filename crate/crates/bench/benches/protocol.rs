use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::hint::black_box;
use toplink_bench::{random, random_source, ring};
use toplink_core::{
    bpd::{discover_paths, run_repair_cycle},
    default_threshold,
    overlay::form_groups,
    toplink::parse_toplink,
    BpdConfig, FaultSchedule, SimConfig, Strategy, World,
};

fn discovery(c: &mut Criterion) {
    let mut g = c.benchmark_group("discover_paths");
    for n in [8, 16, 32] {
        let asg = form_groups(&random(n, 3, 1));
        let cfg = BpdConfig::new(default_threshold(n).unwrap());
        g.bench_with_input(BenchmarkId::from_parameter(n), &asg, |b, asg| b.iter(|| discover_paths(black_box(asg), &cfg).unwrap()));
    }
    g.finish();
}

fn repair_cycle(c: &mut Criterion) {
    let mut g = c.benchmark_group("repair_cycle_ring");
    for n in [8, 16, 32] {
        let asg = form_groups(&ring(n));
        let cfg = BpdConfig::new(default_threshold(n).unwrap());
        g.bench_with_input(BenchmarkId::from_parameter(n), &asg, |b, asg| {
            b.iter_batched(|| asg.clone(), |mut a| run_repair_cycle(&mut a, &cfg).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();
}

fn simulation_round(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulation_round");
    let graph = random(16, 3, 2);
    let strategies = [
        Strategy::AllToAll,
        Strategy::Gossip { fanout: 3 },
        Strategy::Unmodified,
        Strategy::Bpd(BpdConfig::new(default_threshold(16).unwrap())),
    ];
    for s in strategies {
        // start after round 0 so the initial repair cycle is not measured
        let mut w = World::new(SimConfig::default(), &graph, s.clone(), FaultSchedule::default()).unwrap();
        w.step_round();
        g.bench_function(s.name(), |b| b.iter_batched(|| w.clone(), |mut w| w.step_round(), BatchSize::SmallInput));
    }
    g.finish();
}

fn parse(c: &mut Criterion) {
    let src = random_source(64, 4);
    c.bench_function("parse_random64", |b| b.iter(|| parse_toplink(black_box(&src)).unwrap()));
}

criterion_group!(benches, discovery, repair_cycle, simulation_round, parse);
criterion_main!(benches);

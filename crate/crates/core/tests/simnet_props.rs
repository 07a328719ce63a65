mod common;

use common::*;
use toplink_core::{
    simnet::FaultEvent, BpdConfig, Cost, FaultAction, FaultSchedule, MembershipKind, SimConfig, Strategy, World,
};

fn cfg(rounds: u64, seed: u64) -> SimConfig {
    SimConfig { n_rounds: rounds, seed, ..SimConfig::default() }
}

fn strategies() -> Vec<Strategy> {
    vec![
        Strategy::AllToAll,
        Strategy::Gossip { fanout: 3 },
        Strategy::Unmodified,
        Strategy::Bpd(BpdConfig::new(Cost::from_integer(3))),
    ]
}

fn crash(round: u64, node: &str) -> FaultEvent {
    FaultEvent { round, node: n(node), action: FaultAction::Crash }
}

#[test]
fn same_seed_same_trace() {
    for s in strategies() {
        let sched = FaultSchedule::new(vec![crash(20, "n3")]).unwrap();
        let a = World::new(cfg(80, 9), &base6(), s.clone(), sched.clone()).unwrap().run();
        let b = World::new(cfg(80, 9), &base6(), s.clone(), sched).unwrap().run();
        assert_eq!(a, b, "{s}");
    }
}

#[test]
fn estimates_stay_in_initial_hull() {
    for s in strategies() {
        let mut w = World::new(cfg(150, 4), &base6(), s.clone(), FaultSchedule::default()).unwrap();
        let lo = w.initial_values().values().copied().fold(f64::INFINITY, f64::min);
        let hi = w.initial_values().values().copied().fold(f64::NEG_INFINITY, f64::max);
        for st in w.run() {
            assert!(st.x.values().all(|x| *x >= lo - 1e-9 && *x <= hi + 1e-9), "{s} round {}", st.round);
        }
    }
}

#[test]
fn symmetric_exchange_conserves_the_sum() {
    let mut w = World::new(cfg(60, 2), &base6(), Strategy::AllToAll, FaultSchedule::default()).unwrap();
    let total: f64 = w.initial_values().values().sum();
    for st in w.run() {
        assert!((st.x.values().sum::<f64>() - total).abs() < 1e-9);
    }
}

#[test]
fn uniform_all_to_all_hits_the_mean() {
    let mut w = World::new(cfg(200, 5), &base6(), Strategy::AllToAll, FaultSchedule::default()).unwrap();
    w.consensus_mut().uniform_weight = Some(1.0 / 6.0);
    let mean = w.initial_values().values().sum::<f64>() / 6.0;
    let last = w.run().pop().unwrap();
    assert!(last.x.values().all(|x| (x - mean).abs() < 1e-9));
}

#[test]
fn failures_are_detected_after_the_configured_delay() {
    for detection in [1, 3] {
        let c = SimConfig { detection_rounds: detection, ..cfg(30, 0) };
        let sched = FaultSchedule::new(vec![crash(10, "n3")]).unwrap();
        let mut w = World::new(c, &base6(), Strategy::Unmodified, sched).unwrap();
        w.run();
        let left: Vec<u64> =
            w.events().iter().filter(|e| e.kind == MembershipKind::MemberLeft && e.node == n("n3")).map(|e| e.round).collect();
        assert!(!left.is_empty());
        assert!(left.iter().all(|r| *r == 10 + detection), "{left:?}");
    }
}

#[test]
fn traffic_follows_the_live_membership() {
    let sched = FaultSchedule::new(vec![crash(10, "n3")]).unwrap();
    let stats = World::new(cfg(15, 0), &base6(), Strategy::AllToAll, sched).unwrap().run();
    assert_eq!(stats[5].messages, 30);
    // detection at round 11 removes n3 from everyone's peer list
    assert_eq!(stats[12].messages, 20);
    assert_eq!(stats[12].bytes, 20 * 64);
}

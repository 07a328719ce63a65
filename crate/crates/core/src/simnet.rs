//! Deterministic round-based simulator.
//!
//! Application values move once per round: sent in round `k`, delivered in
//! round `k + 1`. Protocol messages move faster, one hop per
//! `per_hop_delay_ms`, so a round hosts several control-plane hops.
//!
//! Order within a round: faults, failure detection, delivery, consensus
//! update, control plane, sends, statistics.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    bpd::{Bpd, BpdError, RoundReport},
    graph::{DirectedGraph, NodeId},
    metrics::{dissemination_efficiency, DeHistory, Provenance},
    overlay::{form_groups, GroupAssignment, GroupId, MembershipEvent, MembershipKind, Role},
    workloads::{strategy_emit, ConsensusState, Strategy},
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub round_period_ms: f64,
    pub n_rounds: u64,
    pub seed: u64,
    pub payload_bytes: u64,
    pub detection_rounds: u64,
    /// `None` means twice the node count.
    pub de_window_rounds: Option<u64>,
    pub per_hop_delay_ms: f64,
    pub epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            round_period_ms: 10.0,
            n_rounds: 1000,
            seed: 0,
            payload_bytes: 64,
            detection_rounds: 1,
            de_window_rounds: None,
            per_hop_delay_ms: 0.6,
            epsilon: 0.5,
        }
    }
}

impl SimConfig {
    /// Control-plane hops that fit in one round.
    pub fn substeps(&self) -> u32 {
        ((self.round_period_ms / self.per_hop_delay_ms).floor() as u32).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    Crash,
    Recover,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub round: u64,
    pub node: NodeId,
    pub action: FaultAction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSchedule {
    events: Vec<FaultEvent>,
}

impl FaultSchedule {
    /// Sorts by round (stable) and rejects crashing a node twice without a
    /// recovery in between.
    pub fn new(mut events: Vec<FaultEvent>) -> Result<Self, SimError> {
        events.sort_by_key(|e| e.round);
        let mut down = BTreeSet::new();
        for e in &events {
            match e.action {
                FaultAction::Crash if !down.insert(e.node.clone()) => {
                    return Err(SimError::AlreadyCrashed(e.node.clone()));
                }
                FaultAction::Recover => {
                    down.remove(&e.node);
                }
                _ => {}
            }
        }
        Ok(FaultSchedule { events })
    }

    pub fn events(&self) -> &[FaultEvent] {
        &self.events
    }

    pub fn at(&self, round: u64) -> impl Iterator<Item = &FaultEvent> {
        self.events.iter().filter(move |e| e.round == round)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is already down")]
    AlreadyCrashed(NodeId),
    #[error("{0} is unreachable")]
    Unreachable(NodeId),
    #[error(transparent)]
    Bpd(#[from] BpdError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u64,
    /// Application messages sent, one per destination.
    pub messages: u64,
    pub control_messages: u64,
    pub bytes: u64,
    pub per_node_de: BTreeMap<NodeId, f64>,
    /// Hop counts of the information held by live nodes about live sources.
    pub hops_histogram: BTreeMap<u32, u64>,
    /// Estimates of the live nodes after this round's update.
    pub x: BTreeMap<NodeId, f64>,
}

impl RoundStats {
    pub fn mean_de(&self) -> f64 {
        if self.per_node_de.is_empty() {
            return 0.0;
        }
        self.per_node_de.values().sum::<f64>() / self.per_node_de.len() as f64
    }

    pub fn min_de(&self) -> f64 {
        self.per_node_de.values().copied().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0)
    }
}

/// Time from a crash until the fault-tolerance handlers had nothing left to
/// do, in (fractional) rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairDelay {
    pub node: NodeId,
    pub crash_round: u64,
    pub delay_rounds: f64,
}

#[derive(Clone, Debug)]
struct AppMsg {
    from: NodeId,
    to: NodeId,
    value: f64,
    provenance: BTreeMap<NodeId, Provenance>,
}

#[derive(Clone)]
pub struct World {
    cfg: SimConfig,
    strategy: Strategy,
    schedule: FaultSchedule,
    asg: GroupAssignment,
    universe: Vec<NodeId>,
    up: BTreeSet<NodeId>,
    known: BTreeSet<NodeId>,
    detect_at: BTreeMap<NodeId, (u64, u64)>,
    saved: BTreeMap<NodeId, Vec<(GroupId, Role)>>,
    bpd: Option<Bpd>,
    state: ConsensusState,
    initial: BTreeMap<NodeId, f64>,
    inbox: Vec<AppMsg>,
    history: DeHistory,
    rng: ChaCha8Rng,
    round: u64,
    events: Vec<MembershipEvent>,
    open_repairs: Vec<(NodeId, u64)>,
    repairs: Vec<RepairDelay>,
    initial_edges: BTreeSet<(NodeId, NodeId)>,
    trace: Option<Vec<String>>,
}

impl World {
    pub fn new(cfg: SimConfig, graph: &DirectedGraph, strategy: Strategy, schedule: FaultSchedule) -> Result<Self, SimError> {
        let universe: Vec<NodeId> = graph.nodes().cloned().collect();
        for e in schedule.events() {
            if !graph.contains_node(&e.node) {
                return Err(SimError::UnknownNode(e.node.clone()));
            }
        }
        let bpd = match &strategy {
            Strategy::Bpd(c) => {
                c.validate(graph.max_weight())?;
                Some(Bpd::new(c.clone()).with_substeps(cfg.substeps()))
            }
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = ConsensusState::random(universe.iter().cloned(), cfg.epsilon, &mut rng);
        let window = cfg.de_window_rounds.unwrap_or(2 * universe.len() as u64).max(1);
        let all: BTreeSet<NodeId> = universe.iter().cloned().collect();
        Ok(World {
            initial: state.x.clone(),
            state,
            strategy,
            schedule,
            asg: form_groups(graph),
            up: all.clone(),
            known: all,
            detect_at: BTreeMap::new(),
            saved: BTreeMap::new(),
            bpd,
            inbox: Vec::new(),
            history: DeHistory::new(window),
            rng,
            round: 0,
            events: Vec::new(),
            open_repairs: Vec::new(),
            repairs: Vec::new(),
            initial_edges: graph.edge_set(),
            trace: None,
            universe,
            cfg,
        })
    }

    /// Records one line per application delivery and protocol handler call.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
        if let Some(b) = self.bpd.take() {
            self.bpd = Some(b.with_trace(true));
        }
    }

    /// Application deliveries and protocol handler calls in round order;
    /// within a round deliveries come first, as they do in the simulation.
    pub fn trace(&self) -> Vec<String> {
        let round_of = |l: &str| l.split(['.', ' ']).next().and_then(|r| r.parse::<u64>().ok()).unwrap_or(0);
        let mut keyed: Vec<(u64, u8, String)> =
            self.trace.iter().flatten().map(|l| (round_of(l), 0, l.clone())).collect();
        if let Some(b) = &self.bpd {
            keyed.extend(b.trace().iter().map(|l| (round_of(l), 1, format!("ctl {l}"))));
        }
        keyed.sort_by_key(|(r, phase, _)| (*r, *phase));
        keyed.into_iter().map(|(_, _, l)| l).collect()
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn assignment(&self) -> &GroupAssignment {
        &self.asg
    }

    pub fn universe(&self) -> &[NodeId] {
        &self.universe
    }

    pub fn up(&self) -> &BTreeSet<NodeId> {
        &self.up
    }

    pub fn known(&self) -> &BTreeSet<NodeId> {
        &self.known
    }

    pub fn consensus(&self) -> &ConsensusState {
        &self.state
    }

    pub fn consensus_mut(&mut self) -> &mut ConsensusState {
        &mut self.state
    }

    pub fn initial_values(&self) -> &BTreeMap<NodeId, f64> {
        &self.initial
    }

    pub fn bpd(&self) -> Option<&Bpd> {
        self.bpd.as_ref()
    }

    pub fn events(&self) -> &[MembershipEvent] {
        &self.events
    }

    pub fn repair_delays(&self) -> &[RepairDelay] {
        &self.repairs
    }

    pub fn edges_initial(&self) -> usize {
        self.initial_edges.len()
    }

    pub fn initial_edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.initial_edges
    }

    /// Edges of the overlay among live nodes: the group overlay for
    /// Unmodified and BPD, the complete graph otherwise.
    pub fn overlay_graph(&self) -> DirectedGraph {
        if self.strategy.uses_overlay() {
            return self.asg.effective_graph(&self.up);
        }
        let mut g = DirectedGraph::with_nodes(self.up.iter().cloned());
        for u in &self.up {
            for v in self.up.iter().filter(|v| *v != u) {
                g.merge_edge(u, v, crate::cost::int(1));
            }
        }
        g
    }

    /// Shortest hop count from `u` to `v` times the per-hop delay.
    pub fn estimate_latency(&self, u: &NodeId, v: &NodeId) -> Result<f64, SimError> {
        for n in [u, v] {
            if !self.asg.contains_node(n) {
                return Err(SimError::UnknownNode(n.clone()));
            }
        }
        let hops = self.overlay_graph().hop_distance(u, v).ok_or_else(|| SimError::Unreachable(v.clone()))?;
        Ok(hops as f64 * self.cfg.per_hop_delay_ms)
    }

    pub fn inject_fault(&mut self, node: &NodeId, action: FaultAction) -> Result<(), SimError> {
        if !self.asg.contains_node(node) {
            return Err(SimError::UnknownNode(node.clone()));
        }
        match action {
            FaultAction::Crash => {
                if !self.up.remove(node) {
                    return Err(SimError::AlreadyCrashed(node.clone()));
                }
                info!("round {}: {node} crashes", self.round);
                self.detect_at.insert(node.clone(), (self.round + self.cfg.detection_rounds, self.round));
            }
            FaultAction::Recover => {
                if self.up.contains(node) {
                    return Ok(());
                }
                info!("round {}: {node} recovers", self.round);
                self.up.insert(node.clone());
                self.known.insert(node.clone());
                self.detect_at.remove(node);
                self.open_repairs.retain(|(n, _)| n != node);
                self.history.reset_node(node);
                if let Some(saved) = self.saved.remove(node) {
                    self.asg.restore(node, &saved);
                    let groups: BTreeSet<&GroupId> = saved.iter().map(|(g, _)| g).collect();
                    for g in groups {
                        self.events.push(MembershipEvent {
                            kind: MembershipKind::MemberJoined,
                            group: g.clone(),
                            node: node.clone(),
                            round: self.round,
                        });
                    }
                }
                if let Some(b) = &mut self.bpd {
                    b.node_recovered(node);
                }
            }
        }
        Ok(())
    }

    fn detect_failures(&mut self) {
        let due: Vec<(NodeId, u64)> = self
            .detect_at
            .iter()
            .filter(|(_, (at, _))| *at == self.round)
            .map(|(n, (_, crashed))| (n.clone(), *crashed))
            .collect();
        // everyone detected this round leaves `known` before any handler
        // runs, so no request waits on a reply from a peer that is gone
        for (node, _) in &due {
            self.detect_at.remove(node);
            self.known.remove(node);
            self.history.forget_source(node);
        }
        for (node, crashed) in due {
            let memberships = self.asg.remove_node(&node);
            debug!("round {}: {node} detected as failed ({} memberships)", self.round, memberships.len());
            let groups: BTreeSet<&GroupId> = memberships.iter().map(|(g, _)| g).collect();
            for g in groups {
                self.events.push(MembershipEvent {
                    kind: MembershipKind::MemberLeft,
                    group: g.clone(),
                    node: node.clone(),
                    round: self.round,
                });
            }
            if let Some(b) = &mut self.bpd {
                b.member_left(&mut self.asg, &self.up, &self.known, self.round, &node, &memberships);
                self.open_repairs.push((node.clone(), crashed));
            }
            self.saved.insert(node, memberships);
        }
    }

    fn deliver(&mut self) -> BTreeMap<NodeId, Vec<(NodeId, f64)>> {
        let mut delivered: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
        for msg in std::mem::take(&mut self.inbox) {
            if !self.up.contains(&msg.to) {
                continue;
            }
            if let Some(t) = &mut self.trace {
                t.push(format!("{} app {} -> {} {:.6}", self.round, msg.from, msg.to, msg.value));
            }
            for (source, p) in &msg.provenance {
                if self.known.contains(source) {
                    self.history.record(&msg.to, source, Provenance { origin_round: p.origin_round, hops: p.hops + 1 });
                }
            }
            delivered.entry(msg.to.clone()).or_default().push((msg.from.clone(), msg.value));
        }
        delivered
    }

    fn control_plane(&mut self) -> RoundReport {
        let Some(bpd) = &mut self.bpd else { return RoundReport::default() };
        let report = bpd.run_round(&mut self.asg, &self.up, &self.known, self.round);
        if !report.ft_busy_at_end && !self.open_repairs.is_empty() {
            let tick = report.ft_settled_at.unwrap_or(0);
            let frac = tick as f64 / self.cfg.substeps() as f64;
            for (node, crashed) in std::mem::take(&mut self.open_repairs) {
                let delay = (self.round - crashed) as f64 + frac;
                debug!("round {}: repair after {node}'s crash took {delay:.3} rounds", self.round);
                self.repairs.push(RepairDelay { node, crash_round: crashed, delay_rounds: delay });
            }
        }
        report
    }

    fn send(&mut self) -> u64 {
        let mut sent = 0;
        let senders: Vec<NodeId> = self.up.iter().cloned().collect();
        for from in senders {
            let dests = strategy_emit(&self.strategy, &from, &self.asg, &self.known, &mut self.rng);
            let mut provenance: BTreeMap<NodeId, Provenance> = self.history.entries(&from).cloned().unwrap_or_default();
            provenance.insert(from.clone(), Provenance { origin_round: self.round, hops: 0 });
            let value = self.state.x[&from];
            for to in dests {
                sent += 1;
                self.inbox.push(AppMsg { from: from.clone(), to, value, provenance: provenance.clone() });
            }
        }
        sent
    }

    pub fn step_round(&mut self) -> RoundStats {
        let faults: Vec<FaultEvent> = self.schedule.at(self.round).cloned().collect();
        for f in faults {
            if let Err(e) = self.inject_fault(&f.node, f.action) {
                log::warn!("round {}: ignoring fault: {e}", self.round);
            }
        }
        self.detect_failures();
        let delivered = self.deliver();
        self.state.step(&delivered);
        let ctl = self.control_plane();
        let messages = self.send();

        self.history.purge(self.round);
        let n = self.universe.len();
        let per_node_de = self
            .up
            .iter()
            .map(|node| (node.clone(), dissemination_efficiency(&self.history, &self.known, node, n)))
            .collect();
        let mut hops_histogram = BTreeMap::new();
        for node in &self.up {
            if let Some(seen) = self.history.entries(node) {
                for (_, p) in seen.iter().filter(|(s, _)| self.up.contains(*s)) {
                    *hops_histogram.entry(p.hops).or_insert(0) += 1;
                }
            }
        }
        let stats = RoundStats {
            round: self.round,
            messages,
            control_messages: ctl.messages,
            bytes: messages * self.cfg.payload_bytes + ctl.bytes,
            per_node_de,
            hops_histogram,
            x: self.up.iter().map(|n| (n.clone(), self.state.x[n])).collect(),
        };
        self.round += 1;
        stats
    }

    pub fn run(&mut self) -> Vec<RoundStats> {
        (0..self.cfg.n_rounds).map(|_| self.step_round()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{bpd::BpdConfig, cost::int};

    fn ring(n: usize) -> DirectedGraph {
        let mut g = DirectedGraph::new();
        for i in 1..=n {
            g.add_edge(NodeId::new(format!("n{i}")), NodeId::new(format!("n{}", i % n + 1)), int(1)).unwrap();
        }
        g
    }

    fn world(strategy: Strategy, faults: Vec<FaultEvent>) -> World {
        let cfg = SimConfig { n_rounds: 50, ..SimConfig::default() };
        World::new(cfg, &ring(6), strategy, FaultSchedule::new(faults).unwrap()).unwrap()
    }

    #[test]
    fn message_counts() {
        assert_eq!(world(Strategy::AllToAll, vec![]).step_round().messages, 30);
        assert_eq!(world(Strategy::Gossip { fanout: 3 }, vec![]).step_round().messages, 18);
        assert_eq!(world(Strategy::Unmodified, vec![]).step_round().messages, 6);
    }

    #[test]
    fn no_alive_nodes_no_messages() {
        let faults = (1..=6).map(|i| FaultEvent { round: 0, node: NodeId::new(format!("n{i}")), action: FaultAction::Crash }).collect();
        let mut w = world(Strategy::AllToAll, faults);
        let s = w.step_round();
        assert_eq!(s.messages, 0);
        assert!(s.per_node_de.is_empty());
    }

    #[test]
    fn substeps_default() {
        assert_eq!(SimConfig::default().substeps(), 16);
    }

    #[test]
    fn simultaneous_failures_repair_without_timeouts() {
        let bpd = Strategy::Bpd(BpdConfig::new(int(3)));
        let crash = |node: &str| FaultEvent { round: 10, node: node.into(), action: FaultAction::Crash };
        let mut w = world(bpd, vec![crash("n3"), crash("n6")]);
        w.run();
        assert_eq!(w.repair_delays().len(), 2);
        assert!(w.repair_delays().iter().all(|d| d.delay_rounds < 2.0), "{:?}", w.repair_delays());
    }

    #[test]
    fn crash_then_recover_restores_memberships() {
        let mut w = world(Strategy::Unmodified, vec![]);
        let before = w.assignment().clone();
        w.inject_fault(&"n3".into(), FaultAction::Crash).unwrap();
        w.step_round();
        w.step_round();
        assert_ne!(w.assignment(), &before);
        w.inject_fault(&"n3".into(), FaultAction::Recover).unwrap();
        assert_eq!(w.assignment(), &before);
        assert!(matches!(w.inject_fault(&"zz".into(), FaultAction::Crash), Err(SimError::UnknownNode(_))));
        w.inject_fault(&"n3".into(), FaultAction::Recover).unwrap();
    }

    #[test]
    fn crashing_a_dead_node_fails() {
        let mut w = world(Strategy::Unmodified, vec![]);
        w.inject_fault(&"n1".into(), FaultAction::Crash).unwrap();
        assert_eq!(w.inject_fault(&"n1".into(), FaultAction::Crash), Err(SimError::AlreadyCrashed("n1".into())));
        let dup = vec![
            FaultEvent { round: 1, node: "n1".into(), action: FaultAction::Crash },
            FaultEvent { round: 2, node: "n1".into(), action: FaultAction::Crash },
        ];
        assert!(FaultSchedule::new(dup).is_err());
    }

    #[test]
    fn detection_happens_exactly_after_detection_rounds() {
        let mut w = world(Strategy::Unmodified, vec![FaultEvent { round: 3, node: "n2".into(), action: FaultAction::Crash }]);
        for _ in 0..6 {
            w.step_round();
        }
        let left: Vec<_> = w.events().iter().filter(|e| e.kind == MembershipKind::MemberLeft).collect();
        assert_eq!(left.len(), 2);
        assert!(left.iter().all(|e| e.round == 4 && e.node == NodeId::from("n2")));
    }

    #[test]
    fn latency_estimates() {
        let w = world(Strategy::Unmodified, vec![]);
        assert!((w.estimate_latency(&"n1".into(), &"n2".into()).unwrap() - 0.6).abs() < 1e-12);
        assert!((w.estimate_latency(&"n1".into(), &"n5".into()).unwrap() - 2.4).abs() < 1e-12);
        assert_eq!(w.estimate_latency(&"n1".into(), &"n1".into()).unwrap(), 0.0);
    }

    #[test]
    fn fault_free_de_reaches_one() {
        let mut w = world(Strategy::Unmodified, vec![]);
        let stats = w.run();
        assert!(stats.last().unwrap().per_node_de.values().all(|d| (*d - 1.0).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_run() {
        let strat = Strategy::Bpd(BpdConfig::new(int(3)));
        let a = world(strat.clone(), vec![FaultEvent { round: 10, node: "n4".into(), action: FaultAction::Crash }]).run();
        let b = world(strat, vec![FaultEvent { round: 10, node: "n4".into(), action: FaultAction::Crash }]).run();
        assert_eq!(a, b);
    }
}

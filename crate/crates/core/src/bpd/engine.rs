//! The control plane: delivers protocol messages hop by hop, drives the
//! repair-cycle phases and applies the memberships handlers ask for.
//!
//! One *tick* is one hop: everything sent in tick `t` is delivered in tick
//! `t + 1`. The simulator runs a fixed number of ticks per application round.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, trace, warn};

use super::{
    message::{Channel, ControlMsg, Outgoing},
    node::{Ctx, Effects, Join, NodeState},
    BpdConfig, BpdError, PathTable,
};
use crate::{
    graph::NodeId,
    overlay::{leader_group, GroupAssignment, GroupId, Role},
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Discovering,
    PartitionRepair,
    Updating,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinRecord {
    pub round: u64,
    pub tick: u32,
    pub join: Join,
}

#[derive(Clone, Debug)]
struct Delivery {
    from: NodeId,
    to: NodeId,
    on: Option<GroupId>,
    channel: Channel,
    msg: ControlMsg,
}

/// What happened to the control plane during one application round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundReport {
    pub messages: u64,
    pub bytes: u64,
    /// Tick at which fault-tolerance traffic and pending requests drained, if
    /// they were active at the start of the round or became active during it.
    pub ft_settled_at: Option<u32>,
    pub ft_busy_at_end: bool,
    pub cycle_completed: bool,
    pub joins: Vec<JoinRecord>,
}

#[derive(Clone, Debug)]
pub struct Bpd {
    cfg: BpdConfig,
    nodes: BTreeMap<NodeId, NodeState>,
    in_flight: Vec<Delivery>,
    epoch: u64,
    phase: Phase,
    partition_done: bool,
    stage1: BTreeMap<NodeId, PathTable>,
    substeps: u32,
    tracing: bool,
    trace: Vec<String>,
    joins: Vec<JoinRecord>,
    messages: u64,
    bytes: u64,
    tick: u32,
}

impl Bpd {
    pub fn new(cfg: BpdConfig) -> Self {
        Bpd {
            cfg,
            nodes: BTreeMap::new(),
            in_flight: Vec::new(),
            epoch: 0,
            phase: Phase::Idle,
            partition_done: false,
            stage1: BTreeMap::new(),
            substeps: 1,
            tracing: false,
            trace: Vec::new(),
            joins: Vec::new(),
            messages: 0,
            bytes: 0,
            tick: 0,
        }
    }

    /// Control-plane hops per application round.
    pub fn with_substeps(mut self, substeps: u32) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn config(&self) -> &BpdConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn path_table(&self, node: &NodeId) -> Option<&PathTable> {
        self.nodes.get(node).map(NodeState::paths)
    }

    /// Path tables as they stood when the last discovery settled.
    pub fn stage1_tables(&self) -> &BTreeMap<NodeId, PathTable> {
        &self.stage1
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn join_log(&self) -> &[JoinRecord] {
        &self.joins
    }

    pub fn is_quiescent(&self) -> bool {
        self.in_flight.is_empty() && self.phase == Phase::Idle
    }

    /// Whether fault-tolerance work is in progress: messages in flight or
    /// requests waiting for replies.
    pub fn ft_busy(&self) -> bool {
        self.in_flight.iter().any(|d| d.msg.is_fault_tolerance())
            || self.nodes.values().any(NodeState::has_pending)
    }

    fn state(&mut self, id: &NodeId) -> &mut NodeState {
        self.nodes.entry(id.clone()).or_insert_with(|| NodeState::new(id.clone()))
    }

    /// Clears the volatile state of a node that crashed and came back.
    pub fn node_recovered(&mut self, id: &NodeId) {
        self.state(id).reset();
    }

    fn emit(&mut self, fx: Effects, asg: &GroupAssignment, known: &BTreeSet<NodeId>, pending: &mut Vec<Join>) {
        for out in fx.out {
            self.enqueue(out, asg, known);
        }
        pending.extend(fx.joins);
    }

    /// Expands a channel into per-recipient deliveries, using the membership
    /// at send time.
    fn enqueue(&mut self, out: Outgoing, asg: &GroupAssignment, known: &BTreeSet<NodeId>) {
        let (targets, on): (Vec<NodeId>, Option<GroupId>) = match &out.channel {
            Channel::Group(g) => {
                let members = asg.group(g).map(|grp| grp.members().into_iter().cloned().collect()).unwrap_or_default();
                (members, Some(g.clone()))
            }
            Channel::Leaders => (leader_group(asg, known).into_iter().collect(), None),
            Channel::Direct(n) => (vec![n.clone()], None),
        };
        let size = out.msg.wire_size() as u64;
        for to in targets.into_iter().filter(|t| *t != out.from) {
            self.messages += 1;
            self.bytes += size;
            self.in_flight.push(Delivery {
                from: out.from.clone(),
                to,
                on: on.clone(),
                channel: out.channel.clone(),
                msg: out.msg.clone(),
            });
        }
    }

    fn apply_joins(
        &mut self,
        joins: Vec<Join>,
        asg: &mut GroupAssignment,
        up: &BTreeSet<NodeId>,
        round: u64,
    ) -> Vec<JoinRecord> {
        let mut applied = Vec::new();
        for join in joins {
            match asg.join_group(&join.node, &join.grp, join.role, up, round) {
                Ok(Some(_)) => {
                    info!("round {round}: {} joins {} as {} ({:?})", join.node, join.grp, join.role, join.cause);
                    let rec = JoinRecord { round, tick: self.tick, join };
                    self.joins.push(rec.clone());
                    applied.push(rec);
                }
                Ok(None) => {}
                Err(e) => warn!("round {round}: join of {} to {} failed: {e}", join.node, join.grp),
            }
        }
        applied
    }

    /// Starts a repair cycle: a fresh discovery epoch on every live node.
    /// Ignored while a previous cycle is still running.
    pub fn start_repair_cycle(&mut self, asg: &GroupAssignment, up: &BTreeSet<NodeId>, known: &BTreeSet<NodeId>, round: u64) {
        if self.phase != Phase::Idle {
            debug!("round {round}: repair cycle still running, not restarting");
            return;
        }
        self.partition_done = false;
        self.start_discovery(asg, up, known, round);
    }

    fn live<'a>(up: &'a BTreeSet<NodeId>, known: &'a BTreeSet<NodeId>) -> Vec<NodeId> {
        known.intersection(up).cloned().collect()
    }

    fn start_discovery(&mut self, asg: &GroupAssignment, up: &BTreeSet<NodeId>, known: &BTreeSet<NodeId>, round: u64) {
        self.epoch += 1;
        self.phase = Phase::Discovering;
        debug!("round {round}: discovery epoch {}", self.epoch);
        let cfg = self.cfg.clone();
        let ctx = Ctx { asg, known, cfg: &cfg, round };
        let mut sink = Vec::new();
        for id in Self::live(up, known) {
            let epoch = self.epoch;
            let fx = self.state(&id).on_discover_trigger(epoch, &ctx);
            self.emit(fx, asg, known, &mut sink);
        }
    }

    /// Dispatches the departure of `left` to the surviving members of every
    /// group it belonged to.
    pub fn member_left(
        &mut self,
        asg: &mut GroupAssignment,
        up: &BTreeSet<NodeId>,
        known: &BTreeSet<NodeId>,
        round: u64,
        left: &NodeId,
        memberships: &[(GroupId, Role)],
    ) {
        let cfg = self.cfg.clone();
        let groups: BTreeSet<&GroupId> = memberships.iter().map(|(g, _)| g).collect();
        let mut joins = Vec::new();
        for g in groups {
            let Some(group) = asg.group(g) else { continue };
            let members: Vec<NodeId> = group.members().into_iter().filter(|m| *m != left && up.contains(*m) && known.contains(*m)).cloned().collect();
            for m in members {
                let ctx = Ctx { asg, known, cfg: &cfg, round };
                let mut fx = Effects::default();
                if asg.send_grps(&m).contains(g) {
                    fx.extend(self.state(&m).on_member_left_send(g, &ctx));
                }
                if asg.recv_grps(&m).contains(g) {
                    fx.extend(self.state(&m).on_member_left_recv(g, &ctx));
                }
                self.log(round, &m, &format!("member_left {left} on {g}"));
                self.emit(fx, asg, known, &mut joins);
            }
        }
        self.apply_joins(joins, asg, up, round);
    }

    fn log(&mut self, round: u64, node: &NodeId, what: &str) {
        if self.tracing {
            self.trace.push(format!("{round}.{} {node} {what}", self.tick));
        }
        trace!("{round}.{} {node} {what}", self.tick);
    }

    fn has_in_flight(&self, pred: impl Fn(&ControlMsg) -> bool) -> bool {
        self.in_flight.iter().any(|d| pred(&d.msg))
    }

    /// Delivers one hop worth of messages and advances the cycle phase.
    pub fn tick(
        &mut self,
        asg: &mut GroupAssignment,
        up: &BTreeSet<NodeId>,
        known: &BTreeSet<NodeId>,
        round: u64,
    ) -> Vec<JoinRecord> {
        let batch = std::mem::take(&mut self.in_flight);
        let cfg = self.cfg.clone();
        let mut applied = Vec::new();
        for d in batch {
            if !up.contains(&d.to) {
                continue;
            }
            let mut joins = Vec::new();
            let fx = {
                let ctx = Ctx { asg, known, cfg: &cfg, round };
                let node = self.nodes.entry(d.to.clone()).or_insert_with(|| NodeState::new(d.to.clone()));
                match (&d.msg, &d.on) {
                    (ControlMsg::Discover(m), Some(g)) => node.on_discover_receive(m, g, &ctx),
                    (ControlMsg::Update(m), Some(g)) => node.on_update_receive(m, g, &ctx),
                    (ControlMsg::GrpQry(m), Some(g)) if *g == m.grp => node.on_grp_qry(m, &ctx),
                    (ControlMsg::JoinReq(m), None) => node.on_join_req(m, &ctx),
                    (ControlMsg::JoinRep(m), None) => node.on_join_rep(m, &ctx),
                    (ControlMsg::GrpAns(m), None) => node.on_grp_ans(m, &ctx),
                    _ => Effects::default(),
                }
            };
            self.log(round, &d.to, &format!("{} from {} via {}", d.msg.kind(), d.from, d.channel));
            self.emit(fx, asg, known, &mut joins);
            applied.extend(self.apply_joins(joins, asg, up, round));
        }
        applied.extend(self.advance_phase(asg, up, known, round));
        applied
    }

    fn advance_phase(
        &mut self,
        asg: &mut GroupAssignment,
        up: &BTreeSet<NodeId>,
        known: &BTreeSet<NodeId>,
        round: u64,
    ) -> Vec<JoinRecord> {
        let cfg = self.cfg.clone();
        let mut joins = Vec::new();
        match self.phase {
            Phase::Idle => {}
            Phase::Discovering => {
                if self.has_in_flight(|m| matches!(m, ControlMsg::Discover(_))) {
                    return Vec::new();
                }
                self.stage1 = self.nodes.iter().filter(|(id, _)| up.contains(*id) && known.contains(*id)).map(|(id, s)| (id.clone(), s.paths().clone())).collect();
                let hub = Self::live(up, known).into_iter().next();
                match hub {
                    Some(hub) if cfg.partition_repair && !self.partition_done => {
                        self.partition_done = true;
                        self.phase = Phase::PartitionRepair;
                        let ctx = Ctx { asg, known, cfg: &cfg, round };
                        let mut fxs = Vec::new();
                        for id in Self::live(up, known) {
                            fxs.push(self.state(&id).partition_actions(&hub, &ctx));
                        }
                        for fx in fxs {
                            self.emit(fx, asg, known, &mut joins);
                        }
                        if !self.partition_busy() {
                            self.start_updates(asg, up, known, round);
                        }
                    }
                    _ => self.start_updates(asg, up, known, round),
                }
            }
            Phase::PartitionRepair => {
                if !self.partition_busy() {
                    debug!("round {round}: partition repair settled, rediscovering");
                    self.start_discovery(asg, up, known, round);
                }
            }
            Phase::Updating => {
                if !self.has_in_flight(|m| matches!(m, ControlMsg::Update(_))) {
                    debug!("round {round}: repair cycle {} complete", self.epoch);
                    self.phase = Phase::Idle;
                }
            }
        }
        self.apply_joins(joins, asg, up, round)
    }

    fn partition_busy(&self) -> bool {
        self.has_in_flight(|m| match m {
            ControlMsg::JoinRep(r) => r.request.is_none() || self.is_partition_request(r),
            ControlMsg::JoinReq(_) => true,
            _ => false,
        }) || self
            .nodes
            .values()
            .any(|s| s.joins.values().any(|p| p.cause == super::node::JoinCause::Partition))
    }

    fn is_partition_request(&self, rep: &super::message::JoinRep) -> bool {
        let (Some(req), Some(state)) = (rep.request, self.nodes.get(&rep.requester)) else { return false };
        state.joins.get(&req).is_some_and(|p| p.cause == super::node::JoinCause::Partition)
    }

    fn start_updates(&mut self, asg: &GroupAssignment, up: &BTreeSet<NodeId>, known: &BTreeSet<NodeId>, round: u64) {
        self.phase = Phase::Updating;
        let cfg = self.cfg.clone();
        let ctx = Ctx { asg, known, cfg: &cfg, round };
        let mut sink = Vec::new();
        for id in Self::live(up, known) {
            let fx = self.state(&id).on_update_trigger(&ctx);
            self.emit(fx, asg, known, &mut sink);
        }
        if !self.has_in_flight(|m| matches!(m, ControlMsg::Update(_))) {
            self.phase = Phase::Idle;
        }
    }

    /// Expires overdue requests and, on repair rounds, retries failed joins
    /// and starts a new cycle.
    pub fn begin_round(&mut self, asg: &mut GroupAssignment, up: &BTreeSet<NodeId>, known: &BTreeSet<NodeId>, round: u64) {
        self.tick = 0;
        let cfg = self.cfg.clone();
        let mut joins = Vec::new();
        let ids = Self::live(up, known);
        for id in &ids {
            let ctx = Ctx { asg, known, cfg: &cfg, round };
            let fx = self.state(id).poll_timeouts(&ctx);
            self.emit(fx, asg, known, &mut joins);
        }
        if round.is_multiple_of(cfg.repair_period_rounds) {
            for id in &ids {
                let ctx = Ctx { asg, known, cfg: &cfg, round };
                let fx = self.state(id).retry_joins(&ctx);
                self.emit(fx, asg, known, &mut joins);
            }
            self.start_repair_cycle(asg, up, known, round);
        }
        self.apply_joins(joins, asg, up, round);
    }

    /// Runs one application round worth of control-plane ticks.
    pub fn run_round(&mut self, asg: &mut GroupAssignment, up: &BTreeSet<NodeId>, known: &BTreeSet<NodeId>, round: u64) -> RoundReport {
        let (m0, b0) = (self.messages, self.bytes);
        let joins_before = self.joins.len();
        self.begin_round(asg, up, known, round);
        let mut ft_settled_at = None;
        let mut was_busy = self.ft_busy();
        let mut cycle_completed = false;
        for t in 1..=self.substeps {
            if self.is_quiescent() && !self.ft_busy() {
                break;
            }
            self.tick = t;
            let in_cycle = self.phase != Phase::Idle;
            self.tick(asg, up, known, round);
            if in_cycle && self.phase == Phase::Idle {
                cycle_completed = true;
            }
            let busy = self.ft_busy();
            if was_busy && !busy {
                ft_settled_at = Some(t);
            }
            was_busy = busy;
        }
        RoundReport {
            messages: self.messages - m0,
            bytes: self.bytes - b0,
            ft_settled_at,
            ft_busy_at_end: self.ft_busy(),
            cycle_completed,
            joins: self.joins[joins_before..].to_vec(),
        }
    }

    /// Ticks until nothing is in flight and no cycle is running.
    pub fn run_until_quiescent(
        &mut self,
        asg: &mut GroupAssignment,
        up: &BTreeSet<NodeId>,
        known: &BTreeSet<NodeId>,
        round: u64,
        max_ticks: usize,
    ) -> Result<usize, BpdError> {
        for n in 0..max_ticks {
            if self.is_quiescent() && !self.has_in_flight(|_| true) {
                return Ok(n);
            }
            self.tick = self.tick.saturating_add(1);
            self.tick(asg, up, known, round);
        }
        Err(BpdError::NoQuiescence(max_ticks))
    }

    /// Control messages and bytes sent since the engine was created.
    pub fn traffic(&self) -> (u64, u64) {
        (self.messages, self.bytes)
    }
}

#[derive(Clone, Debug)]
pub struct RepairReport {
    /// Path tables after the (last) discovery of the cycle.
    pub tables: BTreeMap<NodeId, PathTable>,
    pub joins: Vec<JoinRecord>,
    pub messages: u64,
    pub ticks: usize,
}

fn tick_budget(asg: &GroupAssignment) -> usize {
    let n = asg.nodes().count().max(2);
    // generous: every phase is bounded by a few multiples of the node count
    64 * n * n
}

/// One full repair cycle on an overlay where every node is alive, run to
/// quiescence. Fails with `NotConnected` if the result is still not strongly
/// connected.
pub fn run_repair_cycle(asg: &mut GroupAssignment, cfg: &BpdConfig) -> Result<RepairReport, BpdError> {
    let all: BTreeSet<NodeId> = asg.nodes().cloned().collect();
    cfg.validate(asg.effective_graph(&all).max_weight())?;
    let mut bpd = Bpd::new(cfg.clone());
    bpd.start_repair_cycle(asg, &all, &all, 0);
    let ticks = bpd.run_until_quiescent(asg, &all, &all, 0, tick_budget(asg))?;
    let g = asg.effective_graph(&all);
    if !g.is_strongly_connected() {
        return Err(BpdError::NotConnected { unreachable_pairs: g.unreachable_pairs() });
    }
    Ok(RepairReport { tables: bpd.stage1.clone(), joins: bpd.joins.clone(), messages: bpd.messages, ticks })
}

/// Stage 1 alone: the path table of every node once discovery settles.
pub fn discover_paths(asg: &GroupAssignment, cfg: &BpdConfig) -> Result<BTreeMap<NodeId, PathTable>, BpdError> {
    let all: BTreeSet<NodeId> = asg.nodes().cloned().collect();
    let mut scratch = asg.clone();
    let mut bpd = Bpd::new(BpdConfig { partition_repair: false, ..cfg.clone() });
    bpd.start_discovery(&scratch, &all, &all, 0);
    let budget = tick_budget(asg);
    for _ in 0..budget {
        if !bpd.has_in_flight(|m| matches!(m, ControlMsg::Discover(_))) {
            return Ok(bpd.nodes.iter().map(|(id, s)| (id.clone(), s.paths().clone())).collect());
        }
        bpd.tick(&mut scratch, &all, &all, 0);
    }
    Err(BpdError::NoQuiescence(budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{
        cost::{int, Cost},
        graph::DirectedGraph,
        overlay::form_groups,
    };

    fn ring(n: usize) -> DirectedGraph {
        let mut g = DirectedGraph::new();
        for i in 0..n {
            g.add_edge(format!("v{i}").into(), format!("v{}", (i + 1) % n).into(), int(1)).unwrap();
        }
        g
    }

    #[test]
    fn ring_tables() {
        let mut g = DirectedGraph::new();
        for (u, v) in [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")] {
            g.add_edge(u.into(), v.into(), int(1)).unwrap();
        }
        let tables = discover_paths(&form_groups(&g), &BpdConfig::new(int(3))).unwrap();
        let a: Vec<(String, Cost)> = tables[&NodeId::from("a")].depths().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert_eq!(a, vec![("b".into(), int(1)), ("c".into(), int(2)), ("d".into(), int(3))]);
    }

    #[test]
    fn six_ring_becomes_bounded() {
        let mut asg = form_groups(&ring(6));
        let report = run_repair_cycle(&mut asg, &BpdConfig::new(int(3))).unwrap();
        assert!(!report.joins.is_empty());
        let all: BTreeSet<NodeId> = asg.nodes().cloned().collect();
        assert!(asg.effective_graph(&all).max_distance().unwrap() <= int(3));
        // v0 reaches v4 and v5 within the threshold
        let d = asg.effective_graph(&all).shortest_paths_from(&"v0".into());
        assert!(d[&NodeId::from("v4")] <= int(3) && d[&NodeId::from("v5")] <= int(3));
    }

    #[test]
    fn second_cycle_is_a_fixpoint() {
        let mut asg = form_groups(&ring(7));
        let cfg = BpdConfig::new(int(3));
        run_repair_cycle(&mut asg, &cfg).unwrap();
        let snapshot = asg.clone();
        let report = run_repair_cycle(&mut asg, &cfg).unwrap();
        assert!(report.joins.is_empty());
        assert_eq!(asg, snapshot);
    }

    #[test]
    fn bounded_graph_unchanged() {
        let mut g = DirectedGraph::new();
        for (u, v) in [("a", "b"), ("b", "a")] {
            g.add_edge(u.into(), v.into(), int(1)).unwrap();
        }
        let mut asg = form_groups(&g);
        let before = asg.clone();
        run_repair_cycle(&mut asg, &BpdConfig::new(int(1))).unwrap();
        assert_eq!(asg, before);
    }

    #[test]
    fn partition_is_healed_through_hub() {
        // two rings with no link between them
        let mut g = DirectedGraph::new();
        for (u, v) in [("a", "b"), ("b", "c"), ("c", "a"), ("x", "y"), ("y", "z"), ("z", "x")] {
            g.add_edge(u.into(), v.into(), int(1)).unwrap();
        }
        let mut asg = form_groups(&g);
        run_repair_cycle(&mut asg, &BpdConfig::new(int(3))).unwrap();
        let all: BTreeSet<NodeId> = asg.nodes().cloned().collect();
        let eff = asg.effective_graph(&all);
        assert!(eff.is_strongly_connected());
        assert!(eff.max_distance().unwrap() <= int(3));
    }

    #[test]
    fn without_partition_repair_disconnected_stays_so() {
        let mut g = DirectedGraph::new();
        for (u, v) in [("a", "b"), ("b", "a"), ("x", "y"), ("y", "x")] {
            g.add_edge(u.into(), v.into(), int(1)).unwrap();
        }
        let mut asg = form_groups(&g);
        let cfg = BpdConfig { partition_repair: false, ..BpdConfig::new(int(2)) };
        assert!(matches!(run_repair_cycle(&mut asg, &cfg), Err(BpdError::NotConnected { .. })));
    }

    #[test]
    fn threshold_below_weight_rejected() {
        let mut g = DirectedGraph::new();
        g.add_edge("a".into(), "b".into(), int(2)).unwrap();
        g.add_edge("b".into(), "a".into(), int(1)).unwrap();
        let mut asg = form_groups(&g);
        assert!(matches!(run_repair_cycle(&mut asg, &BpdConfig::new(int(1))), Err(BpdError::ThresholdBelowWeight { .. })));
    }
}

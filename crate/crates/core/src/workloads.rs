//! The application running over the overlay: distributed averaging, plus the
//! peer-selection strategies it is compared under.

use std::{collections::{BTreeMap, BTreeSet}, fmt};

use rand::{seq::index::sample, Rng};
use thiserror::Error;

use crate::{bpd::BpdConfig, graph::NodeId, overlay::GroupAssignment};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    AllToAll,
    Gossip { fanout: usize },
    /// The base topology as written, never modified.
    Unmodified,
    Bpd(BpdConfig),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::AllToAll => "all_to_all",
            Strategy::Gossip { .. } => "gossip",
            Strategy::Unmodified => "unmodified",
            Strategy::Bpd(_) => "bpd",
        }
    }

    /// Whether messages follow the group overlay rather than a peer list.
    pub fn uses_overlay(&self) -> bool {
        matches!(self, Strategy::Unmodified | Strategy::Bpd(_))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Gossip { fanout } => write!(f, "gossip({fanout})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("fanout {fanout} exceeds the {available} available peers")]
    TooFewPeers { fanout: usize, available: usize },
}

/// Local estimates of the averaging algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusState {
    pub x: BTreeMap<NodeId, f64>,
    /// Step factor, split evenly over the values delivered in a round.
    pub epsilon: f64,
    /// Fixed per-neighbour weight instead of `epsilon / in_degree`.
    pub uniform_weight: Option<f64>,
}

impl ConsensusState {
    pub fn new(x: BTreeMap<NodeId, f64>, epsilon: f64) -> Self {
        ConsensusState { x, epsilon, uniform_weight: None }
    }

    /// Initial states uniform in `[0, 100)`, drawn in node order.
    pub fn random<R: Rng>(nodes: impl IntoIterator<Item = NodeId>, epsilon: f64, rng: &mut R) -> Self {
        let x = nodes.into_iter().map(|n| (n, rng.gen_range(0.0..100.0))).collect();
        ConsensusState::new(x, epsilon)
    }

    /// `x_i += sum_j a_ij (x_j - x_i)` over the values delivered to `i` this
    /// round. All updates read the pre-step values.
    pub fn step(&mut self, delivered: &BTreeMap<NodeId, Vec<(NodeId, f64)>>) {
        let mut next = self.x.clone();
        for (i, values) in delivered {
            if values.is_empty() {
                continue;
            }
            let Some(xi) = self.x.get(i).copied() else { continue };
            let a = self.uniform_weight.unwrap_or(self.epsilon / values.len() as f64);
            let delta: f64 = values.iter().map(|(_, xj)| a * (xj - xi)).sum();
            next.insert(i.clone(), xi + delta);
        }
        self.x = next;
    }
}

pub fn consensus_step(state: &ConsensusState, delivered: &BTreeMap<NodeId, Vec<(NodeId, f64)>>) -> ConsensusState {
    let mut s = state.clone();
    s.step(delivered);
    s
}

pub fn true_average(initial: &BTreeMap<NodeId, f64>) -> Option<f64> {
    if initial.is_empty() {
        return None;
    }
    Some(initial.values().sum::<f64>() / initial.len() as f64)
}

/// Uniform sample of `fanout` distinct peers other than `node`.
pub fn select_gossip_peers<R: Rng>(
    node: &NodeId,
    alive: &BTreeSet<NodeId>,
    fanout: usize,
    rng: &mut R,
) -> Result<BTreeSet<NodeId>, WorkloadError> {
    let others: Vec<&NodeId> = alive.iter().filter(|n| *n != node).collect();
    if fanout > others.len() {
        return Err(WorkloadError::TooFewPeers { fanout, available: others.len() });
    }
    Ok(sample(rng, others.len(), fanout).into_iter().map(|i| others[i].clone()).collect())
}

/// Where `node` sends its value this round. `alive` is the node's view of
/// the live peers. Gossip with too few live peers contacts all of them.
pub fn strategy_emit<R: Rng>(
    strategy: &Strategy,
    node: &NodeId,
    asg: &GroupAssignment,
    alive: &BTreeSet<NodeId>,
    rng: &mut R,
) -> BTreeSet<NodeId> {
    match strategy {
        Strategy::AllToAll => alive.iter().filter(|n| *n != node).cloned().collect(),
        Strategy::Gossip { fanout } => {
            let available = alive.iter().filter(|n| *n != node).count();
            select_gossip_peers(node, alive, (*fanout).min(available), rng).unwrap_or_default()
        }
        Strategy::Unmodified | Strategy::Bpd(_) => asg.destinations(node, alive),
    }
}

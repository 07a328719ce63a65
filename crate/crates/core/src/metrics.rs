//! Evaluation measures computed from simulation traces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("deviation is undefined for a zero optimum")]
    ZeroOptimum,
}

/// Where a piece of information came from: the round it was generated at its
/// source and how many hops it travelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin_round: u64,
    pub hops: u32,
}

impl Provenance {
    /// Newer information wins; among equally fresh copies the shorter route.
    pub fn better_than(&self, other: &Provenance) -> bool {
        (self.origin_round, std::cmp::Reverse(self.hops)) > (other.origin_round, std::cmp::Reverse(other.hops))
    }
}

/// Per node: the freshest information seen from each source, aged out after
/// `window` rounds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeHistory {
    window: u64,
    per_node: BTreeMap<NodeId, BTreeMap<NodeId, Provenance>>,
}

impl DeHistory {
    pub fn new(window: u64) -> Self {
        DeHistory { window, per_node: BTreeMap::new() }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn record(&mut self, node: &NodeId, source: &NodeId, p: Provenance) {
        if node == source {
            return;
        }
        let seen = self.per_node.entry(node.clone()).or_default();
        match seen.get(source) {
            Some(old) if !p.better_than(old) => {}
            _ => {
                seen.insert(source.clone(), p);
            }
        }
    }

    pub fn entries(&self, node: &NodeId) -> Option<&BTreeMap<NodeId, Provenance>> {
        self.per_node.get(node)
    }

    /// Drops everything generated more than `window` rounds before `round`.
    pub fn purge(&mut self, round: u64) {
        let horizon = round.saturating_sub(self.window);
        for seen in self.per_node.values_mut() {
            seen.retain(|_, p| p.origin_round >= horizon);
        }
    }

    /// Forgets a source everywhere, e.g. once it is known to have failed.
    pub fn forget_source(&mut self, source: &NodeId) {
        for seen in self.per_node.values_mut() {
            seen.remove(source);
        }
    }

    pub fn reset_node(&mut self, node: &NodeId) {
        self.per_node.remove(node);
    }

    pub fn sources(&self, node: &NodeId) -> BTreeSet<&NodeId> {
        self.per_node.get(node).map(|s| s.keys().collect()).unwrap_or_default()
    }
}

/// Fraction of the configured peers whose fresh information `node` holds,
/// counting itself. Only sources in `alive` count, so failed peers drop out
/// of the numerator immediately.
pub fn dissemination_efficiency(history: &DeHistory, alive: &BTreeSet<NodeId>, node: &NodeId, n_configured: usize) -> f64 {
    if n_configured <= 1 {
        return 1.0;
    }
    let heard = history.sources(node).into_iter().filter(|s| *s != node && alive.contains(*s)).count();
    (heard + 1) as f64 / n_configured as f64
}

/// Mean relative distance to the optimum over the given nodes, in percent.
pub fn deviation_pct(values: &BTreeMap<NodeId, f64>, optimum: f64) -> Result<f64, MetricsError> {
    if optimum == 0.0 {
        return Err(MetricsError::ZeroOptimum);
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = values.values().map(|x| (x - optimum).abs() / optimum.abs()).sum();
    Ok(sum / values.len() as f64 * 100.0)
}

/// First round from which every node stays within `band_pct` of the optimum
/// until the end of the trace.
pub fn iterations_to_band(trace: &[BTreeMap<NodeId, f64>], optimum: f64, band_pct: f64) -> Option<u64> {
    let tol = optimum.abs() * band_pct / 100.0;
    let inside = |xs: &BTreeMap<NodeId, f64>| xs.values().all(|x| (x - optimum).abs() <= tol);
    let mut first = None;
    for (k, xs) in trace.iter().enumerate().rev() {
        if !inside(xs) {
            break;
        }
        first = Some(k as u64);
    }
    first
}

/// Average per-node traffic in kB/s.
pub fn bandwidth_kbps(total_bytes: u64, n_rounds: u64, round_period_ms: f64, n_nodes: usize) -> f64 {
    if n_rounds == 0 || n_nodes == 0 {
        return 0.0;
    }
    let seconds = n_rounds as f64 * round_period_ms / 1000.0;
    total_bytes as f64 / seconds / n_nodes as f64 / 1000.0
}

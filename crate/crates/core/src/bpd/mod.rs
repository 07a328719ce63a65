//! Bounded Path Dissemination.
//!
//! Stage 1 floods discovery probes so every node learns its outgoing
//! shortest-path costs. Stage 2 asks, for every peer further away than the
//! threshold, some node on the way to add the far peer to one of its send
//! groups. Two fault-tolerance handlers patch the overlay when members leave.

mod engine;
pub mod message;
pub mod node;

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{discover_paths, run_repair_cycle, Bpd, JoinRecord, Phase, RepairReport, RoundReport};
pub use message::{Channel, ControlMsg, DiscoverMsg, GrpAns, GrpQry, GrpType, JoinRep, JoinReq, Outgoing, UpdateMsg};
pub use node::{Ctx, Effects, Join, JoinCause, NodeState};

use crate::{cost::Cost, graph::NodeId, overlay::GroupId};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BpdError {
    #[error("at least two nodes are needed, got {0}")]
    TooFewNodes(usize),
    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(Cost),
    #[error("threshold {thresh} is below the largest link weight {max_weight}")]
    ThresholdBelowWeight { thresh: Cost, max_weight: Cost },
    #[error("alive overlay is not strongly connected ({unreachable_pairs} unreachable pairs)")]
    NotConnected { unreachable_pairs: usize },
    #[error("protocol did not quiesce within {0} steps")]
    NoQuiescence(usize),
}

/// `ceil((n - 1) / 2)`.
pub fn default_threshold(n_nodes: usize) -> Result<Cost, BpdError> {
    if n_nodes < 2 {
        return Err(BpdError::TooFewNodes(n_nodes));
    }
    // ceil((n - 1) / 2) == floor(n / 2)
    Ok(Cost::from_integer(n_nodes as i64 / 2))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpdConfig {
    pub thresh: Cost,
    pub repair_period_rounds: u64,
    pub reply_timeout_rounds: u64,
    /// Reconnect partitioned nodes through a hub before Stage 2.
    pub partition_repair: bool,
}

impl BpdConfig {
    pub fn new(thresh: Cost) -> Self {
        BpdConfig { thresh, repair_period_rounds: 200, reply_timeout_rounds: 5, partition_repair: true }
    }

    pub fn validate(&self, max_weight: Option<Cost>) -> Result<(), BpdError> {
        if self.thresh <= Cost::zero() {
            return Err(BpdError::NonPositiveThreshold(self.thresh));
        }
        match max_weight {
            Some(w) if w > self.thresh => Err(BpdError::ThresholdBelowWeight { thresh: self.thresh, max_weight: w }),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub depth: Cost,
    /// Send group through which the probe from the destination arrived, i.e.
    /// the first hop towards it.
    pub via_group: GroupId,
}

/// Outgoing shortest-path costs as learned by Stage 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathTable {
    entries: BTreeMap<NodeId, PathEntry>,
}

impl PathTable {
    pub fn depth(&self, node: &NodeId) -> Option<Cost> {
        self.entries.get(node).map(|e| e.depth)
    }

    pub fn get(&self, node: &NodeId) -> Option<&PathEntry> {
        self.entries.get(node)
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, PathEntry> {
        &self.entries
    }

    pub fn depths(&self) -> BTreeMap<NodeId, Cost> {
        self.entries.iter().map(|(n, e)| (n.clone(), e.depth)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Records `depth` if it beats the current entry. Returns whether it did.
    pub fn improve(&mut self, node: &NodeId, depth: Cost, via: &GroupId) -> bool {
        match self.entries.get(node) {
            Some(e) if e.depth <= depth => false,
            _ => {
                self.entries.insert(node.clone(), PathEntry { depth, via_group: via.clone() });
                true
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::int;

    #[test]
    fn threshold_examples() {
        assert_eq!(default_threshold(6), Ok(int(3)));
        assert_eq!(default_threshold(5), Ok(int(2)));
        assert_eq!(default_threshold(2), Ok(int(1)));
        assert_eq!(default_threshold(1), Err(BpdError::TooFewNodes(1)));
    }

    #[test]
    fn config_rejects_threshold_below_weight() {
        let cfg = BpdConfig::new(int(1));
        assert!(matches!(cfg.validate(Some(int(2))), Err(BpdError::ThresholdBelowWeight { .. })));
        assert!(cfg.validate(Some(int(1))).is_ok());
        assert!(BpdConfig::new(int(0)).validate(None).is_err());
    }

    #[test]
    fn path_table_only_improves() {
        let mut t = PathTable::default();
        let g = GroupId::from("g");
        assert!(t.improve(&"a".into(), int(3), &g));
        assert!(!t.improve(&"a".into(), int(3), &g));
        assert!(t.improve(&"a".into(), int(2), &g));
        assert!(!t.improve(&"a".into(), int(4), &g));
        assert_eq!(t.depth(&"a".into()), Some(int(2)));
    }
}

//! Directed weighted graphs and the shortest-path queries used throughout the
//! crate.

use std::{
    cmp::Reverse,
    collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque},
    fmt,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{self, Cost};

/// Opaque node identifier. Ordering is lexicographic on the underlying string
/// and is relied on for deterministic iteration and leader election.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge weight must be positive, got {0}")]
    NonPositiveWeight(Cost),
    #[error("topology has no nodes")]
    EmptyTopology,
    #[error("random topology not strongly connected after {attempts} attempts")]
    NotConnectable { attempts: u32 },
}

/// A directed graph with at most one weighted edge per ordered pair and no
/// self-loops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DirectedGraph {
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, Cost>>,
}

impl DirectedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_nodes<I: IntoIterator<Item = NodeId>>(nodes: I) -> Self {
        let mut g = Self::new();
        for n in nodes {
            g.add_node(n);
        }
        g
    }

    pub fn add_node(&mut self, node: NodeId) {
        self.adjacency.entry(node).or_default();
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId, weight: Cost) -> Result<(), GraphError> {
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        if !cost::is_positive(&weight) {
            return Err(GraphError::NonPositiveWeight(weight));
        }
        self.add_node(to.clone());
        let out = self.adjacency.entry(from.clone()).or_default();
        if out.contains_key(&to) {
            return Err(GraphError::DuplicateEdge(from, to));
        }
        out.insert(to, weight);
        Ok(())
    }

    /// Inserts an edge, keeping the cheaper weight if the pair already exists.
    /// Self-loops are ignored.
    pub fn merge_edge(&mut self, from: &NodeId, to: &NodeId, weight: Cost) {
        if from == to {
            return;
        }
        self.add_node(to.clone());
        let out = self.adjacency.entry(from.clone()).or_default();
        out.entry(to.clone())
            .and_modify(|w| {
                if weight < *w {
                    *w = weight
                }
            })
            .or_insert(weight);
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.adjacency.keys()
    }

    pub fn contains_node(&self, node: &NodeId) -> bool {
        self.adjacency.contains_key(node)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeMap::len).sum()
    }

    /// Edges in `(from, to)` order.
    pub fn edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId, Cost)> {
        self.adjacency
            .iter()
            .flat_map(|(u, out)| out.iter().map(move |(v, w)| (u, v, *w)))
    }

    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges().map(|(u, v, _)| (u.clone(), v.clone())).collect()
    }

    pub fn weight(&self, from: &NodeId, to: &NodeId) -> Option<Cost> {
        self.adjacency.get(from).and_then(|out| out.get(to)).copied()
    }

    pub fn out_neighbors<'a>(&'a self, node: &NodeId) -> impl Iterator<Item = (&'a NodeId, Cost)> + 'a {
        self.adjacency
            .get(node)
            .into_iter()
            .flat_map(|out| out.iter().map(|(v, w)| (v, *w)))
    }

    pub fn out_degree(&self, node: &NodeId) -> usize {
        self.adjacency.get(node).map_or(0, BTreeMap::len)
    }

    pub fn in_degree(&self, node: &NodeId) -> usize {
        self.adjacency.values().filter(|out| out.contains_key(node)).count()
    }

    pub fn max_weight(&self) -> Option<Cost> {
        self.edges().map(|(_, _, w)| w).max()
    }

    pub fn reversed(&self) -> DirectedGraph {
        let mut r = DirectedGraph::with_nodes(self.nodes().cloned());
        for (u, v, w) in self.edges() {
            r.merge_edge(v, u, w);
        }
        r
    }

    /// Induced subgraph on `keep`.
    pub fn restricted_to(&self, keep: &BTreeSet<NodeId>) -> DirectedGraph {
        let mut g = DirectedGraph::with_nodes(self.nodes().filter(|n| keep.contains(*n)).cloned());
        for (u, v, w) in self.edges() {
            if keep.contains(u) && keep.contains(v) {
                g.merge_edge(u, v, w);
            }
        }
        g
    }

    /// Dijkstra from `source`. The source itself is not included.
    pub fn shortest_paths_from(&self, source: &NodeId) -> BTreeMap<NodeId, Cost> {
        let mut dist: BTreeMap<NodeId, Cost> = BTreeMap::new();
        let mut done: BTreeSet<NodeId> = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((cost::int(0), source.clone())));
        while let Some(Reverse((d, u))) = heap.pop() {
            if !done.insert(u.clone()) {
                continue;
            }
            for (v, w) in self.out_neighbors(&u) {
                if done.contains(v) {
                    continue;
                }
                let nd = d + w;
                if dist.get(v).is_none_or(|cur| nd < *cur) {
                    dist.insert(v.clone(), nd);
                    heap.push(Reverse((nd, v.clone())));
                }
            }
        }
        dist.remove(source);
        dist
    }

    pub fn all_pairs_shortest_paths(&self) -> BTreeMap<NodeId, BTreeMap<NodeId, Cost>> {
        self.nodes()
            .map(|n| (n.clone(), self.shortest_paths_from(n)))
            .collect()
    }

    /// Unweighted hop count from `from` to `to`.
    pub fn hop_distance(&self, from: &NodeId, to: &NodeId) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        let mut seen = BTreeSet::from([from.clone()]);
        let mut queue = VecDeque::from([(from.clone(), 0usize)]);
        while let Some((u, d)) = queue.pop_front() {
            for (v, _) in self.out_neighbors(&u) {
                if v == to {
                    return Some(d + 1);
                }
                if seen.insert(v.clone()) {
                    queue.push_back((v.clone(), d + 1));
                }
            }
        }
        None
    }

    pub fn reachable_from(&self, source: &NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([source.clone()]);
        let mut stack = vec![source.clone()];
        while let Some(u) = stack.pop() {
            for (v, _) in self.out_neighbors(&u) {
                if seen.insert(v.clone()) {
                    stack.push(v.clone());
                }
            }
        }
        seen
    }

    /// True for graphs with at most one node.
    pub fn is_strongly_connected(&self) -> bool {
        let Some(first) = self.nodes().next() else {
            return true;
        };
        self.reachable_from(first).len() == self.node_count()
            && self.reversed().reachable_from(first).len() == self.node_count()
    }

    /// Largest shortest-path cost over ordered pairs, `None` if some pair is
    /// unreachable.
    pub fn max_distance(&self) -> Option<Cost> {
        let n = self.node_count();
        let mut max = cost::int(0);
        for u in self.nodes() {
            let d = self.shortest_paths_from(u);
            if d.len() + 1 < n {
                return None;
            }
            if let Some(m) = d.values().max() {
                max = max.max(*m);
            }
        }
        Some(max)
    }

    /// Number of ordered pairs `(u, v)`, `u != v`, with no directed path.
    pub fn unreachable_pairs(&self) -> usize {
        let n = self.node_count();
        self.nodes()
            .map(|u| n - self.reachable_from(u).len())
            .sum()
    }
}

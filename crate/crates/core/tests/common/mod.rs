//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! the library's own path or connectivity code.
#![allow(dead_code)]

use std::{
    cmp::Reverse,
    collections::{BTreeMap, BTreeSet, BinaryHeap},
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toplink_core::{Cost, DirectedGraph, NodeId};

pub fn n(s: &str) -> NodeId {
    NodeId::from(s)
}

/// Weighted edge list as plain tuples.
pub fn edges_of(g: &DirectedGraph) -> Vec<(NodeId, NodeId, Cost)> {
    g.edges().map(|(u, v, w)| (u.clone(), v.clone(), w)).collect()
}

/// All-pairs shortest path costs by Floyd–Warshall. Missing pairs are
/// unreachable; the diagonal is omitted.
#[allow(clippy::needless_range_loop)]
pub fn floyd_warshall(nodes: &[NodeId], edges: &[(NodeId, NodeId, Cost)]) -> BTreeMap<(NodeId, NodeId), Cost> {
    let idx: BTreeMap<&NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let k = nodes.len();
    let mut d: Vec<Vec<Option<Cost>>> = vec![vec![None; k]; k];
    for (u, v, w) in edges {
        let (i, j) = (idx[u], idx[v]);
        if d[i][j].is_none_or(|c| *w < c) {
            d[i][j] = Some(*w);
        }
    }
    for m in 0..k {
        for i in 0..k {
            let Some(a) = d[i][m] else { continue };
            for j in 0..k {
                if let Some(b) = d[m][j] {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for i in 0..k {
        for j in 0..k {
            if i != j {
                if let Some(c) = d[i][j] {
                    out.insert((nodes[i].clone(), nodes[j].clone()), c);
                }
            }
        }
    }
    out
}

/// Strongly connected components by Tarjan's algorithm.
pub fn tarjan_scc(nodes: &[NodeId], edges: &[(NodeId, NodeId, Cost)]) -> Vec<BTreeSet<NodeId>> {
    struct St {
        index: usize,
        idx: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        out: Vec<BTreeSet<usize>>,
    }
    fn visit(v: usize, adj: &[Vec<usize>], s: &mut St) {
        s.idx[v] = Some(s.index);
        s.low[v] = s.index;
        s.index += 1;
        s.stack.push(v);
        s.on[v] = true;
        for &w in &adj[v] {
            match s.idx[w] {
                None => {
                    visit(w, adj, s);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on[w] => s.low[v] = s.low[v].min(iw),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.idx[v] {
            let mut comp = BTreeSet::new();
            loop {
                let w = s.stack.pop().unwrap();
                s.on[w] = false;
                comp.insert(w);
                if w == v {
                    break;
                }
            }
            s.out.push(comp);
        }
    }
    let pos: BTreeMap<&NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut adj = vec![Vec::new(); nodes.len()];
    for (u, v, _) in edges {
        adj[pos[u]].push(pos[v]);
    }
    let k = nodes.len();
    let mut s = St { index: 0, idx: vec![None; k], low: vec![0; k], on: vec![false; k], stack: Vec::new(), out: Vec::new() };
    for v in 0..k {
        if s.idx[v].is_none() {
            visit(v, &adj, &mut s);
        }
    }
    s.out.into_iter().map(|c| c.into_iter().map(|i| nodes[i].clone()).collect()).collect()
}

/// Single-source shortest path costs by Dijkstra; `src` itself is omitted.
pub fn dijkstra(g: &DirectedGraph, src: &NodeId) -> BTreeMap<NodeId, Cost> {
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, Cost)>> = BTreeMap::new();
    for (u, v, w) in edges_of(g) {
        adj.entry(u).or_default().push((v, w));
    }
    let mut dist = BTreeMap::from([(src.clone(), Cost::from_integer(0))]);
    let mut heap = BinaryHeap::from([Reverse((Cost::from_integer(0), src.clone()))]);
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist.get(&u).is_some_and(|best| d > *best) {
            continue;
        }
        for (v, w) in adj.get(&u).into_iter().flatten() {
            let nd = d + *w;
            if dist.get(v).is_none_or(|c| nd < *c) {
                dist.insert(v.clone(), nd);
                heap.push(Reverse((nd, v.clone())));
            }
        }
    }
    dist.remove(src);
    dist
}

pub fn oracle_strongly_connected(g: &DirectedGraph) -> bool {
    let nodes: Vec<NodeId> = g.nodes().cloned().collect();
    nodes.len() <= 1 || tarjan_scc(&nodes, &edges_of(g)).len() == 1
}

pub fn oracle_max_distance(g: &DirectedGraph) -> Option<Cost> {
    let nodes: Vec<NodeId> = g.nodes().cloned().collect();
    let d = floyd_warshall(&nodes, &edges_of(g));
    if d.len() != nodes.len() * nodes.len().saturating_sub(1) {
        return None;
    }
    d.values().copied().max()
}

/// Random strongly connected digraph with weights drawn from {1, 2}. Edges
/// are added with probability `p`; draws that are not strongly connected
/// (Tarjan) are discarded.
pub fn random_digraph(n_nodes: usize, p: f64, seed: u64) -> DirectedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<NodeId> = (0..n_nodes).map(|i| NodeId::new(format!("v{i:02}"))).collect();
    loop {
        let mut g = DirectedGraph::with_nodes(names.iter().cloned());
        for u in &names {
            for v in &names {
                if u != v && rng.gen_bool(p) {
                    g.add_edge(u.clone(), v.clone(), Cost::from_integer(rng.gen_range(1..=2))).unwrap();
                }
            }
        }
        if oracle_strongly_connected(&g) {
            return g;
        }
    }
}

/// The ten-link, six-peer base overlay used by the experiments.
pub fn base6() -> DirectedGraph {
    let mut g = DirectedGraph::new();
    for (u, v) in [
        ("n1", "n2"), ("n2", "n3"), ("n3", "n4"), ("n4", "n5"), ("n5", "n6"), ("n6", "n1"),
        ("n2", "n1"), ("n4", "n3"), ("n6", "n5"), ("n3", "n1"),
    ] {
        g.add_edge(n(u), n(v), Cost::from_integer(1)).unwrap();
    }
    g
}

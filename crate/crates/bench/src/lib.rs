//! Fixtures shared by the benchmarks.

use toplink_core::{
    cost,
    toplink::{build_graph, parse_toplink},
    DirectedGraph, NodeId,
};

pub fn ring(n: usize) -> DirectedGraph {
    let mut g = DirectedGraph::new();
    for i in 0..n {
        g.add_edge(NodeId::new(format!("n{i}")), NodeId::new(format!("n{}", (i + 1) % n)), cost::int(1))
            .expect("ring edges are distinct");
    }
    g
}

/// Source text of a `random(fanout)` topology over `n` peers.
pub fn random_source(n: usize, fanout: u32) -> String {
    let peers: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    format!("topology random({fanout});\nnodes {{ {} }}\n", peers.join(", "))
}

/// Strongly connected random digraph with out-degree `fanout`.
pub fn random(n: usize, fanout: u32, seed: u64) -> DirectedGraph {
    let spec = parse_toplink(&random_source(n, fanout)).expect("fixture parses");
    build_graph(&spec, seed).expect("random fixture is connectable")
}

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Preset, TopologySpec};
use crate::{
    cost,
    graph::{DirectedGraph, GraphError, NodeId},
};

/// Number of random draws attempted before giving up on strong connectivity.
pub const RANDOM_RETRY_BUDGET: u32 = 1000;

/// Expands a topology description into a concrete graph.
///
/// Random topologies are resampled from the same seeded stream until the draw
/// is strongly connected, so a given `(spec, seed)` always yields the same
/// graph.
pub fn build_graph(spec: &TopologySpec, seed: u64) -> Result<DirectedGraph, GraphError> {
    if spec.peers.is_empty() {
        return Err(GraphError::EmptyTopology);
    }
    let ids: Vec<NodeId> = spec.peer_ids().cloned().collect();
    let mut graph = DirectedGraph::with_nodes(ids.iter().cloned());
    match spec.preset {
        Preset::Ring => {
            let n = ids.len();
            if n > 1 {
                for i in 0..n {
                    graph.add_edge(ids[i].clone(), ids[(i + 1) % n].clone(), cost::int(1))?;
                }
            }
        }
        Preset::Custom => {
            for link in &spec.links {
                graph.add_edge(link.from.clone(), link.to.clone(), link.weight)?;
            }
        }
        Preset::Random { fanout } => {
            let k = fanout as usize;
            let n = ids.len();
            if k == 0 || k >= n {
                return Err(GraphError::NotConnectable { attempts: 0 });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..RANDOM_RETRY_BUDGET {
                let mut candidate = DirectedGraph::with_nodes(ids.iter().cloned());
                for (i, from) in ids.iter().enumerate() {
                    // sample among the n-1 other peers
                    for j in sample(&mut rng, n - 1, k).into_iter() {
                        let j = if j >= i { j + 1 } else { j };
                        candidate.add_edge(from.clone(), ids[j].clone(), cost::int(1))?;
                    }
                }
                if candidate.is_strongly_connected() {
                    return Ok(candidate);
                }
            }
            return Err(GraphError::NotConnectable { attempts: RANDOM_RETRY_BUDGET });
        }
    }
    Ok(graph)
}

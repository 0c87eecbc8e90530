//! All-pairs hop distances with per-distance counts.
//!
//! The model weights each source node j by a learned function of the scaled
//! distance 1/(1 + dist(j, i)) and normalizes by how many nodes sit at that
//! exact distance from i. This module computes all three tables (distances,
//! counts, scaled distances) in one pass of breadth-first searches.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use ndarray::Array2;

use crate::graph::GraphInstance;

/// Marker for "no path exists". Scaled distance maps it to 0.
pub const UNREACHABLE: u32 = u32::MAX;

/// Distance tables for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    pub node_count: usize,
    /// `dist[[i, j]]` = hops from i to j, or [`UNREACHABLE`]. Symmetric.
    pub dist: Array2<u32>,
    /// `counts[i][d]` = number of nodes at distance d from i, with the
    /// [`UNREACHABLE`] bucket counting nodes i cannot reach. Values sum to
    /// the node count for every i.
    pub counts: Vec<BTreeMap<u32, u32>>,
    /// `scaled[[i, j]]` = 1/(1 + dist), or 0 when unreachable. Entries lie
    /// in [0, 1] with `scaled[[i, i]]` = 1.
    pub scaled: Array2<f64>,
}

impl DistanceProfile {
    /// Normalization weight for the pair (i, j): one over the number of
    /// nodes at the same distance from i as j is. Never zero or infinite,
    /// because j itself is always in its own bucket.
    #[inline]
    pub fn inv_count(&self, i: usize, j: usize) -> f64 {
        1.0 / self.counts[i][&self.dist[[i, j]]] as f64
    }
}

/// Runs BFS from every node.
pub fn all_pairs_distances(g: &GraphInstance) -> DistanceProfile {
    let n = g.node_count;
    let adj = g.adjacency();
    let mut dist = Array2::from_elem((n, n), UNREACHABLE);
    let mut counts = vec![BTreeMap::new(); n];
    let mut scaled = Array2::zeros((n, n));

    let mut queue = VecDeque::new();
    for source in 0..n {
        dist[[source, source]] = 0;
        queue.clear();
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[[source, u]];
            for &v in &adj[u] {
                if dist[[source, v as usize]] == UNREACHABLE {
                    dist[[source, v as usize]] = du + 1;
                    queue.push_back(v as usize);
                }
            }
        }
        for j in 0..n {
            let d = dist[[source, j]];
            *counts[source].entry(d).or_insert(0) += 1;
            scaled[[source, j]] = scale(d);
        }
    }

    DistanceProfile { node_count: n, dist, counts, scaled }
}

/// Maps a hop distance to the model's input scale: self-distance to 1,
/// longer paths toward 0, and no path to exactly 0.
#[inline]
pub fn scale(dist: u32) -> f64 {
    if dist == UNREACHABLE {
        0.0
    } else {
        1.0 / (1.0 + dist as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn graph(n: usize, edges: &[(u32, u32)]) -> GraphInstance {
        GraphInstance::new(n, edges, Array2::zeros((n, 1)), None, None, None).unwrap()
    }

    #[test]
    fn path_graph_distances_and_counts() {
        let p = all_pairs_distances(&graph(3, &[(0, 1), (1, 2)]));
        assert_eq!(p.dist[[0, 2]], 2);
        assert_eq!(p.scaled[[0, 2]], 1.0 / 3.0);
        assert_eq!(p.counts[1][&1], 2);
        assert_eq!(p.counts[0][&0], 1);
        assert_eq!(p.inv_count(1, 0), 0.5);
    }

    #[test]
    fn disconnected_pair_is_unreachable_and_scaled_to_zero() {
        let p = all_pairs_distances(&graph(2, &[]));
        assert_eq!(p.dist[[0, 1]], UNREACHABLE);
        assert_eq!(p.scaled[[0, 1]], 0.0);
        assert_eq!(p.counts[0][&UNREACHABLE], 1);
        assert_eq!(p.inv_count(0, 1), 1.0);
    }

    #[test]
    fn self_distance_is_zero_and_scaled_to_one() {
        let p = all_pairs_distances(&graph(4, &[(0, 1), (2, 3)]));
        for i in 0..4 {
            assert_eq!(p.dist[[i, i]], 0);
            assert_eq!(p.scaled[[i, i]], 1.0);
        }
    }

    #[test]
    fn counts_sum_to_node_count() {
        let p = all_pairs_distances(&graph(5, &[(0, 1), (1, 2), (3, 4)]));
        for i in 0..5 {
            let total: u32 = p.counts[i].values().sum();
            assert_eq!(total as usize, 5);
        }
    }

    #[test]
    fn single_node_graph() {
        let p = all_pairs_distances(&graph(1, &[]));
        assert_eq!(p.dist[[0, 0]], 0);
        assert_eq!(p.scaled[[0, 0]], 1.0);
        assert_eq!(p.counts[0][&0], 1);
    }
}

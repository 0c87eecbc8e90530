//! BFS distance tables checked against an independent Floyd–Warshall
//! implementation on randomized graphs.

use ndarray::Array2;
use proptest::prelude::*;

use gnan::distance::{all_pairs_distances, scale, UNREACHABLE};
use gnan::graph::GraphInstance;

/// O(n^3) oracle, written against the textbook recurrence rather than any
/// of the library's traversal code.
fn floyd_warshall(node_count: usize, edges: &[(u32, u32)]) -> Vec<Vec<u64>> {
    const INF: u64 = u64::MAX / 4;
    let mut dist = vec![vec![INF; node_count]; node_count];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v) in edges {
        dist[u as usize][v as usize] = 1;
        dist[v as usize][u as usize] = 1;
    }
    for k in 0..node_count {
        for i in 0..node_count {
            for j in 0..node_count {
                let via = dist[i][k] + dist[k][j];
                if via < dist[i][j] {
                    dist[i][j] = via;
                }
            }
        }
    }
    dist
}

fn arbitrary_graph(max_nodes: usize) -> impl Strategy<Value = GraphInstance> {
    (1..=max_nodes).prop_flat_map(|n| {
        let pairs = if n > 1 {
            prop::collection::vec((0..n as u32, 0..n as u32), 0..=n * 2)
        } else {
            prop::collection::vec((0u32..1, 0u32..1), 0..=0)
        };
        pairs.prop_map(move |raw| {
            let edges: Vec<(u32, u32)> =
                raw.into_iter().filter(|(u, v)| u != v).collect();
            GraphInstance::new(n, &edges, Array2::zeros((n, 1)), None, Some(0.0), None)
                .expect("generated graph is valid")
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bfs_matches_floyd_warshall(g in arbitrary_graph(64)) {
        let prof = all_pairs_distances(&g);
        let oracle = floyd_warshall(g.node_count, &g.edges);
        const INF: u64 = u64::MAX / 4;
        for i in 0..g.node_count {
            for j in 0..g.node_count {
                let expected =
                    if oracle[i][j] >= INF { UNREACHABLE } else { oracle[i][j] as u32 };
                prop_assert_eq!(prof.dist[[i, j]], expected, "pair ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn counts_partition_the_nodes(g in arbitrary_graph(40)) {
        let prof = all_pairs_distances(&g);
        for i in 0..g.node_count {
            let total: u32 = prof.counts[i].values().sum();
            prop_assert_eq!(total as usize, g.node_count);
            for (&d, &c) in &prof.counts[i] {
                let seen =
                    (0..g.node_count).filter(|&j| prof.dist[[i, j]] == d).count();
                prop_assert_eq!(seen, c as usize);
            }
        }
    }

    #[test]
    fn scaled_distances_follow_the_map(g in arbitrary_graph(40)) {
        let prof = all_pairs_distances(&g);
        for i in 0..g.node_count {
            prop_assert_eq!(prof.scaled[[i, i]], 1.0);
            for j in 0..g.node_count {
                let s = prof.scaled[[i, j]];
                prop_assert_eq!(s, scale(prof.dist[[i, j]]));
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn distances_are_symmetric(g in arbitrary_graph(40)) {
        let prof = all_pairs_distances(&g);
        for i in 0..g.node_count {
            for j in 0..g.node_count {
                prop_assert_eq!(prof.dist[[i, j]], prof.dist[[j, i]]);
            }
        }
    }
}

#[test]
fn unreachable_scales_to_zero() {
    assert_eq!(scale(UNREACHABLE), 0.0);
    assert_eq!(scale(0), 1.0);
    assert_eq!(scale(1), 0.5);
    assert_eq!(scale(3), 0.25);
}

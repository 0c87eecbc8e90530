//! Structural properties of the forward pass: the fast contraction agrees
//! with term-by-term evaluation, predictions commute with node relabeling,
//! features contribute through their own networks only, and each head
//! produces outputs of the right form.

use ndarray::{s, Array2};
use proptest::prelude::*;

use gnan::distance::all_pairs_distances;
use gnan::graph::GraphInstance;
use gnan::model::{graph_logits, GnanModel, ModelConfig, Task};

fn graph_with_features(max_nodes: usize, max_features: usize) -> impl Strategy<Value = GraphInstance> {
    (1..=max_nodes, 1..=max_features).prop_flat_map(|(n, d)| {
        let pairs = if n > 1 {
            prop::collection::vec((0..n as u32, 0..n as u32), 0..=n * 2)
        } else {
            prop::collection::vec((0u32..1, 0u32..1), 0..=0)
        };
        let values = prop::collection::vec(-2.0f64..2.0, n * d);
        (pairs, values).prop_map(move |(raw, values)| {
            let edges: Vec<(u32, u32)> =
                raw.into_iter().filter(|(u, v)| u != v).collect();
            let features = Array2::from_shape_vec((n, d), values).unwrap();
            GraphInstance::new(n, &edges, features, None, Some(0.0), None)
                .expect("generated graph is valid")
        })
    })
}

/// Architecture draw covering every structural switch: output widths for
/// binary/regression and multiclass heads, shared and per-feature distance
/// networks, and both normalization settings.
fn model_for(
    g: &GraphInstance,
    output_dim: usize,
    hidden: usize,
    per_feature: bool,
    normalize: bool,
    seed: u64,
) -> GnanModel<f64> {
    let cfg = ModelConfig {
        task: if output_dim == 1 { Task::NodeBinary } else { Task::NodeMulticlass },
        output_dim,
        hidden_layers: hidden,
        hidden_width: 3,
        dropout: 0.0,
        per_feature_distance: per_feature,
        normalize_by_count: normalize,
    };
    GnanModel::new(&cfg, g.feature_dim(), seed).unwrap()
}

fn output_dims() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 3, 4])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn contraction_matches_termwise_evaluation(
        g in graph_with_features(20, 4),
        c in output_dims(),
        hidden in 1usize..=2,
        per_feature in any::<bool>(),
        normalize in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let model = model_for(&g, c, hidden, per_feature, normalize, seed);
        let prof = all_pairs_distances(&g);
        let fast = model.node_representations(&g, &prof).unwrap();
        let naive = model.node_representations_naive(&g, &prof).unwrap();
        for (idx, (a, b)) in fast.iter().zip(naive.iter()).enumerate() {
            prop_assert!(
                (a - b).abs() <= 1e-10,
                "entry {} differs: {} vs {}", idx, a, b
            );
        }
    }

    #[test]
    fn node_predictions_follow_relabeling(
        (g, perm) in graph_with_features(16, 3).prop_flat_map(|g| {
            let ids: Vec<usize> = (0..g.node_count).collect();
            (Just(g), Just(ids).prop_shuffle())
        }),
        c in output_dims(),
        per_feature in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let model = model_for(&g, c, 1, per_feature, true, seed);
        let relabeled = g.permute(&perm).unwrap();
        let base = model.predict_nodes(&g, &all_pairs_distances(&g)).unwrap();
        let moved = model.predict_nodes(&relabeled, &all_pairs_distances(&relabeled)).unwrap();
        for i in 0..g.node_count {
            for class in 0..c {
                prop_assert!(
                    (base[[i, class]] - moved[[perm[i], class]]).abs() <= 1e-10,
                    "node {} class {}: {} vs {}", i, class, base[[i, class]], moved[[perm[i], class]]
                );
            }
        }
    }

    #[test]
    fn graph_prediction_ignores_node_order(
        (g, perm) in graph_with_features(16, 3).prop_flat_map(|g| {
            let ids: Vec<usize> = (0..g.node_count).collect();
            (Just(g), Just(ids).prop_shuffle())
        }),
        c in output_dims(),
        normalize in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let model = model_for(&g, c, 2, false, normalize, seed);
        let relabeled = g.permute(&perm).unwrap();
        let base = model.predict_graph(&g, &all_pairs_distances(&g)).unwrap();
        let moved = model.predict_graph(&relabeled, &all_pairs_distances(&relabeled)).unwrap();
        for class in 0..c {
            prop_assert!(
                (base[class] - moved[class]).abs() <= 1e-10,
                "class {}: {} vs {}", class, base[class], moved[class]
            );
        }
    }

    /// Editing one feature column must leave every other feature's slice of
    /// the representation bit-identical: nothing in the additive structure
    /// couples the columns.
    #[test]
    fn other_feature_columns_are_untouched(
        g in graph_with_features(12, 4),
        c in output_dims(),
        per_feature in any::<bool>(),
        seed in 0u64..1000,
        node_pick in any::<prop::sample::Index>(),
        feat_pick in any::<prop::sample::Index>(),
    ) {
        let model = model_for(&g, c, 1, per_feature, true, seed);
        let node = node_pick.index(g.node_count);
        let feat = feat_pick.index(g.feature_dim());

        let mut features = g.features.clone();
        features[[node, feat]] += 1.5;
        let edited =
            GraphInstance::new(g.node_count, &g.edges, features, None, Some(0.0), None).unwrap();

        let prof = all_pairs_distances(&g);
        let before = model.node_representations(&g, &prof).unwrap();
        let after = model.node_representations(&edited, &prof).unwrap();
        for k in 0..g.feature_dim() {
            if k == feat {
                continue;
            }
            prop_assert_eq!(
                before.slice(s![.., k, ..]),
                after.slice(s![.., k, ..]),
                "feature {} shifted when feature {} was edited", k, feat
            );
        }
    }

    #[test]
    fn multiclass_outputs_are_distributions(
        g in graph_with_features(12, 3),
        c in prop::sample::select(vec![3usize, 4, 5]),
        seed in 0u64..1000,
    ) {
        let model = model_for(&g, c, 1, false, true, seed);
        let prof = all_pairs_distances(&g);

        let nodes = model.predict_nodes(&g, &prof).unwrap();
        for row in nodes.outer_iter() {
            let total: f64 = row.sum();
            prop_assert!((total - 1.0).abs() <= 1e-9, "node row sums to {}", total);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        let graph = model.predict_graph(&g, &prof).unwrap();
        let total: f64 = graph.sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "graph output sums to {}", total);
    }

    /// The regression head is the identity, so the graph prediction is the
    /// raw pooled logit.
    #[test]
    fn regression_head_returns_raw_sums(
        g in graph_with_features(12, 3),
        seed in 0u64..1000,
    ) {
        let cfg = ModelConfig {
            task: Task::GraphRegression,
            output_dim: 1,
            hidden_layers: 1,
            hidden_width: 3,
            dropout: 0.0,
            per_feature_distance: false,
            normalize_by_count: true,
        };
        let model = GnanModel::<f64>::new(&cfg, g.feature_dim(), seed).unwrap();
        let prof = all_pairs_distances(&g);
        let h = model.node_representations(&g, &prof).unwrap();
        let predicted = model.predict_graph(&g, &prof).unwrap();
        prop_assert_eq!(predicted[0], graph_logits(&h)[0]);
    }
}

/// Hand-rolled contraction on a triangle plus an isolated node, with the
/// distance weights written out as literals: self at scaled distance 1, the
/// two neighbors at 0.5 each with count weight 1/2, and the unreachable node
/// at scaled distance 0 with weight 1.
#[test]
fn triangle_with_isolated_node_matches_hand_contraction() {
    let features = ndarray::arr2(&[[0.3, -1.2], [0.8, 0.4], [-0.5, 0.9], [1.1, -0.7]]);
    let g = GraphInstance::new(4, &[(0, 1), (1, 2), (0, 2)], features, None, Some(0.0), None)
        .unwrap();
    let cfg = ModelConfig {
        task: Task::NodeMulticlass,
        output_dim: 3,
        hidden_layers: 2,
        hidden_width: 4,
        dropout: 0.0,
        per_feature_distance: false,
        normalize_by_count: true,
    };
    let model = GnanModel::<f64>::new(&cfg, 2, 7).unwrap();
    let prof = all_pairs_distances(&g);
    let h = model.node_representations(&g, &prof).unwrap();

    let rho = |s: f64| model.distance_net(0).eval_scalar(s).unwrap();
    for k in 0..2 {
        let f = |x: f64| model.feature_nets[k].eval_scalar(x).unwrap();
        for class in 0..3 {
            let expected = 1.0 * rho(1.0)[class] * f(g.features[[0, k]])[class]
                + 0.5 * rho(0.5)[class] * f(g.features[[1, k]])[class]
                + 0.5 * rho(0.5)[class] * f(g.features[[2, k]])[class]
                + 1.0 * rho(0.0)[class] * f(g.features[[3, k]])[class];
            assert!(
                (h[[0, k, class]] - expected).abs() <= 1e-12,
                "feature {k} class {class}: {} vs {expected}",
                h[[0, k, class]]
            );
        }
    }
}

/// A singleton graph reduces the sum to its self term.
#[test]
fn singleton_graph_is_the_self_term() {
    let g = GraphInstance::new(1, &[], ndarray::arr2(&[[0.4, -0.9]]), None, Some(0.0), None)
        .unwrap();
    let cfg = ModelConfig {
        task: Task::NodeBinary,
        output_dim: 1,
        hidden_layers: 1,
        hidden_width: 3,
        dropout: 0.0,
        per_feature_distance: true,
        normalize_by_count: true,
    };
    let model = GnanModel::<f64>::new(&cfg, 2, 11).unwrap();
    let prof = all_pairs_distances(&g);
    let h = model.node_representations(&g, &prof).unwrap();
    for k in 0..2 {
        let rho = model.distance_net(k).eval_scalar(1.0).unwrap();
        let f = model.feature_nets[k].eval_scalar(g.features[[0, k]]).unwrap();
        assert_eq!(h[[0, k, 0]], rho[0] * f[0]);
    }
}

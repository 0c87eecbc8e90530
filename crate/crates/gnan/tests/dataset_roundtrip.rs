//! Write/parse round trips on randomized datasets, bit-exact for every
//! representable field.

use ndarray::Array2;
use proptest::prelude::*;

use gnan::dataset::{parse_dataset, write_dataset, DatasetFormat};
use gnan::graph::{GraphInstance, SplitMasks};

/// Finite doubles across the full exponent range, not just round values.
fn finite_f64() -> impl Strategy<Value = f64> {
    any::<u64>().prop_map(f64::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn label_value() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), Just(2.0), finite_f64()]
}

#[derive(Debug, Clone, Copy)]
enum LabelMode {
    None,
    Node,
    Graph,
}

fn one_graph(
    d: usize,
    mode: LabelMode,
    with_masks: bool,
) -> impl Strategy<Value = GraphInstance> {
    (1usize..8).prop_flat_map(move |n| {
        let edges = prop::collection::vec((0..n as u32, 0..n as u32), 0..=2 * n);
        let features = prop::collection::vec(finite_f64(), n * d);
        let node_labels = prop::collection::vec(label_value(), n);
        let graph_label = label_value();
        let roles = prop::collection::vec(0u8..4, n);
        (edges, features, node_labels, graph_label, roles).prop_map(
            move |(raw, feats, nl, gl, roles)| {
                let edges: Vec<(u32, u32)> =
                    raw.into_iter().filter(|(u, v)| u != v).collect();
                let features = Array2::from_shape_vec((n, d), feats).unwrap();
                let masks = with_masks.then(|| SplitMasks {
                    train: roles.iter().map(|&r| r == 1).collect(),
                    val: roles.iter().map(|&r| r == 2).collect(),
                    test: roles.iter().map(|&r| r == 3).collect(),
                });
                let (node_labels, graph_label) = match mode {
                    LabelMode::None => (None, None),
                    LabelMode::Node => (Some(nl), None),
                    LabelMode::Graph => (None, Some(gl)),
                };
                GraphInstance::new(n, &edges, features, node_labels, graph_label, masks)
                    .expect("generated graph is valid")
            },
        )
    })
}

fn dataset(mode: LabelMode, with_masks: bool) -> impl Strategy<Value = Vec<GraphInstance>> {
    (1usize..4).prop_flat_map(move |d| {
        prop::collection::vec(one_graph(d, mode, with_masks), 1..6)
    })
}

fn mode() -> impl Strategy<Value = LabelMode> {
    prop_oneof![Just(LabelMode::None), Just(LabelMode::Node), Just(LabelMode::Graph)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edge_json_round_trips(
        graphs in mode().prop_flat_map(|m| dataset(m, false)),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        write_dataset(&path, DatasetFormat::EdgeJson, &graphs).unwrap();
        let parsed = parse_dataset(&path, DatasetFormat::EdgeJson).unwrap();
        prop_assert_eq!(parsed, graphs);
    }

    #[test]
    fn edge_json_round_trips_masks(graphs in dataset(LabelMode::Node, true)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        write_dataset(&path, DatasetFormat::EdgeJson, &graphs).unwrap();
        let parsed = parse_dataset(&path, DatasetFormat::EdgeJson).unwrap();
        prop_assert_eq!(parsed, graphs);
    }

    #[test]
    fn flat_csv_round_trips(
        graphs in mode().prop_flat_map(|m| dataset(m, false)),
    ) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), DatasetFormat::FlatCsv, &graphs).unwrap();
        let parsed = parse_dataset(dir.path(), DatasetFormat::FlatCsv).unwrap();
        prop_assert_eq!(parsed, graphs);
    }

    #[test]
    fn double_round_trip_is_stable(graphs in dataset(LabelMode::Graph, false)) {
        // Idempotence: a parsed dataset rewrites to identical bytes.
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.json");
        let second = dir.path().join("b.json");
        write_dataset(&first, DatasetFormat::EdgeJson, &graphs).unwrap();
        let parsed = parse_dataset(&first, DatasetFormat::EdgeJson).unwrap();
        write_dataset(&second, DatasetFormat::EdgeJson, &parsed).unwrap();
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn flat_csv_rejects_masks() {
    let g = GraphInstance::new(
        2,
        &[(0, 1)],
        Array2::zeros((2, 1)),
        Some(vec![0.0, 1.0]),
        None,
        Some(SplitMasks {
            train: vec![true, false],
            val: vec![false, false],
            test: vec![false, true],
        }),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = write_dataset(dir.path(), DatasetFormat::FlatCsv, &[g]).unwrap_err();
    assert!(err.to_string().contains("mask"), "{err}");
}

//! Drives the installed binary end to end: train/predict/explain/crossval/
//! synth against real files, plus the exit-code and error-record contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gnan::dataset::{parse_dataset, write_dataset, DatasetFormat};
use gnan::distance::all_pairs_distances;
use gnan::explain::{all_contributions, distance_curves, sample_shape_curves, CurveGridSpec};
use gnan::model::{graph_logits, GnanModel, Task};
use gnan::serialize::load_model;
use gnan::synth::{LabelRule, SynthConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnan"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// The stderr error record every failing run must emit.
fn error_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn results_json(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("results.json")).expect("results.json exists");
    serde_json::from_str(&text).expect("results.json parses")
}

fn binary_dataset(dir: &Path) -> PathBuf {
    let cfg = SynthConfig { graphs: 24, task: Task::GraphBinary, seed: 5, ..SynthConfig::default() };
    let graphs = gnan::synth::generate(&cfg).unwrap();
    let path = dir.join("data.json");
    write_dataset(&path, DatasetFormat::EdgeJson, &graphs).unwrap();
    path
}

fn multiclass_dataset(dir: &Path) -> PathBuf {
    let cfg = SynthConfig {
        graphs: 10,
        min_nodes: 3,
        max_nodes: 6,
        task: Task::NodeMulticlass,
        seed: 8,
        rule: LabelRule {
            linear: vec![1.0, 1.0],
            quadratic: vec![0.0, 0.0],
            kernel_power: 1,
            thresholds: vec![-0.4, 0.6],
            margin: 0.1,
        },
        ..SynthConfig::default()
    };
    let graphs = gnan::synth::generate(&cfg).unwrap();
    let path = dir.join("data3.json");
    write_dataset(&path, DatasetFormat::EdgeJson, &graphs).unwrap();
    path
}

fn train_binary(dir: &Path, data: &Path, epochs: &str) -> PathBuf {
    let out = dir.join("train");
    let model = dir.join("model.json");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "graph-binary",
        "--out",
        out.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--epochs",
        epochs,
        "--seed",
        "9",
    ]);
    model
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[test]
fn train_writes_a_loadable_model_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let out = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "graph-binary",
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "5",
        "--seed",
        "9",
    ]);

    let model: GnanModel<f64> = load_model(&out.join("model.json")).unwrap();
    assert_eq!(model.task, Task::GraphBinary);
    assert!(model.feature_meta.is_some(), "trained model should carry feature ranges");

    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(lines.count(), 5);

    let record = results_json(&out);
    assert_eq!(record["command"], "train");
    assert_eq!(record["epochs_run"], 5);
    assert_eq!(record["model_file"], "model.json");
    let accuracy = record["metrics"]["train"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--data".into(),
            data.to_str().unwrap().into(),
            "--task".into(),
            "graph-binary".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--epochs".into(),
            "4".into(),
            "--seed".into(),
            "11".into(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let argv: Vec<String> = args(out);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        run_ok(&argv);
    }
    for file in ["model.json", "history.csv", "results.json"] {
        let left = fs::read(a.join(file)).unwrap();
        let right = fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn predict_scores_come_from_the_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let model_path = train_binary(dir.path(), &data, "8");

    let out = dir.path().join("pred");
    run_ok(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);

    let model: GnanModel<f64> = load_model(&model_path).unwrap();
    let graphs = parse_dataset(&data, DatasetFormat::EdgeJson).unwrap();
    let csv = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,score,label"));

    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), graphs.len());
    for (gi, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], gi.to_string());
        let score: f64 = fields[1].parse().unwrap();
        let label: u8 = fields[2].parse().unwrap();

        let prof = all_pairs_distances(&graphs[gi]);
        let h = model.node_representations(&graphs[gi], &prof).unwrap();
        let logit = graph_logits(&h)[0];
        assert_eq!(score, sigmoid(logit), "graph {gi} score drifted from the model file");
        assert!(score > 0.0 && score < 1.0);
        assert_eq!(label, u8::from(logit > 0.0));
    }

    // Scoring is read-only, so a second run reproduces the bytes.
    let out2 = dir.path().join("pred2");
    run_ok(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out.join("predictions.csv")).unwrap(),
        fs::read(out2.join("predictions.csv")).unwrap()
    );
}

#[test]
fn multiclass_rows_are_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let data = multiclass_dataset(dir.path());
    let out = dir.path().join("run");
    let model_path = dir.path().join("model.json");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "node-multiclass",
        "--classes",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--epochs",
        "5",
        "--seed",
        "2",
    ]);

    let pred = dir.path().join("pred");
    run_ok(&[
        "predict",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);

    let graphs = parse_dataset(&data, DatasetFormat::EdgeJson).unwrap();
    let node_total: usize = graphs.iter().map(|g| g.node_count).sum();
    let csv = fs::read_to_string(pred.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,score0,score1,score2,label"));

    let mut rows = 0;
    for row in lines {
        rows += 1;
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert!(fields[0].contains(':'), "node ids are graph:node, got {}", fields[0]);
        let probs: Vec<f64> = fields[1..4].iter().map(|f| f.parse().unwrap()).collect();
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() <= 1e-9, "row sums to {total}");
        let label: usize = fields[4].parse().unwrap();
        let argmax =
            (0..3).max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap()).unwrap();
        assert_eq!(label, argmax);
    }
    assert_eq!(rows, node_total);
}

#[test]
fn explain_curves_replay_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let model_path = train_binary(dir.path(), &data, "4");

    let out = dir.path().join("curves");
    run_ok(&[
        "explain",
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--curves",
    ]);

    let model: GnanModel<f64> = load_model(&model_path).unwrap();
    let mut curves = sample_shape_curves(&model, &CurveGridSpec::default()).unwrap();
    curves.extend(distance_curves(&model, 10).unwrap());

    let csv = fs::read_to_string(out.join("curves.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("feature,input,class,value"));
    let mut rows = lines.map(|l| l.split(',').collect::<Vec<_>>());
    for curve in &curves {
        let label = match curve.target {
            gnan::explain::CurveTarget::Feature(k) => k.to_string(),
            gnan::explain::CurveTarget::Distance(_) => "distance".to_string(),
        };
        for (grid_row, &input) in curve.grid.iter().enumerate() {
            for class in 0..curve.values.ncols() {
                let fields = rows.next().expect("csv row for every curve point");
                assert_eq!(fields[0], label);
                let csv_input: f64 = fields[1].parse().unwrap();
                assert_eq!(csv_input, input);
                assert_eq!(fields[2].parse::<usize>().unwrap(), class);
                let value: f64 = fields[3].parse().unwrap();
                assert_eq!(value, curve.values[[grid_row, class]]);
            }
        }
    }
    assert!(rows.next().is_none(), "extra rows after the last curve");
}

#[test]
fn heatmap_cells_are_curve_products() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let model_path = train_binary(dir.path(), &data, "4");

    let out = dir.path().join("hm");
    run_ok(&[
        "explain",
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--heatmap",
        "0",
    ]);

    let model: GnanModel<f64> = load_model(&model_path).unwrap();
    let csv = fs::read_to_string(out.join("heatmap_f0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("feature,distance,input,class,value"));

    let mut saw_unreachable = false;
    for row in lines {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "0");
        let dist: f64 = fields[1].parse().unwrap();
        let input: f64 = fields[2].parse().unwrap();
        let value: f64 = fields[3..].last().unwrap().parse().unwrap();

        let scaled = if dist.is_infinite() {
            saw_unreachable = true;
            0.0
        } else {
            1.0 / (1.0 + dist)
        };
        let rho = model.distance_net(0).eval_scalar(scaled).unwrap()[0];
        let f = model.feature_nets[0].eval_scalar(input).unwrap()[0];
        assert!(
            (value - rho * f).abs() <= 1e-12,
            "cell at distance {dist}, input {input}: {value} vs {}",
            rho * f
        );
    }
    assert!(saw_unreachable, "heatmap is missing the unreachable row");
}

#[test]
fn local_contributions_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let model_path = train_binary(dir.path(), &data, "4");

    let out = dir.path().join("local");
    run_ok(&[
        "explain",
        "--model",
        model_path.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--local",
        "0,1",
        "--graph",
        "2",
        "--svg",
    ]);

    let model: GnanModel<f64> = load_model(&model_path).unwrap();
    let graphs = parse_dataset(&data, DatasetFormat::EdgeJson).unwrap();
    let prof = all_pairs_distances(&graphs[2]);
    let expected = all_contributions(&model, &graphs[2], &prof).unwrap();

    let csv = fs::read_to_string(out.join("contributions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node,class,contribution"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for (row, node) in rows.iter().zip([0usize, 1]) {
        assert_eq!(row[0].parse::<usize>().unwrap(), node);
        assert_eq!(row[1], "0");
        let value: f64 = row[2].parse().unwrap();
        assert_eq!(value, expected[[node, 0]], "node {node} contribution drifted");
    }

    let svg = fs::read_to_string(out.join("local_graph.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let record = results_json(&out);
    let files: Vec<&str> =
        record["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert_eq!(files, vec!["contributions.csv", "local_graph.svg"]);
}

#[test]
fn bootstrap_without_data_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let model_path = train_binary(dir.path(), &data, "3");

    let out = run(&[
        "explain",
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        dir.path().join("bands").to_str().unwrap(),
        "--bootstrap",
        "4",
    ]);
    assert_eq!(exit_code(&out), 1);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    assert!(record["error"]["message"].as_str().unwrap().contains("--bootstrap"));
}

#[test]
fn feature_count_mismatch_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let model_path = train_binary(dir.path(), &data, "3");

    let wide = SynthConfig {
        graphs: 6,
        feature_dim: 3,
        task: Task::GraphBinary,
        seed: 13,
        rule: LabelRule {
            linear: vec![1.0, 1.0, -0.5],
            quadratic: vec![0.0, 0.0, 0.0],
            kernel_power: 1,
            thresholds: vec![0.0],
            margin: 0.25,
        },
        ..SynthConfig::default()
    };
    let wide_graphs = gnan::synth::generate(&wide).unwrap();
    let wide_path = dir.path().join("wide.json");
    write_dataset(&wide_path, DatasetFormat::EdgeJson, &wide_graphs).unwrap();

    let out = run(&[
        "predict",
        "--data",
        wide_path.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        dir.path().join("pred").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "schema");
}

#[test]
fn usage_problems_exit_one_and_help_exits_zero() {
    let missing_out = run(&["predict", "--model", "m.json", "--data", "d.json"]);
    assert_eq!(exit_code(&missing_out), 1);
    assert_eq!(error_record(&missing_out)["error"]["kind"], "config");

    let unknown_flag = run(&["train", "--bogus"]);
    assert_eq!(exit_code(&unknown_flag), 1);

    let help = run(&["--help"]);
    assert_eq!(exit_code(&help), 0);
}

#[test]
fn synth_writes_a_parsable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, "[synth]\ngraphs = 10\n").unwrap();

    let out = dir.path().join("synth");
    run_ok(&[
        "synth",
        "--config",
        cfg_path.to_str().unwrap(),
        "--task",
        "graph-binary",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
    ]);

    let graphs = parse_dataset(&out.join("dataset.json"), DatasetFormat::EdgeJson).unwrap();
    assert_eq!(graphs.len(), 10);
    assert!(graphs.iter().all(|g| matches!(g.graph_label, Some(l) if l == 0.0 || l == 1.0)));

    let record = results_json(&out);
    assert_eq!(record["graphs"], 10);
    assert_eq!(record["seed"], 4);
    assert_eq!(record["dataset_file"], "dataset.json");
    let counted: u64 =
        record["label_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(counted, 10);
}

#[test]
fn crossval_prints_and_records_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let cfg_path = dir.path().join("run.toml");
    fs::write(
        &cfg_path,
        "[train]\nepochs = 15\nhidden_layers = 1\nhidden_width = 8\n[cv]\nfolds = 2\ngrid = false\n",
    )
    .unwrap();

    let out = dir.path().join("cv");
    let output = run_ok(&[
        "crossval",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "graph-binary",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "1",
    ]);

    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("accuracy:"), "stdout: {stdout}");
    assert!(stdout.contains("over 2 fold runs"), "stdout: {stdout}");

    let record = results_json(&out);
    assert_eq!(record["candidates"], 1);
    let mean = record["outcome"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
    assert_eq!(record["outcome"]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn epoch_flag_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path());
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, "[train]\nepochs = 3\n").unwrap();

    let out = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "graph-binary",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "5",
        "--seed",
        "1",
    ]);

    let record = results_json(&out);
    assert_eq!(record["epochs_run"], 5);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 6);
}

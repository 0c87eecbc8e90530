//! The five commands. Each resolves a [`Manifest`], runs library calls, and
//! writes its artifacts under `--out`. Outputs carry no timestamps or
//! absolute paths, so identical settings produce byte-identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use gnan::artifacts::{
    curve_svg, heatmap_svg, local_graph_svg, write_contributions_csv, write_curves_csv,
    write_heatmap_csv, SvgSize,
};
use gnan::dataset::{parse_dataset, write_dataset, DatasetFormat};
use gnan::distance::all_pairs_distances;
use gnan::error::{GnanError, Result};
use gnan::explain::{
    all_contributions, bootstrap_bands, distance_curves, render_local_graph, sample_shape_curves,
    BootstrapConfig, CurveGridSpec, CurveTarget, ShapeCurve,
};
use gnan::graph::GraphInstance;
use gnan::model::{graph_logits, node_logits, GnanModel, Task, TaskKind};
use gnan::serialize::{load_model, peek_precision, save_model};
use gnan::train::{cross_validate, evaluate, fit, DataSplit, EvalSet, FitResult, TrainConfig};
use gnan::{Precision, Scalar};

use crate::config::Manifest;

/// Extra knobs only `explain` takes.
#[derive(Debug, Default, Clone)]
pub struct ExplainTargets {
    pub curves: bool,
    pub heatmap: Option<usize>,
    pub local: Option<Vec<usize>>,
    pub graph: usize,
    pub bootstrap: Option<usize>,
    pub svg: bool,
    pub class: usize,
}

fn ensure_out_dir(manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(&manifest.out).map_err(|e| GnanError::io(&manifest.out, e))
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GnanError::io(path, e))
}

/// Hash of the semantic settings (no paths), stamped into results records
/// so runs can be matched to the configuration that produced them.
fn config_sha256(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialization cannot fail");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_results_record(manifest: &Manifest, record: &impl Serialize) -> Result<()> {
    let path = manifest.out.join("results.json");
    let mut text = serde_json::to_string_pretty(record)
        .map_err(|e| GnanError::Contract(format!("results serialization failed: {e}")))?;
    text.push('\n');
    write_output(&path, &text)
}

fn load_graphs(manifest: &Manifest) -> Result<Vec<GraphInstance>> {
    parse_dataset(manifest.data_path()?, manifest.format)
}

/// Class count for multiclass heads: explicit setting, else one past the
/// largest label in the data.
fn resolve_output_dim(
    task: Task,
    classes: Option<usize>,
    graphs: &[GraphInstance],
) -> Result<usize> {
    if task.kind() != TaskKind::Multiclass {
        return Ok(1);
    }
    if let Some(classes) = classes {
        if classes < 2 {
            return Err(GnanError::Config(format!("{classes} classes; multiclass needs at least 2")));
        }
        return Ok(classes);
    }
    let mut max_label = None::<f64>;
    for g in graphs {
        let labels: Box<dyn Iterator<Item = f64>> = match (&g.node_labels, g.graph_label) {
            (Some(labels), _) if task.is_node_level() => Box::new(labels.iter().copied()),
            (_, Some(label)) if task.is_graph_level() => Box::new(std::iter::once(label)),
            _ => Box::new(std::iter::empty()),
        };
        for label in labels {
            if label.is_finite() {
                max_label = Some(max_label.map_or(label, |m: f64| m.max(label)));
            }
        }
    }
    match max_label {
        Some(m) if m >= 1.0 => Ok(m as usize + 1),
        _ => Err(GnanError::Config(
            "cannot infer the class count from labels; pass --classes".into(),
        )),
    }
}

fn split_for(graphs: &[GraphInstance], task: Task) -> Result<DataSplit> {
    if task.is_node_level() && graphs.iter().any(|g| g.masks.is_some()) {
        DataSplit::from_masks(graphs)
    } else {
        Ok(DataSplit::all_train(graphs, task))
    }
}

/// The model's own dimensionality check happens deep in the forward pass;
/// surfacing it here names both sides.
fn check_feature_dim(model_dim: usize, graphs: &[GraphInstance], data: &Path) -> Result<()> {
    if let Some(g) = graphs.first() {
        if g.feature_dim() != model_dim {
            return Err(GnanError::schema(
                data,
                format!("dataset has {} features, model expects {model_dim}", g.feature_dim()),
            ));
        }
    }
    Ok(())
}

fn svg_size(manifest: &Manifest) -> SvgSize {
    SvgSize { width: manifest.explain.svg_width, height: manifest.explain.svg_height }
}

/// Settings digest input for `train` and `crossval`.
#[derive(Serialize)]
struct TrainDigest<'a> {
    command: &'static str,
    task: Task,
    output_dim: usize,
    format: DatasetFormat,
    train: &'a TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv: Option<&'a crate::config::CvSection>,
}

#[derive(Serialize)]
struct SplitMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    val: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<serde_json::Value>,
}

/// Metrics or, when a metric is undefined on this split (single-class
/// ROC-AUC, empty slice), the reason; never a hard failure for reporting.
fn metrics_value<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    set: EvalSet,
) -> Option<serde_json::Value> {
    if set.is_empty() {
        return None;
    }
    Some(match evaluate(model, graphs, &set) {
        Ok(m) => serde_json::to_value(&m).expect("metrics serialize"),
        Err(e) => serde_json::json!({ "undefined": e.to_string() }),
    })
}

fn history_csv(result: &FitResult<impl Scalar>) -> String {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for row in &result.history {
        text.push_str(&format!("{},{}", row.epoch, row.train_loss));
        match row.val_loss {
            Some(v) => text.push_str(&format!(",{v}\n")),
            None => text.push_str(",\n"),
        }
    }
    text
}

pub fn cmd_train(manifest: &Manifest) -> Result<()> {
    match manifest.train.precision {
        Precision::F32 => train_impl::<f32>(manifest),
        Precision::F64 => train_impl::<f64>(manifest),
    }
}

fn train_impl<F: Scalar>(manifest: &Manifest) -> Result<()> {
    ensure_out_dir(manifest)?;
    let graphs = load_graphs(manifest)?;
    let task = manifest.task()?;
    let output_dim = resolve_output_dim(task, manifest.classes, &graphs)?;
    let split = split_for(&graphs, task)?;

    if manifest.verbose {
        eprintln!(
            "training {task} on {} graphs ({} epochs, seed {})",
            graphs.len(),
            manifest.train.epochs,
            manifest.train.seed
        );
    }
    let result = fit::<F>(&graphs, &split, task, output_dim, &manifest.train)?;

    let model_path = manifest
        .model
        .clone()
        .unwrap_or_else(|| manifest.out.join("model.json"));
    save_model(&model_path, &result.model)?;
    write_output(&manifest.out.join("history.csv"), &history_csv(&result))?;

    let digest = TrainDigest {
        command: "train",
        task,
        output_dim,
        format: manifest.format,
        train: &manifest.train,
        cv: None,
    };
    let metrics = SplitMetrics {
        train: metrics_value(&result.model, &graphs, split.train_set()),
        val: metrics_value(&result.model, &graphs, split.val_set()),
        test: metrics_value(&result.model, &graphs, split.test_set()),
    };
    let record = serde_json::json!({
        "command": "train",
        "config_sha256": config_sha256(&digest),
        "task": task,
        "precision": F::PRECISION,
        "seed": manifest.train.seed,
        "threads": manifest.threads,
        "epochs_run": result.history.len(),
        "best_epoch": result.best_epoch,
        "final_train_loss": result.history.last().map(|r| r.train_loss),
        "model_file": model_path.file_name().and_then(|n| n.to_str()),
        "metrics": serde_json::to_value(&metrics).expect("metrics serialize"),
    });
    write_results_record(manifest, &record)
}

pub fn cmd_predict(manifest: &Manifest) -> Result<()> {
    match peek_precision(manifest.model_path()?)? {
        Precision::F32 => predict_impl::<f32>(manifest),
        Precision::F64 => predict_impl::<f64>(manifest),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn prediction_row(kind: TaskKind, id: &str, logits: &[f64]) -> String {
    match kind {
        TaskKind::Binary => {
            let score = sigmoid(logits[0]);
            format!("{id},{score},{}\n", u8::from(logits[0] > 0.0))
        }
        TaskKind::Multiclass => {
            let probs = softmax(logits);
            let best = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
                .map(|(c, _)| c)
                .unwrap_or(0);
            let mut row = String::from(id);
            for p in &probs {
                row.push_str(&format!(",{p}"));
            }
            row.push_str(&format!(",{best}\n"));
            row
        }
        TaskKind::Regression => format!("{id},{}\n", logits[0]),
    }
}

fn predict_impl<F: Scalar>(manifest: &Manifest) -> Result<()> {
    ensure_out_dir(manifest)?;
    let model: GnanModel<F> = load_model(manifest.model_path()?)?;
    let graphs = load_graphs(manifest)?;
    check_feature_dim(model.feature_dim(), &graphs, manifest.data_path()?)?;

    let kind = model.task.kind();
    let mut csv = match kind {
        TaskKind::Binary => String::from("id,score,label\n"),
        TaskKind::Multiclass => {
            let mut header = String::from("id");
            for c in 0..model.output_dim {
                header.push_str(&format!(",score{c}"));
            }
            header.push_str(",label\n");
            header
        }
        TaskKind::Regression => String::from("id,value\n"),
    };

    for (gi, g) in graphs.iter().enumerate() {
        let prof = all_pairs_distances(g);
        let h = model.node_representations(g, &prof)?;
        if model.task.is_node_level() {
            let rows = node_logits(&h);
            for i in 0..g.node_count {
                let logits: Vec<f64> =
                    (0..model.output_dim).map(|c| rows[[i, c]].to_f64()).collect();
                csv.push_str(&prediction_row(kind, &format!("{gi}:{i}"), &logits));
            }
        } else {
            let pooled = graph_logits(&h);
            let logits: Vec<f64> = pooled.iter().map(|&v| v.to_f64()).collect();
            csv.push_str(&prediction_row(kind, &gi.to_string(), &logits));
        }
    }
    write_output(&manifest.out.join("predictions.csv"), &csv)
}

pub fn cmd_explain(manifest: &Manifest, targets: &ExplainTargets) -> Result<()> {
    match peek_precision(manifest.model_path()?)? {
        Precision::F32 => explain_impl::<f32>(manifest, targets),
        Precision::F64 => explain_impl::<f64>(manifest, targets),
    }
}

fn curve_file_stem(curve: &ShapeCurve, curves: &[ShapeCurve]) -> String {
    match curve.target {
        CurveTarget::Feature(k) => format!("curve_f{k}"),
        CurveTarget::Distance(r) => {
            let distance_count =
                curves.iter().filter(|c| matches!(c.target, CurveTarget::Distance(_))).count();
            if distance_count > 1 {
                format!("curve_distance_{r}")
            } else {
                "curve_distance".into()
            }
        }
    }
}

fn explain_impl<F: Scalar>(manifest: &Manifest, targets: &ExplainTargets) -> Result<()> {
    ensure_out_dir(manifest)?;
    let model: GnanModel<F> = load_model(manifest.model_path()?)?;
    let section = &manifest.explain;
    let spec = CurveGridSpec { points: section.points, ranges: section.ranges.clone() };
    let size = svg_size(manifest);
    let mut files: Vec<String> = Vec::new();
    let mut band_budget: Option<(usize, usize)> = None;

    if targets.class >= model.output_dim {
        return Err(GnanError::Config(format!(
            "--class {} out of range for {} output classes",
            targets.class, model.output_dim
        )));
    }

    if targets.curves || targets.bootstrap.is_some() {
        let (curves, bands) = if let Some(resamples) = targets.bootstrap {
            if manifest.data.is_none() {
                return Err(GnanError::Config(
                    "--bootstrap retrains on resamples and needs --data".into(),
                ));
            }
            let graphs = load_graphs(manifest)?;
            check_feature_dim(model.feature_dim(), &graphs, manifest.data_path()?)?;
            let mut train = manifest.train.clone();
            if let Some(epochs) = section.band_epochs {
                train.epochs = epochs;
            }
            let cfg = BootstrapConfig {
                resamples,
                lower_percentile: section.lower_percentile,
                upper_percentile: section.upper_percentile,
                seed: train.seed,
                train,
                grid: spec.clone(),
                max_distance: section.max_distance,
            };
            let result =
                bootstrap_bands::<F>(&graphs, model.task, model.output_dim, &cfg)?;
            band_budget = Some((result.resamples, result.epochs_per_resample));
            (result.curves, Some(result.bands))
        } else {
            let mut curves = sample_shape_curves(&model, &spec)?;
            curves.extend(distance_curves(&model, section.max_distance)?);
            (curves, None)
        };

        write_curves_csv(&manifest.out.join("curves.csv"), &curves, bands.as_deref())?;
        files.push("curves.csv".into());
        if targets.svg {
            for (idx, curve) in curves.iter().enumerate() {
                let band = bands.as_ref().map(|b| &b[idx]);
                let name = format!("{}.svg", curve_file_stem(curve, &curves));
                write_output(&manifest.out.join(&name), &curve_svg(curve, band, size))?;
                files.push(name);
            }
        }
    }

    if let Some(k) = targets.heatmap {
        let hm = gnan::explain::heatmap(&model, k, &spec, section.max_distance)?;
        let name = format!("heatmap_f{k}.csv");
        write_heatmap_csv(&manifest.out.join(&name), &hm)?;
        files.push(name);
        if targets.svg {
            let name = format!("heatmap_f{k}.svg");
            write_output(&manifest.out.join(&name), &heatmap_svg(&hm, targets.class, size)?)?;
            files.push(name);
        }
    }

    if let Some(ids) = &targets.local {
        let graphs = load_graphs(manifest)?;
        check_feature_dim(model.feature_dim(), &graphs, manifest.data_path()?)?;
        let g = graphs.get(targets.graph).ok_or_else(|| {
            GnanError::Config(format!(
                "--graph {} out of range for {} graphs",
                targets.graph,
                graphs.len()
            ))
        })?;
        let prof = all_pairs_distances(g);
        let contributions = all_contributions(&model, g, &prof)?;
        for &i in ids {
            if i >= g.node_count {
                return Err(GnanError::Config(format!(
                    "--local node {i} out of range for {} nodes",
                    g.node_count
                )));
            }
        }
        let mut selected = ndarray::Array2::zeros((ids.len(), model.output_dim));
        for (row, &i) in ids.iter().enumerate() {
            for c in 0..model.output_dim {
                selected[[row, c]] = contributions[[i, c]];
            }
        }
        write_contributions_csv(&manifest.out.join("contributions.csv"), ids, &selected)?;
        files.push("contributions.csv".into());
        if targets.svg {
            let per_node: Vec<f64> =
                (0..g.node_count).map(|i| contributions[[i, targets.class]]).collect();
            let layout = render_local_graph(g, &per_node, None)?;
            write_output(
                &manifest.out.join("local_graph.svg"),
                &local_graph_svg(g, &layout, size),
            )?;
            files.push("local_graph.svg".into());
        }
    }

    if files.is_empty() {
        return Err(GnanError::Config(
            "nothing to explain; pass --curves, --heatmap, --local, or --bootstrap".into(),
        ));
    }

    let record = serde_json::json!({
        "command": "explain",
        "task": model.task,
        "precision": F::PRECISION,
        "threads": manifest.threads,
        "files": files,
        "bootstrap": band_budget.map(|(resamples, epochs)| serde_json::json!({
            "resamples": resamples,
            "epochs_per_resample": epochs,
        })),
    });
    write_results_record(manifest, &record)
}

pub fn cmd_crossval(manifest: &Manifest) -> Result<()> {
    match manifest.train.precision {
        Precision::F32 => crossval_impl::<f32>(manifest),
        Precision::F64 => crossval_impl::<f64>(manifest),
    }
}

fn crossval_impl<F: Scalar>(manifest: &Manifest) -> Result<()> {
    ensure_out_dir(manifest)?;
    let graphs = load_graphs(manifest)?;
    let task = manifest.task()?;
    let output_dim = resolve_output_dim(task, manifest.classes, &graphs)?;
    let grid = if manifest.cv.grid {
        manifest.train.grid()
    } else {
        vec![manifest.train.clone()]
    };
    let cv = manifest.cv.to_cv_config();
    if manifest.verbose {
        eprintln!(
            "cross-validating {task}: {} folds x {} seeds, {} candidate configs",
            cv.folds,
            cv.seeds.len(),
            grid.len()
        );
    }
    let outcome = cross_validate::<F>(&graphs, task, output_dim, &grid, &cv)?;

    let digest = TrainDigest {
        command: "crossval",
        task,
        output_dim,
        format: manifest.format,
        train: &manifest.train,
        cv: Some(&manifest.cv),
    };
    let record = serde_json::json!({
        "command": "crossval",
        "config_sha256": config_sha256(&digest),
        "task": task,
        "precision": F::PRECISION,
        "threads": manifest.threads,
        "candidates": grid.len(),
        "outcome": serde_json::to_value(&outcome).expect("outcome serialize"),
    });
    write_results_record(manifest, &record)?;
    println!(
        "{}: {:.4} ± {:.4} over {} fold runs",
        outcome.metric_name,
        outcome.mean,
        outcome.std,
        outcome.runs.len()
    );
    Ok(())
}

pub fn cmd_synth(manifest: &Manifest) -> Result<()> {
    ensure_out_dir(manifest)?;
    let cfg = &manifest.synth;
    let graphs = gnan::synth::generate(cfg)?;

    let data_path = match manifest.format {
        DatasetFormat::EdgeJson => manifest.out.join("dataset.json"),
        DatasetFormat::FlatCsv => manifest.out.clone(),
    };
    write_dataset(&data_path, manifest.format, &graphs)?;

    let mut label_counts = std::collections::BTreeMap::<String, usize>::new();
    for g in &graphs {
        match (cfg.task.is_graph_level(), g.graph_label, &g.node_labels) {
            (true, Some(label), _) => *label_counts.entry(format!("{label}")).or_default() += 1,
            (false, _, Some(labels)) => {
                for label in labels {
                    *label_counts.entry(format!("{label}")).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    let record = serde_json::json!({
        "command": "synth",
        "config_sha256": config_sha256(&serde_json::json!({
            "command": "synth", "synth": cfg, "format": manifest.format,
        })),
        "task": cfg.task,
        "seed": cfg.seed,
        "graphs": graphs.len(),
        "label_counts": label_counts,
        "dataset_file": match manifest.format {
            DatasetFormat::EdgeJson => Some("dataset.json"),
            DatasetFormat::FlatCsv => None,
        },
    });
    write_results_record(manifest, &record)
}


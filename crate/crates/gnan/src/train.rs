//! Losses, the optimization loop, evaluation, and cross-validation.
//!
//! Training evaluates every shape network once per distinct input value per
//! graph, batches those sites across the graphs of a step into a single
//! forward/backward call per network, and contracts per graph. Node tasks
//! take one full-batch step per epoch; graph tasks shuffle the training
//! graphs each epoch and step over mini-batches.
//!
//! Everything is deterministic for a fixed seed: initialization, dropout,
//! shuffling, and fold assignment each draw from their own derived stream,
//! and all accumulation is sequential.

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::adam::AdamState;
use crate::distance::all_pairs_distances;
use crate::error::{GnanError, Result};
use crate::graph::GraphInstance;
use crate::metrics::{self, Metrics};
use crate::model::{
    contract, contract_backward, graph_logits, node_logits, FeatureMeta, GnanModel, GraphPlan,
    ModelConfig, Task, TaskKind,
};
use crate::nn::NetGrads;
use crate::rng::{stream_rng, Stream};
use crate::scalar::{Precision, Scalar};

/// Loss used to train regression models. The reported metric is MAE either
/// way, so L1 is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionLoss {
    L1,
    Mse,
}

/// Quantity early stopping watches on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStopMetric {
    Loss,
    Accuracy,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopping {
    /// Stop after this many consecutive epochs without improvement.
    pub patience: usize,
    pub metric: EarlyStopMetric,
}

/// One training recipe: architecture plus optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Graphs per step for graph-level tasks; node tasks are full-batch.
    pub batch_size: usize,
    pub regression_loss: RegressionLoss,
    /// Off unless configured; the default recipe runs all epochs.
    pub early_stopping: Option<EarlyStopping>,
    pub per_feature_distance: bool,
    pub normalize_by_count: bool,
    /// Leave the distance network(s) at their current parameters.
    pub freeze_distance_net: bool,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            dropout: 0.0,
            hidden_layers: 3,
            hidden_width: 64,
            batch_size: 32,
            regression_loss: RegressionLoss::L1,
            early_stopping: None,
            per_feature_distance: false,
            normalize_by_count: true,
            freeze_distance_net: false,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(GnanError::Config("epochs must be at least 1".into()));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(GnanError::Config("rates must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GnanError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(GnanError::Config("batch_size must be at least 1".into()));
        }
        if let Some(es) = &self.early_stopping {
            if es.patience == 0 {
                return Err(GnanError::Config("early-stopping patience must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, task: Task, output_dim: usize) -> ModelConfig {
        ModelConfig {
            task,
            output_dim,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            dropout: self.dropout,
            per_feature_distance: self.per_feature_distance,
            normalize_by_count: self.normalize_by_count,
        }
    }

    /// The full 32-point search grid: layers {3,5} × width {64,32} ×
    /// learning rate {1e-2,1e-3} × dropout {0,0.6} × weight decay
    /// {0,5e-4}, everything else inherited from `self`.
    pub fn grid(&self) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(32);
        for &hidden_layers in &[3, 5] {
            for &hidden_width in &[64, 32] {
                for &learning_rate in &[1e-2, 1e-3] {
                    for &dropout in &[0.0, 0.6] {
                        for &weight_decay in &[0.0, 5e-4] {
                            out.push(TrainConfig {
                                hidden_layers,
                                hidden_width,
                                learning_rate,
                                dropout,
                                weight_decay,
                                ..self.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Scalar loss and its gradient with respect to the pre-activation logits.
///
/// Binary tasks use cross-entropy on the sigmoid output (computed in its
/// numerically stable log-sum form), multiclass uses cross-entropy on the
/// softmax, regression uses L1 or squared error per `regression`.
pub fn loss_and_grad<F: Scalar>(
    kind: TaskKind,
    regression: RegressionLoss,
    logits: ArrayView1<F>,
    target: f64,
) -> Result<(f64, Array1<F>)> {
    for &l in logits.iter() {
        if !l.to_f64().is_finite() {
            return Err(GnanError::Numeric("non-finite prediction in loss".into()));
        }
    }
    match kind {
        TaskKind::Binary => {
            if logits.len() != 1 {
                return Err(GnanError::Contract(format!(
                    "binary loss expects one logit, got {}",
                    logits.len()
                )));
            }
            if target != 0.0 && target != 1.0 {
                return Err(GnanError::Validation(format!(
                    "binary target must be 0 or 1, got {target}"
                )));
            }
            let s = logits[0].to_f64();
            let loss = s.max(0.0) - s * target + (-s.abs()).exp().ln_1p();
            let p = 1.0 / (1.0 + (-s).exp());
            Ok((loss, Array1::from_elem(1, F::from_f64(p - target))))
        }
        TaskKind::Multiclass => {
            let c = logits.len();
            if target.fract() != 0.0 || target < 0.0 || target as usize >= c {
                return Err(GnanError::Validation(format!(
                    "class label {target} outside 0..{c}"
                )));
            }
            let y = target as usize;
            let ls: Vec<f64> = logits.iter().map(|&l| l.to_f64()).collect();
            let max = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + ls.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let loss = lse - ls[y];
            let grad = Array1::from_shape_fn(c, |i| {
                let p = (ls[i] - lse).exp();
                F::from_f64(if i == y { p - 1.0 } else { p })
            });
            Ok((loss, grad))
        }
        TaskKind::Regression => {
            if logits.len() != 1 {
                return Err(GnanError::Contract(format!(
                    "regression loss expects one output, got {}",
                    logits.len()
                )));
            }
            if !target.is_finite() {
                return Err(GnanError::Validation("non-finite regression target".into()));
            }
            let r = logits[0].to_f64() - target;
            match regression {
                RegressionLoss::L1 => Ok((r.abs(), Array1::from_elem(1, F::from_f64(r.signum_or_zero())))),
                RegressionLoss::Mse => Ok((r * r, Array1::from_elem(1, F::from_f64(2.0 * r)))),
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

/// Which samples belong to which role. Node entries are
/// `(graph index, node index)` pairs; graph entries are graph indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSplit {
    Nodes {
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    },
    Graphs {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
}

/// Borrowed view of one role of a [`DataSplit`].
#[derive(Debug, Clone, Copy)]
pub enum EvalSet<'a> {
    Nodes(&'a [(usize, usize)]),
    Graphs(&'a [usize]),
}

impl EvalSet<'_> {
    pub fn len(&self) -> usize {
        match self {
            EvalSet::Nodes(v) => v.len(),
            EvalSet::Graphs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DataSplit {
    pub fn train_set(&self) -> EvalSet<'_> {
        match self {
            DataSplit::Nodes { train, .. } => EvalSet::Nodes(train),
            DataSplit::Graphs { train, .. } => EvalSet::Graphs(train),
        }
    }

    pub fn val_set(&self) -> EvalSet<'_> {
        match self {
            DataSplit::Nodes { val, .. } => EvalSet::Nodes(val),
            DataSplit::Graphs { val, .. } => EvalSet::Graphs(val),
        }
    }

    pub fn test_set(&self) -> EvalSet<'_> {
        match self {
            DataSplit::Nodes { test, .. } => EvalSet::Nodes(test),
            DataSplit::Graphs { test, .. } => EvalSet::Graphs(test),
        }
    }

    /// Split for a node task from the masks stored on the graphs. Graphs
    /// without masks put all their labeled nodes in the training set.
    pub fn from_masks(graphs: &[GraphInstance]) -> Result<DataSplit> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for (g_idx, g) in graphs.iter().enumerate() {
            let labels = g.node_labels.as_ref().ok_or_else(|| {
                GnanError::Validation(format!("graph {g_idx} has no node labels"))
            })?;
            match &g.masks {
                Some(m) => {
                    for i in 0..g.node_count {
                        if m.train[i] {
                            train.push((g_idx, i));
                        } else if m.val[i] {
                            val.push((g_idx, i));
                        } else if m.test[i] {
                            test.push((g_idx, i));
                        }
                    }
                }
                None => {
                    train.extend((0..labels.len()).map(|i| (g_idx, i)));
                }
            }
        }
        Ok(DataSplit::Nodes { train, val, test })
    }

    /// Everything in the training role.
    pub fn all_train(graphs: &[GraphInstance], task: Task) -> DataSplit {
        if task.is_node_level() {
            let mut train = Vec::new();
            for (g_idx, g) in graphs.iter().enumerate() {
                train.extend((0..g.node_count).map(|i| (g_idx, i)));
            }
            DataSplit::Nodes { train, val: Vec::new(), test: Vec::new() }
        } else {
            DataSplit::Graphs {
                train: (0..graphs.len()).collect(),
                val: Vec::new(),
                test: Vec::new(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct FitResult<F> {
    pub model: GnanModel<F>,
    pub history: Vec<EpochStats>,
    /// Epoch of the returned snapshot when early stopping chose one.
    pub best_epoch: Option<usize>,
}

/// Trains a freshly initialized model.
pub fn fit<F: Scalar>(
    graphs: &[GraphInstance],
    split: &DataSplit,
    task: Task,
    output_dim: usize,
    cfg: &TrainConfig,
) -> Result<FitResult<F>> {
    let feature_dim = graphs
        .first()
        .map(|g| g.feature_dim())
        .ok_or_else(|| GnanError::Config("empty dataset".into()))?;
    let model = GnanModel::new(&cfg.model_config(task, output_dim), feature_dim, cfg.seed)?;
    fit_model(model, graphs, split, cfg)
}

/// Trains an existing model in place (used directly when the caller wants
/// hand-built or partially frozen networks).
pub fn fit_model<F: Scalar>(
    mut model: GnanModel<F>,
    graphs: &[GraphInstance],
    split: &DataSplit,
    cfg: &TrainConfig,
) -> Result<FitResult<F>> {
    cfg.validate()?;
    model.validate()?;
    match (model.task.is_node_level(), split) {
        (true, DataSplit::Nodes { .. }) | (false, DataSplit::Graphs { .. }) => {}
        _ => {
            return Err(GnanError::Contract(format!(
                "split granularity does not match task {}",
                model.task
            )))
        }
    }
    if split.train_set().is_empty() {
        return Err(GnanError::Config("training split is empty".into()));
    }
    if cfg.early_stopping.is_some() && split.val_set().is_empty() {
        return Err(GnanError::Config("early stopping needs a validation split".into()));
    }

    // Sites never change during training; plan each referenced graph once.
    let mut plans: Vec<Option<GraphPlan>> = vec![None; graphs.len()];
    let mut train_graph_ids: Vec<usize> = Vec::new();
    let mut train_nodes_by_graph: Vec<Vec<usize>> = vec![Vec::new(); graphs.len()];
    match split {
        DataSplit::Nodes { train, .. } => {
            for &(g, i) in train {
                if train_nodes_by_graph[g].is_empty() {
                    train_graph_ids.push(g);
                }
                train_nodes_by_graph[g].push(i);
            }
            train_graph_ids.sort_unstable();
        }
        DataSplit::Graphs { train, .. } => {
            train_graph_ids = train.clone();
        }
    }
    let mut needs_plan: Vec<usize> = train_graph_ids.clone();
    if let DataSplit::Nodes { val, .. } = split {
        needs_plan.extend(val.iter().map(|&(g, _)| g));
    }
    if let DataSplit::Graphs { val, .. } = split {
        needs_plan.extend(val.iter().copied());
    }
    for &g_idx in &needs_plan {
        if plans[g_idx].is_none() {
            let g = &graphs[g_idx];
            if g.feature_dim() != model.feature_dim() {
                return Err(GnanError::Contract(format!(
                    "graph {g_idx} has {} features, model expects {}",
                    g.feature_dim(),
                    model.feature_dim()
                )));
            }
            let prof = all_pairs_distances(g);
            plans[g_idx] = Some(GraphPlan::build(g, &prof, model.normalize_by_count));
        }
    }

    validate_targets(&model, graphs, &split.train_set())?;
    if !split.val_set().is_empty() {
        validate_targets(&model, graphs, &split.val_set())?;
    }

    let train_graphs: Vec<&GraphInstance> =
        train_graph_ids.iter().map(|&g| &graphs[g]).collect();
    model.feature_meta = Some(FeatureMeta::from_graph_refs(&train_graphs));

    let mut opt_feature: Vec<AdamState<F>> = model
        .feature_nets
        .iter()
        .map(|net| AdamState::new(net, cfg.learning_rate, cfg.weight_decay))
        .collect();
    let mut opt_distance: Option<Vec<AdamState<F>>> = if cfg.freeze_distance_net {
        None
    } else {
        Some(
            model
                .distance_nets
                .iter()
                .map(|net| AdamState::new(net, cfg.learning_rate, cfg.weight_decay))
                .collect(),
        )
    };

    let node_level = model.task.is_node_level();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GnanModel<F>)> = None;

    for epoch in 0..cfg.epochs {
        let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout, epoch as u64);
        let mut loss_sum = 0.0;
        let mut unit_count = 0usize;

        if node_level {
            let (l, u) = train_step(
                &mut model,
                graphs,
                &plans,
                &train_graph_ids,
                Some(&train_nodes_by_graph),
                cfg,
                &mut opt_feature,
                &mut opt_distance,
                &mut dropout_rng,
            )?;
            loss_sum += l;
            unit_count += u;
        } else {
            let mut order = train_graph_ids.clone();
            let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle, epoch as u64);
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(cfg.batch_size) {
                let (l, u) = train_step(
                    &mut model,
                    graphs,
                    &plans,
                    batch,
                    None,
                    cfg,
                    &mut opt_feature,
                    &mut opt_distance,
                    &mut dropout_rng,
                )?;
                loss_sum += l;
                unit_count += u;
            }
        }

        let train_loss = loss_sum / unit_count as f64;
        if !train_loss.is_finite() {
            return Err(GnanError::Numeric(format!(
                "training loss became non-finite at epoch {epoch}"
            )));
        }
        let val_loss = if split.val_set().is_empty() {
            None
        } else {
            let (logits, targets) = collect_logits(&model, graphs, &split.val_set())?;
            Some(mean_loss(&model, cfg.regression_loss, &logits, &targets)?)
        };
        history.push(EpochStats { epoch, train_loss, val_loss });

        if let Some(es) = &cfg.early_stopping {
            let value = early_stop_value(es.metric, &model, graphs, split, val_loss)?;
            let improved = match &best {
                None => true,
                Some((b, _, _)) => match es.metric {
                    EarlyStopMetric::Accuracy => value > *b,
                    EarlyStopMetric::Loss | EarlyStopMetric::Mae => value < *b,
                },
            };
            if improved {
                best = Some((value, epoch, model.clone()));
            } else if epoch - best.as_ref().unwrap().1 >= es.patience {
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    if let Some((_, _, snapshot)) = best {
        model = snapshot;
    }
    Ok(FitResult { model, history, best_epoch })
}

fn early_stop_value<F: Scalar>(
    metric: EarlyStopMetric,
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    split: &DataSplit,
    val_loss: Option<f64>,
) -> Result<f64> {
    match metric {
        EarlyStopMetric::Loss => {
            val_loss.ok_or_else(|| GnanError::Contract("validation loss missing".into()))
        }
        EarlyStopMetric::Accuracy => {
            if matches!(model.task.kind(), TaskKind::Regression) {
                return Err(GnanError::Config(
                    "accuracy early stopping on a regression task".into(),
                ));
            }
            Ok(selection_metrics(model, graphs, &split.val_set())?.0)
        }
        EarlyStopMetric::Mae => {
            if !matches!(model.task.kind(), TaskKind::Regression) {
                return Err(GnanError::Config(
                    "MAE early stopping on a classification task".into(),
                ));
            }
            Ok(-selection_metrics(model, graphs, &split.val_set())?.0)
        }
    }
}

/// One optimizer step over a batch of graphs. Returns the summed loss and
/// the number of loss terms.
#[allow(clippy::too_many_arguments)]
fn train_step<F: Scalar>(
    model: &mut GnanModel<F>,
    graphs: &[GraphInstance],
    plans: &[Option<GraphPlan>],
    batch: &[usize],
    train_nodes: Option<&[Vec<usize>]>,
    cfg: &TrainConfig,
    opt_feature: &mut [AdamState<F>],
    opt_distance: &mut Option<Vec<AdamState<F>>>,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let (loss_sum, unit_count, feat_grads, rho_grads) = batch_gradients(
        model,
        graphs,
        plans,
        batch,
        train_nodes,
        cfg.regression_loss,
        Some(dropout_rng),
    )?;
    for (k, grads) in feat_grads.iter().enumerate() {
        opt_feature[k].step(&mut model.feature_nets[k], grads)?;
    }
    if let Some(opt) = opt_distance {
        for (r, grads) in rho_grads.iter().enumerate() {
            opt[r].step(&mut model.distance_nets[r], grads)?;
        }
    }
    Ok((loss_sum, unit_count))
}

/// Loss sum, unit count, and per-network mean-loss gradients for one batch.
/// Dropout is active when `dropout_rng` is given (training mode); the pass
/// is deterministic otherwise. Weight decay never appears here: it is an
/// optimizer term, not part of the loss surface.
fn batch_gradients<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    plans: &[Option<GraphPlan>],
    batch: &[usize],
    train_nodes: Option<&[Vec<usize>]>,
    regression_loss: RegressionLoss,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, usize, Vec<NetGrads<F>>, Vec<NetGrads<F>>)> {
    let d = model.feature_dim();
    let n_dist = model.distance_nets.len();
    let kind = model.task.kind();

    // Concatenate each network's evaluation sites across the batch.
    let mut rho_cat: Vec<F> = Vec::new();
    let mut rho_offsets = Vec::with_capacity(batch.len() + 1);
    let mut feat_cat: Vec<Vec<F>> = vec![Vec::new(); d];
    let mut feat_offsets: Vec<Vec<usize>> = vec![Vec::with_capacity(batch.len() + 1); d];
    rho_offsets.push(0);
    for offsets in feat_offsets.iter_mut() {
        offsets.push(0);
    }
    for &g_idx in batch {
        let plan = plans[g_idx].as_ref().expect("plan prepared for every training graph");
        rho_cat.extend(plan.rho_inputs.iter().map(|&v| F::from_f64(v)));
        rho_offsets.push(rho_cat.len());
        for k in 0..d {
            feat_cat[k].extend(plan.feat_inputs[k].iter().map(|&v| F::from_f64(v)));
            feat_offsets[k].push(feat_cat[k].len());
        }
    }

    // Forward every network once, in ordinal order (features, then
    // distances) so dropout draws are reproducible.
    let mut feat_out = Vec::with_capacity(d);
    let mut feat_cache = Vec::with_capacity(d);
    for k in 0..d {
        let xs = Array1::from_vec(feat_cat[k].clone());
        let (out, cache) = match dropout_rng.as_deref_mut() {
            Some(rng) => model.feature_nets[k].forward_train(xs.view(), rng)?,
            None => model.feature_nets[k].forward_eval(xs.view())?,
        };
        feat_out.push(out);
        feat_cache.push(cache);
    }
    let rho_xs = Array1::from_vec(rho_cat);
    let mut rho_out = Vec::with_capacity(n_dist);
    let mut rho_cache = Vec::with_capacity(n_dist);
    for net in &model.distance_nets {
        let (out, cache) = match dropout_rng.as_deref_mut() {
            Some(rng) => net.forward_train(rho_xs.view(), rng)?,
            None => net.forward_eval(rho_xs.view())?,
        };
        rho_out.push(out);
        rho_cache.push(cache);
    }

    // Loss term count, needed before gradients to scale them by the mean.
    let unit_count = match train_nodes {
        Some(nodes) => batch.iter().map(|&g| nodes[g].len()).sum(),
        None => batch.len(),
    };
    if unit_count == 0 {
        return Err(GnanError::Contract("training step with no loss terms".into()));
    }
    let inv_units = F::from_f64(1.0 / unit_count as f64);

    let mut rho_upstream: Vec<Array2<F>> =
        rho_out.iter().map(|o| Array2::zeros(o.raw_dim())).collect();
    let mut feat_upstream: Vec<Array2<F>> =
        feat_out.iter().map(|o| Array2::zeros(o.raw_dim())).collect();

    let mut loss_sum = 0.0;
    for (b, &g_idx) in batch.iter().enumerate() {
        let g = &graphs[g_idx];
        let plan = plans[g_idx].as_ref().unwrap();
        let c = model.output_dim;

        let rho_slices: Vec<Array2<F>> = (0..n_dist)
            .map(|r| rho_out[r].slice(s![rho_offsets[b]..rho_offsets[b + 1], ..]).to_owned())
            .collect();
        let feat_slices: Vec<Array2<F>> = (0..d)
            .map(|k| {
                feat_out[k].slice(s![feat_offsets[k][b]..feat_offsets[k][b + 1], ..]).to_owned()
            })
            .collect();

        let h = contract(plan, &rho_slices, &feat_slices)?;
        let n = g.node_count;
        let mut gh = Array3::<F>::zeros((n, d, c));

        match train_nodes {
            Some(nodes) => {
                let logits = node_logits(&h);
                let labels = g.node_labels.as_ref().ok_or_else(|| {
                    GnanError::Validation(format!("graph {g_idx} has no node labels"))
                })?;
                for &i in &nodes[g_idx] {
                    let (loss, grad) =
                        loss_and_grad(kind, regression_loss, logits.row(i), labels[i])?;
                    loss_sum += loss;
                    // += so a node resampled more than once counts each time.
                    for k in 0..d {
                        for class in 0..c {
                            gh[[i, k, class]] += grad[class] * inv_units;
                        }
                    }
                }
            }
            None => {
                let logits = graph_logits(&h);
                let label = g.graph_label.ok_or_else(|| {
                    GnanError::Validation(format!("graph {g_idx} has no graph label"))
                })?;
                let (loss, grad) =
                    loss_and_grad(kind, regression_loss, logits.view(), label)?;
                loss_sum += loss;
                for i in 0..n {
                    for k in 0..d {
                        for class in 0..c {
                            gh[[i, k, class]] = grad[class] * inv_units;
                        }
                    }
                }
            }
        }

        let (rho_g, feat_g) = contract_backward(plan, &rho_slices, &feat_slices, &gh)?;
        for r in 0..n_dist {
            rho_upstream[r]
                .slice_mut(s![rho_offsets[b]..rho_offsets[b + 1], ..])
                .assign(&rho_g[r]);
        }
        for k in 0..d {
            feat_upstream[k]
                .slice_mut(s![feat_offsets[k][b]..feat_offsets[k][b + 1], ..])
                .assign(&feat_g[k]);
        }
    }

    let mut feat_grads = Vec::with_capacity(d);
    for k in 0..d {
        let (grads, _) = model.feature_nets[k].backward(&feat_cache[k], feat_upstream[k].view())?;
        feat_grads.push(grads);
    }
    let mut rho_grads = Vec::with_capacity(n_dist);
    for r in 0..n_dist {
        let (grads, _) =
            model.distance_nets[r].backward(&rho_cache[r], rho_upstream[r].view())?;
        rho_grads.push(grads);
    }

    Ok((loss_sum, unit_count, feat_grads, rho_grads))
}

/// Mean data loss over the training units of `split` and its gradient for
/// every parameter, evaluated without dropout. Gradients follow network
/// order: one [`NetGrads`] per feature net, then one per distance net.
pub fn training_gradients<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    split: &DataSplit,
    regression_loss: RegressionLoss,
) -> Result<(f64, Vec<NetGrads<F>>)> {
    model.validate()?;
    match (model.task.is_node_level(), split) {
        (true, DataSplit::Nodes { .. }) | (false, DataSplit::Graphs { .. }) => {}
        _ => {
            return Err(GnanError::Contract(format!(
                "split granularity does not match task {}",
                model.task
            )))
        }
    }

    let mut plans: Vec<Option<GraphPlan>> = vec![None; graphs.len()];
    let mut batch: Vec<usize> = Vec::new();
    let mut train_nodes_by_graph: Vec<Vec<usize>> = vec![Vec::new(); graphs.len()];
    match split {
        DataSplit::Nodes { train, .. } => {
            for &(g, i) in train {
                if train_nodes_by_graph[g].is_empty() {
                    batch.push(g);
                }
                train_nodes_by_graph[g].push(i);
            }
            batch.sort_unstable();
        }
        DataSplit::Graphs { train, .. } => {
            batch = train.clone();
        }
    }
    if batch.is_empty() {
        return Err(GnanError::Config("training split is empty".into()));
    }
    for &g_idx in &batch {
        if plans[g_idx].is_none() {
            let g = &graphs[g_idx];
            let prof = all_pairs_distances(g);
            plans[g_idx] = Some(GraphPlan::build(g, &prof, model.normalize_by_count));
        }
    }

    let train_nodes =
        if model.task.is_node_level() { Some(train_nodes_by_graph.as_slice()) } else { None };
    let (loss_sum, unit_count, mut grads, mut rho_grads) =
        batch_gradients(model, graphs, &plans, &batch, train_nodes, regression_loss, None)?;
    grads.append(&mut rho_grads);
    Ok((loss_sum / unit_count as f64, grads))
}

fn validate_targets<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    set: &EvalSet,
) -> Result<()> {
    let (_, targets) = collect_logits_lazy(model, graphs, set, false)?;
    for &t in &targets {
        match model.task.kind() {
            TaskKind::Binary => {
                if t != 0.0 && t != 1.0 {
                    return Err(GnanError::Validation(format!(
                        "binary label must be 0 or 1, got {t}"
                    )));
                }
            }
            TaskKind::Multiclass => {
                if t.fract() != 0.0 || t < 0.0 || t as usize >= model.output_dim {
                    return Err(GnanError::Validation(format!(
                        "class label {t} outside 0..{}",
                        model.output_dim
                    )));
                }
            }
            TaskKind::Regression => {
                if !t.is_finite() {
                    return Err(GnanError::Validation("non-finite regression target".into()));
                }
            }
        }
    }
    Ok(())
}

/// Logits and targets for a split, in deterministic (graph, position) order.
fn collect_logits<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    set: &EvalSet,
) -> Result<(Vec<Array1<F>>, Vec<f64>)> {
    collect_logits_lazy(model, graphs, set, true)
}

fn collect_logits_lazy<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    set: &EvalSet,
    compute: bool,
) -> Result<(Vec<Array1<F>>, Vec<f64>)> {
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    match set {
        EvalSet::Nodes(pairs) => {
            let mut by_graph: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &(g, i) in *pairs {
                by_graph.entry(g).or_default().push(i);
            }
            for (g_idx, nodes) in by_graph {
                let g = &graphs[g_idx];
                let labels = g.node_labels.as_ref().ok_or_else(|| {
                    GnanError::Validation(format!("graph {g_idx} has no node labels"))
                })?;
                let rows = if compute {
                    let prof = all_pairs_distances(g);
                    let h = model.node_representations(g, &prof)?;
                    Some(node_logits(&h))
                } else {
                    None
                };
                for i in nodes {
                    if i >= g.node_count {
                        return Err(GnanError::Validation(format!(
                            "node index {i} out of range in graph {g_idx}"
                        )));
                    }
                    if let Some(rows) = &rows {
                        logits.push(rows.row(i).to_owned());
                    }
                    targets.push(labels[i]);
                }
            }
        }
        EvalSet::Graphs(ids) => {
            for &g_idx in *ids {
                let g = &graphs[g_idx];
                let label = g.graph_label.ok_or_else(|| {
                    GnanError::Validation(format!("graph {g_idx} has no graph label"))
                })?;
                if compute {
                    let prof = all_pairs_distances(g);
                    let h = model.node_representations(g, &prof)?;
                    logits.push(graph_logits(&h));
                }
                targets.push(label);
            }
        }
    }
    Ok((logits, targets))
}

fn mean_loss<F: Scalar>(
    model: &GnanModel<F>,
    regression: RegressionLoss,
    logits: &[Array1<F>],
    targets: &[f64],
) -> Result<f64> {
    let kind = model.task.kind();
    let mut total = 0.0;
    for (l, &t) in logits.iter().zip(targets) {
        total += loss_and_grad::<F>(kind, regression, l.view(), t)?.0;
    }
    Ok(total / targets.len() as f64)
}

fn predicted_values<F: Scalar>(kind: TaskKind, logits: &[Array1<F>]) -> Vec<f64> {
    logits
        .iter()
        .map(|l| match kind {
            TaskKind::Binary => {
                if l[0].to_f64() > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TaskKind::Multiclass => {
                let mut arg = 0;
                for (i, v) in l.iter().enumerate() {
                    if *v > l[arg] {
                        arg = i;
                    }
                }
                arg as f64
            }
            TaskKind::Regression => l[0].to_f64(),
        })
        .collect()
}

/// Model-selection score (higher is better) and loss on a split. Unlike
/// [`evaluate`] this never touches ROC-AUC, so it stays defined on the
/// tiny single-class validation slices nested selection can produce.
fn selection_metrics<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    set: &EvalSet,
) -> Result<(f64, f64)> {
    let kind = model.task.kind();
    let (logits, targets) = collect_logits(model, graphs, set)?;
    let loss = mean_loss(model, RegressionLoss::L1, &logits, &targets)?;
    let predicted = predicted_values(kind, &logits);
    let score = match kind {
        TaskKind::Binary | TaskKind::Multiclass => metrics::accuracy(&predicted, &targets)?,
        TaskKind::Regression => -metrics::mae(&predicted, &targets)?,
    };
    Ok((score, loss))
}

/// Task-appropriate metrics on one split: accuracy for classification
/// (plus rank-based ROC-AUC for binary), MAE for regression. `loss` is
/// cross-entropy for classification and MAE for regression.
pub fn evaluate<F: Scalar>(
    model: &GnanModel<F>,
    graphs: &[GraphInstance],
    set: &EvalSet,
) -> Result<Metrics> {
    if set.is_empty() {
        return Err(GnanError::UndefinedMetric("evaluation over an empty split".into()));
    }
    let kind = model.task.kind();
    let (logits, targets) = collect_logits(model, graphs, set)?;
    let loss = mean_loss(model, RegressionLoss::L1, &logits, &targets)?;
    let predicted = predicted_values(kind, &logits);
    match kind {
        TaskKind::Binary => {
            let scores: Vec<f64> = logits.iter().map(|l| l[0].to_f64()).collect();
            Ok(Metrics {
                loss,
                accuracy: Some(metrics::accuracy(&predicted, &targets)?),
                roc_auc: Some(metrics::roc_auc(&scores, &targets)?),
                mae: None,
            })
        }
        TaskKind::Multiclass => Ok(Metrics {
            loss,
            accuracy: Some(metrics::accuracy(&predicted, &targets)?),
            roc_auc: None,
            mae: None,
        }),
        TaskKind::Regression => {
            let mae = metrics::mae(&predicted, &targets)?;
            Ok(Metrics { loss: mae, accuracy: None, roc_auc: None, mae: Some(mae) })
        }
    }
}

// ------------------------------------------------------------------- CV

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    /// Replicate seeds; results aggregate over folds × seeds.
    pub seeds: Vec<u64>,
    /// Fraction of each training fold carved out for model selection.
    pub val_fraction: f64,
    /// Optional reduced epoch budget for the inner grid search; the
    /// selected configuration retrains with its full budget.
    pub inner_epochs: Option<usize>,
    /// Keep class proportions equal across folds (classification only).
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            seeds: vec![0],
            val_fraction: 0.1,
            inner_epochs: None,
            stratified: true,
        }
    }
}

/// Assigns `count` units to `folds` folds. With labels, each label group
/// is shuffled and dealt round-robin so folds keep the class balance;
/// without, units are shuffled and dealt round-robin. Every unit lands in
/// exactly one fold and fold sizes differ by at most the class count.
pub fn fold_assignments(
    labels: Option<&[f64]>,
    count: usize,
    folds: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut assignment = vec![0usize; count];
    let mut cursor = 0usize;
    match labels {
        Some(labels) => {
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (idx, &l) in labels.iter().enumerate() {
                groups.entry(l.to_bits()).or_default().push(idx);
            }
            for (_, mut members) in groups {
                members.shuffle(rng);
                for idx in members {
                    assignment[idx] = cursor % folds;
                    cursor += 1;
                }
            }
        }
        None => {
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(rng);
            for idx in order {
                assignment[idx] = cursor % folds;
                cursor += 1;
            }
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub seed: u64,
    pub fold: usize,
    /// The grid point that won the inner selection, as retrained.
    pub selected: TrainConfig,
    /// Inner validation score of the winner (accuracy, or negated MAE).
    pub validation_score: f64,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// "accuracy" or "mae", whichever `mean`/`std` aggregate.
    pub metric_name: String,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<FoldRun>,
}

/// Nested cross-validation: outer K folds, inner selection over `grid` on
/// a validation slice of each training fold, winner retrained on the full
/// training fold and scored on the held-out fold. Units are labeled nodes
/// for node tasks and graphs for graph tasks; stored masks are ignored in
/// favor of the generated folds.
pub fn cross_validate<F: Scalar>(
    graphs: &[GraphInstance],
    task: Task,
    output_dim: usize,
    grid: &[TrainConfig],
    cv: &CvConfig,
) -> Result<CvOutcome> {
    if cv.folds < 2 {
        return Err(GnanError::Config("cross-validation needs at least 2 folds".into()));
    }
    if grid.is_empty() {
        return Err(GnanError::Config("empty configuration grid".into()));
    }
    if cv.seeds.is_empty() {
        return Err(GnanError::Config("no seeds configured".into()));
    }
    if !(0.0..1.0).contains(&cv.val_fraction) || cv.val_fraction == 0.0 {
        return Err(GnanError::Config(format!(
            "val_fraction {} outside (0, 1)",
            cv.val_fraction
        )));
    }

    // Units: (graph, node) pairs for node tasks, graph ids otherwise.
    let node_level = task.is_node_level();
    let mut unit_nodes: Vec<(usize, usize)> = Vec::new();
    let mut unit_graphs: Vec<usize> = Vec::new();
    let mut unit_labels: Vec<f64> = Vec::new();
    if node_level {
        for (g_idx, g) in graphs.iter().enumerate() {
            let labels = g.node_labels.as_ref().ok_or_else(|| {
                GnanError::Validation(format!("graph {g_idx} has no node labels"))
            })?;
            for (i, &l) in labels.iter().enumerate() {
                unit_nodes.push((g_idx, i));
                unit_labels.push(l);
            }
        }
    } else {
        for (g_idx, g) in graphs.iter().enumerate() {
            let label = g.graph_label.ok_or_else(|| {
                GnanError::Validation(format!("graph {g_idx} has no graph label"))
            })?;
            unit_graphs.push(g_idx);
            unit_labels.push(label);
        }
    }
    let unit_count = unit_labels.len();
    if cv.folds > unit_count {
        return Err(GnanError::Config(format!(
            "{} folds for {unit_count} samples",
            cv.folds
        )));
    }

    let classification = !matches!(task.kind(), TaskKind::Regression);
    let strat_labels =
        if cv.stratified && classification { Some(unit_labels.as_slice()) } else { None };

    let mut runs = Vec::with_capacity(cv.folds * cv.seeds.len());
    for (ordinal, &seed) in cv.seeds.iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::Folds, ordinal as u64);
        let assignment = fold_assignments(strat_labels, unit_count, cv.folds, &mut rng);

        for fold in 0..cv.folds {
            let test_units: Vec<usize> =
                (0..unit_count).filter(|&u| assignment[u] == fold).collect();
            let mut pool: Vec<usize> =
                (0..unit_count).filter(|&u| assignment[u] != fold).collect();
            pool.shuffle(&mut rng);
            let val_count = ((pool.len() as f64 * cv.val_fraction).round() as usize)
                .clamp(1, pool.len().saturating_sub(1));
            let (val_units, train_units) = pool.split_at(val_count);
            if train_units.is_empty() {
                return Err(GnanError::Config(format!(
                    "fold {fold} leaves no training samples"
                )));
            }

            let make_split = |train: &[usize], val: &[usize], test: &[usize]| -> DataSplit {
                if node_level {
                    let pick = |ids: &[usize]| ids.iter().map(|&u| unit_nodes[u]).collect();
                    DataSplit::Nodes { train: pick(train), val: pick(val), test: pick(test) }
                } else {
                    let pick = |ids: &[usize]| ids.iter().map(|&u| unit_graphs[u]).collect();
                    DataSplit::Graphs { train: pick(train), val: pick(val), test: pick(test) }
                }
            };
            let inner_split = make_split(train_units, val_units, &test_units);

            // Inner selection: higher score wins; MAE enters negated.
            let mut best: Option<(f64, f64, TrainConfig)> = None;
            for candidate in grid {
                let mut cfg = candidate.clone();
                cfg.seed = seed;
                if let Some(e) = cv.inner_epochs {
                    cfg.epochs = e;
                }
                let fitted = fit::<F>(graphs, &inner_split, task, output_dim, &cfg)?;
                let (score, val_loss) =
                    selection_metrics(&fitted.model, graphs, &inner_split.val_set())?;
                let better = match &best {
                    None => true,
                    Some((s, l, _)) => score > *s || (score == *s && val_loss < *l),
                };
                if better {
                    let mut chosen = candidate.clone();
                    chosen.seed = seed;
                    best = Some((score, val_loss, chosen));
                }
            }
            let (validation_score, _, selected) = best.expect("grid is nonempty");

            // Final model: retrain on the whole training fold. When early
            // stopping is configured it still needs the validation slice.
            let final_split = if selected.early_stopping.is_some() {
                make_split(train_units, val_units, &test_units)
            } else {
                let mut merged: Vec<usize> = train_units.to_vec();
                merged.extend_from_slice(val_units);
                merged.sort_unstable();
                make_split(&merged, &[], &test_units)
            };
            let fitted = fit::<F>(graphs, &final_split, task, output_dim, &selected)?;
            let test = evaluate(&fitted.model, graphs, &final_split.test_set())?;
            runs.push(FoldRun { seed, fold, selected, validation_score, test });
        }
    }

    let metric_name = if classification { "accuracy" } else { "mae" };
    let values: Vec<f64> = runs
        .iter()
        .map(|r| {
            if classification {
                r.test.accuracy.expect("classification metrics")
            } else {
                r.test.mae.expect("regression metrics")
            }
        })
        .collect();
    let (mean, std) = metrics::mean_std(&values)?;
    Ok(CvOutcome { metric_name: metric_name.into(), mean, std, runs })
}

//! The additive graph model.
//!
//! For node i and feature k the representation entry is
//!
//! ```text
//! [h_i]_k = Σ_j  1/#dist_i(j,i) · ρ(1/(1 + dist(j,i))) ⊙ f_k([x_j]_k)
//! ```
//!
//! where the sum runs over every node j (unreachable nodes enter with
//! scaled distance 0), #dist_i(j,i) counts the nodes at that distance
//! from i, ρ is the learned distance function, and f_k the learned shape
//! function of feature k. Multiclass models give every network C outputs
//! and combine them with an element-wise product.
//!
//! Two forward paths compute the same value:
//!
//! - [`GnanModel::node_representations_naive`]: the definition, evaluated
//!   as a literal triple loop with one network call per term. Slow,
//!   obviously correct, used as the reference in tests.
//! - [`GnanModel::node_representations`]: evaluates each network once per
//!   distinct input value, assembles the distance matrix M (weights times
//!   ρ) and the feature matrix F (shape-function outputs), and contracts
//!   M·F per class. This is the path training and inference use.

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::distance::DistanceProfile;
use crate::error::{GnanError, Result};
use crate::graph::GraphInstance;
use crate::nn::ShapeNetwork;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// What the model predicts and at which granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeBinary,
    NodeMulticlass,
    NodeRegression,
    GraphBinary,
    GraphMulticlass,
    GraphRegression,
}

/// Output head family, shared by node- and graph-level tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

impl Task {
    pub fn is_node_level(self) -> bool {
        matches!(self, Task::NodeBinary | Task::NodeMulticlass | Task::NodeRegression)
    }

    pub fn is_graph_level(self) -> bool {
        !self.is_node_level()
    }

    pub fn kind(self) -> TaskKind {
        match self {
            Task::NodeBinary | Task::GraphBinary => TaskKind::Binary,
            Task::NodeMulticlass | Task::GraphMulticlass => TaskKind::Multiclass,
            Task::NodeRegression | Task::GraphRegression => TaskKind::Regression,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Task::NodeBinary => "node-binary",
            Task::NodeMulticlass => "node-multiclass",
            Task::NodeRegression => "node-regression",
            Task::GraphBinary => "graph-binary",
            Task::GraphMulticlass => "graph-multiclass",
            Task::GraphRegression => "graph-regression",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Task {
    type Err = GnanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node-binary" => Ok(Task::NodeBinary),
            "node-multiclass" => Ok(Task::NodeMulticlass),
            "node-regression" => Ok(Task::NodeRegression),
            "graph-binary" => Ok(Task::GraphBinary),
            "graph-multiclass" => Ok(Task::GraphMulticlass),
            "graph-regression" => Ok(Task::GraphRegression),
            other => Err(GnanError::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Per-feature statistics captured from the training data, used by the
/// explanation code to pick default curve grids and detect binary features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub min: f64,
    pub max: f64,
    /// True when every training value is 0 or 1.
    pub binary: bool,
}

impl FeatureMeta {
    pub fn from_graphs(graphs: &[GraphInstance]) -> Vec<FeatureMeta> {
        let refs: Vec<&GraphInstance> = graphs.iter().collect();
        FeatureMeta::from_graph_refs(&refs)
    }

    pub fn from_graph_refs(graphs: &[&GraphInstance]) -> Vec<FeatureMeta> {
        let d = graphs.first().map(|g| g.feature_dim()).unwrap_or(0);
        let mut meta =
            vec![FeatureMeta { min: f64::INFINITY, max: f64::NEG_INFINITY, binary: true }; d];
        for g in graphs {
            for row in g.features.outer_iter() {
                for (k, &v) in row.iter().enumerate() {
                    let m = &mut meta[k];
                    m.min = m.min.min(v);
                    m.max = m.max.max(v);
                    if v != 0.0 && v != 1.0 {
                        m.binary = false;
                    }
                }
            }
        }
        meta
    }
}

/// Architecture hyperparameters for a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    /// Network output dimension C: 1 for binary and regression tasks, the
    /// class count for multiclass.
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub dropout: f64,
    /// Train a separate distance function per feature instead of one
    /// shared ρ.
    pub per_feature_distance: bool,
    /// Divide each term by the number of nodes at the same distance.
    pub normalize_by_count: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self.task.kind() {
            TaskKind::Multiclass => {
                if self.output_dim < 2 {
                    return Err(GnanError::Config(format!(
                        "multiclass task needs output_dim >= 2, got {}",
                        self.output_dim
                    )));
                }
            }
            TaskKind::Binary | TaskKind::Regression => {
                if self.output_dim != 1 {
                    return Err(GnanError::Config(format!(
                        "{} task requires output_dim 1, got {}",
                        self.task, self.output_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Trained or freshly initialized model: one shape network per feature and
/// one (or, optionally, one per feature) over scaled distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnanModel<F> {
    pub task: Task,
    pub output_dim: usize,
    pub feature_nets: Vec<ShapeNetwork<F>>,
    /// One network, or `feature_nets.len()` networks when
    /// `per_feature_distance` is set.
    pub distance_nets: Vec<ShapeNetwork<F>>,
    pub per_feature_distance: bool,
    pub normalize_by_count: bool,
    /// Present on trained models; drives default explanation grids.
    pub feature_meta: Option<Vec<FeatureMeta>>,
}

impl<F: Scalar> GnanModel<F> {
    /// Initializes all networks from the `Init` stream of `seed`. Network
    /// ordinals are the feature nets in order, then the distance net(s).
    pub fn new(cfg: &ModelConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if feature_dim == 0 {
            return Err(GnanError::Config("feature_dim must be at least 1".into()));
        }
        let make = |ordinal: usize| {
            let mut rng = stream_rng(seed, Stream::Init, ordinal as u64);
            ShapeNetwork::new(cfg.hidden_layers, cfg.hidden_width, cfg.output_dim, cfg.dropout, &mut rng)
        };
        let feature_nets: Vec<_> =
            (0..feature_dim).map(make).collect::<Result<_>>()?;
        let distance_count = if cfg.per_feature_distance { feature_dim } else { 1 };
        let distance_nets: Vec<_> =
            (feature_dim..feature_dim + distance_count).map(make).collect::<Result<_>>()?;
        Ok(GnanModel {
            task: cfg.task,
            output_dim: cfg.output_dim,
            feature_nets,
            distance_nets,
            per_feature_distance: cfg.per_feature_distance,
            normalize_by_count: cfg.normalize_by_count,
            feature_meta: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_nets.len()
    }

    /// The distance network weighting feature `k`.
    pub fn distance_net(&self, k: usize) -> &ShapeNetwork<F> {
        if self.per_feature_distance { &self.distance_nets[k] } else { &self.distance_nets[0] }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_check = ModelConfig {
            task: self.task,
            output_dim: self.output_dim,
            hidden_layers: 0,
            hidden_width: 0,
            dropout: 0.0,
            per_feature_distance: self.per_feature_distance,
            normalize_by_count: self.normalize_by_count,
        };
        cfg_check.validate()?;
        if self.feature_nets.is_empty() {
            return Err(GnanError::Validation("model has no feature networks".into()));
        }
        let expected_distance = if self.per_feature_distance { self.feature_nets.len() } else { 1 };
        if self.distance_nets.len() != expected_distance {
            return Err(GnanError::Validation(format!(
                "{} distance networks, expected {expected_distance}",
                self.distance_nets.len()
            )));
        }
        for net in self.feature_nets.iter().chain(&self.distance_nets) {
            net.validate()?;
            if net.output_dim() != self.output_dim {
                return Err(GnanError::Validation(format!(
                    "network output dimension {} does not match model output {}",
                    net.output_dim(),
                    self.output_dim
                )));
            }
        }
        if let Some(meta) = &self.feature_meta {
            if meta.len() != self.feature_nets.len() {
                return Err(GnanError::Validation(format!(
                    "{} feature metadata entries for {} features",
                    meta.len(),
                    self.feature_nets.len()
                )));
            }
        }
        Ok(())
    }

    fn check_graph(&self, g: &GraphInstance) -> Result<()> {
        if g.feature_dim() != self.feature_dim() {
            return Err(GnanError::Contract(format!(
                "graph has {} features, model expects {}",
                g.feature_dim(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// The definition, term by term: one network evaluation per summand,
    /// accumulated over j in ascending order.
    pub fn node_representations_naive(
        &self,
        g: &GraphInstance,
        prof: &DistanceProfile,
    ) -> Result<Array3<F>> {
        self.check_graph(g)?;
        let n = g.node_count;
        let d = self.feature_dim();
        let c = self.output_dim;
        let mut h = Array3::zeros((n, d, c));
        for i in 0..n {
            for j in 0..n {
                let weight = if self.normalize_by_count {
                    F::from_f64(prof.inv_count(i, j))
                } else {
                    F::one()
                };
                let scaled = F::from_f64(prof.scaled[[i, j]]);
                for k in 0..d {
                    let rho = self.distance_net(k).eval_scalar(scaled)?;
                    let f = self.feature_nets[k].eval_scalar(F::from_f64(g.features[[j, k]]))?;
                    for class in 0..c {
                        h[[i, k, class]] += weight * rho[class] * f[class];
                    }
                }
            }
        }
        ensure_finite(&h)?;
        Ok(h)
    }

    /// Evaluates every network on this graph's distinct inputs, in eval
    /// mode. Returns the distance-net and feature-net site outputs in plan
    /// order.
    pub fn eval_site_outputs(&self, plan: &GraphPlan) -> Result<(Vec<Array2<F>>, Vec<Array2<F>>)> {
        let rho_inputs: Array1<F> = plan.rho_inputs.iter().map(|&v| F::from_f64(v)).collect();
        let rho_outs = self
            .distance_nets
            .iter()
            .map(|net| Ok(net.forward_eval(rho_inputs.view())?.0))
            .collect::<Result<Vec<_>>>()?;
        let feat_outs = self
            .feature_nets
            .iter()
            .enumerate()
            .map(|(k, net)| {
                let inputs: Array1<F> = plan.feat_inputs[k].iter().map(|&v| F::from_f64(v)).collect();
                Ok(net.forward_eval(inputs.view())?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((rho_outs, feat_outs))
    }

    /// Fast path: distinct-site evaluation plus per-class matrix
    /// contraction. Agrees with the naive path to within accumulation
    /// reordering (tested at 1e-10).
    pub fn node_representations(
        &self,
        g: &GraphInstance,
        prof: &DistanceProfile,
    ) -> Result<Array3<F>> {
        self.check_graph(g)?;
        let plan = GraphPlan::build(g, prof, self.normalize_by_count);
        let (rho_outs, feat_outs) = self.eval_site_outputs(&plan)?;
        contract(&plan, &rho_outs, &feat_outs)
    }

    /// Prediction for one node: sigmoid/softmax/identity over the summed
    /// representation entries of that node.
    pub fn predict_node(
        &self,
        g: &GraphInstance,
        prof: &DistanceProfile,
        node: usize,
    ) -> Result<Array1<F>> {
        if node >= g.node_count {
            return Err(GnanError::Validation(format!(
                "node index {node} out of range for a graph with {} nodes",
                g.node_count
            )));
        }
        let h = self.node_representations(g, prof)?;
        let logits = node_logits(&h);
        Ok(apply_head(self.task.kind(), logits.row(node)))
    }

    /// Predictions for every node at once, one row per node.
    pub fn predict_nodes(&self, g: &GraphInstance, prof: &DistanceProfile) -> Result<Array2<F>> {
        let h = self.node_representations(g, prof)?;
        let logits = node_logits(&h);
        let mut out = Array2::zeros(logits.raw_dim());
        for (i, row) in logits.outer_iter().enumerate() {
            out.row_mut(i).assign(&apply_head(self.task.kind(), row));
        }
        Ok(out)
    }

    /// Graph-level prediction: sum-pool node representations, sum over
    /// features, then apply the head.
    pub fn predict_graph(&self, g: &GraphInstance, prof: &DistanceProfile) -> Result<Array1<F>> {
        let h = self.node_representations(g, prof)?;
        let logits = graph_logits(&h);
        Ok(apply_head(self.task.kind(), logits.view()))
    }
}

/// Rejects representations containing NaN or infinity.
pub fn ensure_finite<F: Scalar>(h: &Array3<F>) -> Result<()> {
    for &v in h.iter() {
        if !v.to_f64().is_finite() {
            return Err(GnanError::Numeric(
                "non-finite node representation (parameters may have diverged)".into(),
            ));
        }
    }
    Ok(())
}

/// Per-node logits: sum the representation over features, leaving `[N, C]`.
pub fn node_logits<F: Scalar>(h: &Array3<F>) -> Array2<F> {
    h.sum_axis(ndarray::Axis(1))
}

/// Graph logits: sum over nodes and features, leaving `[C]`.
pub fn graph_logits<F: Scalar>(h: &Array3<F>) -> Array1<F> {
    node_logits(h).sum_axis(ndarray::Axis(0))
}

/// Numerically stable logistic function.
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable softmax over a logit vector.
pub fn softmax<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Array1<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.sum();
    exps / total
}

/// Maps summed logits to the task's output: probability of the positive
/// class (binary), class distribution (multiclass), or the raw value
/// (regression).
pub fn apply_head<F: Scalar>(kind: TaskKind, logits: ArrayView1<F>) -> Array1<F> {
    match kind {
        TaskKind::Binary => Array1::from_elem(1, sigmoid(logits[0])),
        TaskKind::Multiclass => softmax(logits),
        TaskKind::Regression => logits.to_owned(),
    }
}

/// Distinct-input evaluation plan for one graph: the normalization weights,
/// the distinct scaled distances, and per feature the distinct values, each
/// with an index from node/pair to its site.
///
/// Building the plan is pure bookkeeping; it is reused across every epoch
/// because the sites never change during training.
#[derive(Debug, Clone)]
pub struct GraphPlan {
    pub n: usize,
    /// `weights[[i, j]]` = 1/#dist_i(j,i), or 1.0 when normalization is off.
    pub weights: Array2<f64>,
    /// Distinct scaled distances, ascending. At most diameter + 2 values.
    pub rho_inputs: Vec<f64>,
    /// `rho_site[[i, j]]` indexes into `rho_inputs`.
    pub rho_site: Array2<u32>,
    /// Distinct feature values per feature, ascending.
    pub feat_inputs: Vec<Vec<f64>>,
    /// `feat_site[k][j]` indexes into `feat_inputs[k]`.
    pub feat_site: Vec<Vec<u32>>,
}

impl GraphPlan {
    pub fn build(g: &GraphInstance, prof: &DistanceProfile, normalize_by_count: bool) -> GraphPlan {
        let n = g.node_count;
        let d = g.feature_dim();

        let mut weights = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                weights[[i, j]] = if normalize_by_count { prof.inv_count(i, j) } else { 1.0 };
            }
        }

        let mut rho_inputs: Vec<f64> = prof.scaled.iter().copied().collect();
        rho_inputs.sort_unstable_by(f64::total_cmp);
        rho_inputs.dedup();
        let mut rho_site = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let idx = rho_inputs
                    .binary_search_by(|v| v.total_cmp(&prof.scaled[[i, j]]))
                    .expect("value collected from the same matrix");
                rho_site[[i, j]] = idx as u32;
            }
        }

        let mut feat_inputs = Vec::with_capacity(d);
        let mut feat_site = Vec::with_capacity(d);
        for k in 0..d {
            let mut values: Vec<f64> = g.features.column(k).iter().copied().collect();
            values.sort_unstable_by(f64::total_cmp);
            values.dedup();
            let sites = g
                .features
                .column(k)
                .iter()
                .map(|v| {
                    values.binary_search_by(|w| w.total_cmp(v)).expect("value from same column")
                        as u32
                })
                .collect();
            feat_inputs.push(values);
            feat_site.push(sites);
        }

        GraphPlan { n, weights, rho_inputs, rho_site, feat_inputs, feat_site }
    }

    /// Total number of pending site evaluations across all networks; used
    /// for batch bookkeeping by the trainer.
    pub fn feature_dim(&self) -> usize {
        self.feat_inputs.len()
    }
}

/// Builds the per-class distance matrix `M_c[[i, j]] = w_ij · ρ_c(s_ij)`
/// from site outputs.
fn distance_matrix<F: Scalar>(plan: &GraphPlan, rho_out: &Array2<F>, class: usize) -> Array2<F> {
    let n = plan.n;
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = F::from_f64(plan.weights[[i, j]])
                * rho_out[[plan.rho_site[[i, j]] as usize, class]];
        }
    }
    m
}

/// Builds the per-class feature matrix `F_c[[j, k]] = f_k,c(x_jk)` from
/// site outputs.
fn feature_matrix<F: Scalar>(plan: &GraphPlan, feat_outs: &[Array2<F>], class: usize) -> Array2<F> {
    let n = plan.n;
    let d = feat_outs.len();
    let mut fm = Array2::zeros((n, d));
    for j in 0..n {
        for k in 0..d {
            fm[[j, k]] = feat_outs[k][[plan.feat_site[k][j] as usize, class]];
        }
    }
    fm
}

/// Contracts site outputs into node representations `[N, d, C]`.
///
/// `rho_outs` holds one matrix per distance network (length 1, or d for
/// per-feature distance models); `feat_outs` one matrix per feature.
pub fn contract<F: Scalar>(
    plan: &GraphPlan,
    rho_outs: &[Array2<F>],
    feat_outs: &[Array2<F>],
) -> Result<Array3<F>> {
    let n = plan.n;
    let d = feat_outs.len();
    if d != plan.feature_dim() {
        return Err(GnanError::Contract(format!(
            "{d} feature outputs for a plan with {} features",
            plan.feature_dim()
        )));
    }
    let per_feature = rho_outs.len() > 1;
    if per_feature && rho_outs.len() != d {
        return Err(GnanError::Contract(format!(
            "{} distance outputs for {d} features",
            rho_outs.len()
        )));
    }
    let c = rho_outs[0].ncols();
    let mut h = Array3::zeros((n, d, c));

    for class in 0..c {
        let fm = feature_matrix(plan, feat_outs, class);
        if per_feature {
            for k in 0..d {
                let rho = &rho_outs[k];
                for i in 0..n {
                    let mut acc = F::zero();
                    for j in 0..n {
                        acc += F::from_f64(plan.weights[[i, j]])
                            * rho[[plan.rho_site[[i, j]] as usize, class]]
                            * fm[[j, k]];
                    }
                    h[[i, k, class]] = acc;
                }
            }
        } else {
            let m = distance_matrix(plan, &rho_outs[0], class);
            let hc = m.dot(&fm);
            h.slice_mut(s![.., .., class]).assign(&hc);
        }
    }
    ensure_finite(&h)?;
    Ok(h)
}

/// Backpropagates a loss gradient on the representation (`gh`, shape
/// `[N, d, C]`) to gradients on the site outputs. Returns per-distance-net
/// and per-feature-net gradients with the same shapes as the forward site
/// outputs.
pub fn contract_backward<F: Scalar>(
    plan: &GraphPlan,
    rho_outs: &[Array2<F>],
    feat_outs: &[Array2<F>],
    gh: &Array3<F>,
) -> Result<(Vec<Array2<F>>, Vec<Array2<F>>)> {
    let n = plan.n;
    let d = feat_outs.len();
    let per_feature = rho_outs.len() > 1;
    let c = rho_outs[0].ncols();
    if gh.shape() != [n, d, c] {
        return Err(GnanError::Contract(format!(
            "representation gradient is {:?}, expected [{n}, {d}, {c}]",
            gh.shape()
        )));
    }

    let mut rho_grads: Vec<Array2<F>> =
        rho_outs.iter().map(|o| Array2::zeros(o.raw_dim())).collect();
    let mut feat_grads: Vec<Array2<F>> =
        feat_outs.iter().map(|o| Array2::zeros(o.raw_dim())).collect();

    for class in 0..c {
        let fm = feature_matrix(plan, feat_outs, class);
        let gc = gh.slice(s![.., .., class]).to_owned();
        if per_feature {
            for k in 0..d {
                let rho = &rho_outs[k];
                let mut df = vec![F::zero(); n];
                for i in 0..n {
                    let gik = gc[[i, k]];
                    for j in 0..n {
                        let w = F::from_f64(plan.weights[[i, j]]);
                        let site = plan.rho_site[[i, j]] as usize;
                        df[j] += w * rho[[site, class]] * gik;
                        rho_grads[k][[site, class]] += w * gik * fm[[j, k]];
                    }
                }
                for j in 0..n {
                    feat_grads[k][[plan.feat_site[k][j] as usize, class]] += df[j];
                }
            }
        } else {
            let m = distance_matrix(plan, &rho_outs[0], class);
            // dL/dF_c = M_cᵀ · G_c, scattered back to the distinct sites.
            let df = m.t().dot(&gc);
            for j in 0..n {
                for k in 0..d {
                    feat_grads[k][[plan.feat_site[k][j] as usize, class]] += df[[j, k]];
                }
            }
            // dL/dρ_c(s_ij) = w_ij · (G_c · F_cᵀ)[[i, j]].
            let p = gc.dot(&fm.t());
            for i in 0..n {
                for j in 0..n {
                    rho_grads[0][[plan.rho_site[[i, j]] as usize, class]] +=
                        F::from_f64(plan.weights[[i, j]]) * p[[i, j]];
                }
            }
        }
    }
    Ok((rho_grads, feat_grads))
}

//! Seeded synthetic datasets with an additive ground-truth rule.
//!
//! Graphs are Erdős–Rényi with uniform features. Labels come from a score
//! with the same additive structure the model learns,
//!
//! ```text
//! score(i) = Σ_j 1/#dist_i(j,i) · κ(scaled(j,i)) · Σ_k g_k(x_jk)
//! ```
//!
//! with κ(s) = s^power and g_k(x) = a_k·x + c_k·x², so a correctly
//! implemented model can represent the rule exactly. Node tasks label each
//! node by its own score; graph tasks label the graph by the summed score.
//! Classification thresholds the score; a configurable margin rejects and
//! redraws graphs whose scores fall too close to a threshold, which keeps
//! the learning problem cleanly separable.
//!
//! Everything is drawn from the per-graph `Synth` stream, so a fixed seed
//! produces a bit-identical dataset on every call.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distance::all_pairs_distances;
use crate::error::{GnanError, Result};
use crate::graph::GraphInstance;
use crate::model::{Task, TaskKind};
use crate::rng::{stream_rng, Stream};

/// Ground-truth labeling rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    /// Linear coefficient a_k of g_k, one per feature.
    pub linear: Vec<f64>,
    /// Quadratic coefficient c_k of g_k, one per feature.
    pub quadratic: Vec<f64>,
    /// κ(s) = s^kernel_power over scaled distances; 0 gives the constant
    /// kernel.
    pub kernel_power: u32,
    /// Ascending class thresholds: one for binary, C−1 for C classes.
    /// Empty for regression (the label is the raw score).
    pub thresholds: Vec<f64>,
    /// Minimum distance between any decision score and any threshold;
    /// graphs violating it are redrawn. Ignored for regression.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_probability: f64,
    pub feature_dim: usize,
    pub feature_min: f64,
    pub feature_max: f64,
    pub task: Task,
    pub seed: u64,
    pub rule: LabelRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            graphs: 200,
            min_nodes: 4,
            max_nodes: 9,
            edge_probability: 0.3,
            feature_dim: 2,
            feature_min: -1.0,
            feature_max: 1.0,
            task: Task::GraphBinary,
            seed: 0,
            rule: LabelRule {
                linear: vec![1.0, 1.0],
                quadratic: vec![0.0, 0.0],
                kernel_power: 1,
                thresholds: vec![0.0],
                margin: 0.25,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.graphs == 0 {
            return Err(GnanError::Config("graph count must be positive".into()));
        }
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(GnanError::Config(format!(
                "node range {}..={} is empty",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return Err(GnanError::Config(format!(
                "edge probability {} outside [0, 1]",
                self.edge_probability
            )));
        }
        if self.feature_dim == 0 {
            return Err(GnanError::Config("feature_dim must be at least 1".into()));
        }
        if self.feature_min >= self.feature_max {
            return Err(GnanError::Config(format!(
                "feature range [{}, {}] is empty",
                self.feature_min, self.feature_max
            )));
        }
        if self.rule.linear.len() != self.feature_dim || self.rule.quadratic.len() != self.feature_dim
        {
            return Err(GnanError::Config(format!(
                "rule coefficients cover {} features, dataset has {}",
                self.rule.linear.len().min(self.rule.quadratic.len()),
                self.feature_dim
            )));
        }
        if self.rule.margin < 0.0 {
            return Err(GnanError::Config("margin must be nonnegative".into()));
        }
        let t = &self.rule.thresholds;
        if t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GnanError::Config("thresholds must be strictly ascending".into()));
        }
        match self.task.kind() {
            TaskKind::Binary => {
                if t.len() != 1 {
                    return Err(GnanError::Config(format!(
                        "binary task needs exactly one threshold, got {}",
                        t.len()
                    )));
                }
            }
            TaskKind::Multiclass => {
                if t.is_empty() {
                    return Err(GnanError::Config(
                        "multiclass task needs at least one threshold".into(),
                    ));
                }
            }
            TaskKind::Regression => {
                if !t.is_empty() {
                    return Err(GnanError::Config("regression takes no thresholds".into()));
                }
            }
        }
        Ok(())
    }

    /// Class count implied by the thresholds (classification tasks only).
    pub fn classes(&self) -> usize {
        self.thresholds_class_count()
    }

    fn thresholds_class_count(&self) -> usize {
        self.rule.thresholds.len() + 1
    }
}

fn g_sum(rule: &LabelRule, features: &Array2<f64>, j: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..features.ncols() {
        let x = features[[j, k]];
        total += rule.linear[k] * x + rule.quadratic[k] * x * x;
    }
    total
}

fn node_scores(rule: &LabelRule, g: &GraphInstance) -> Vec<f64> {
    let prof = all_pairs_distances(g);
    let n = g.node_count;
    let mut scores = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let kappa = prof.scaled[[i, j]].powi(rule.kernel_power as i32);
            scores[i] += prof.inv_count(i, j) * kappa * g_sum(rule, &g.features, j);
        }
    }
    scores
}

fn classify(thresholds: &[f64], score: f64) -> f64 {
    thresholds.iter().filter(|&&t| score > t).count() as f64
}

fn clears_margin(thresholds: &[f64], margin: f64, score: f64) -> bool {
    thresholds.iter().all(|&t| (score - t).abs() >= margin)
}

const MAX_REDRAWS: usize = 500;

/// Generates the dataset. Deterministic for a fixed config.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<GraphInstance>> {
    cfg.validate()?;
    let mut graphs = Vec::with_capacity(cfg.graphs);
    for idx in 0..cfg.graphs {
        let mut rng = stream_rng(cfg.seed, Stream::Synth, idx as u64);
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
            let mut edges = Vec::new();
            for u in 0..n as u32 {
                for v in (u + 1)..n as u32 {
                    if rng.random::<f64>() < cfg.edge_probability {
                        edges.push((u, v));
                    }
                }
            }
            let features = Array2::from_shape_fn((n, cfg.feature_dim), |_| {
                rng.random_range(cfg.feature_min..cfg.feature_max)
            });
            let g = GraphInstance::new(n, &edges, features, None, None, None)?;
            let scores = node_scores(&cfg.rule, &g);

            let labeled = match (cfg.task.is_node_level(), cfg.task.kind()) {
                (true, TaskKind::Regression) => Some(with_node_labels(g, scores)),
                (false, TaskKind::Regression) => {
                    let total: f64 = scores.iter().sum();
                    Some(with_graph_label(g, total))
                }
                (true, _) => {
                    if scores.iter().all(|&s| clears_margin(&cfg.rule.thresholds, cfg.rule.margin, s))
                    {
                        let labels =
                            scores.iter().map(|&s| classify(&cfg.rule.thresholds, s)).collect();
                        Some(with_node_labels(g, labels))
                    } else {
                        None
                    }
                }
                (false, _) => {
                    let total: f64 = scores.iter().sum();
                    if clears_margin(&cfg.rule.thresholds, cfg.rule.margin, total) {
                        Some(with_graph_label(g, classify(&cfg.rule.thresholds, total)))
                    } else {
                        None
                    }
                }
            };
            if let Some(g) = labeled {
                accepted = Some(g);
                break;
            }
        }
        match accepted {
            Some(g) => graphs.push(g),
            None => {
                return Err(GnanError::Config(format!(
                    "graph {idx}: no sample cleared the margin after {MAX_REDRAWS} draws; \
                     loosen the margin or the thresholds"
                )))
            }
        }
    }
    Ok(graphs)
}

fn with_node_labels(mut g: GraphInstance, labels: Vec<f64>) -> GraphInstance {
    g.node_labels = Some(labels);
    g
}

fn with_graph_label(mut g: GraphInstance, label: f64) -> GraphInstance {
    g.graph_label = Some(label);
    g
}

//! Interpretability artifacts read directly off the model: shape-function
//! curves, the distance curve, distance×feature heatmaps, per-node
//! contributions and influences, bootstrap confidence bands, and layout
//! data for drawing a locally explained graph.
//!
//! Everything here is evaluation-mode only and computed from first
//! principles (direct network evaluations and the definition sums), never
//! through the trainer's batched path, so these values double as an
//! independent check of the model's own predictions.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::distance::{scale, DistanceProfile, UNREACHABLE};
use crate::error::{GnanError, Result};
use crate::graph::GraphInstance;
use crate::metrics::percentile;
use crate::model::{GnanModel, Task};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::train::{fit, DataSplit, TrainConfig};

/// What a curve plots: one feature's shape function, or a distance
/// network indexed like the model's `distance_nets`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveTarget {
    Feature(usize),
    Distance(usize),
}

/// A sampled one-dimensional function, one output column per class.
///
/// For distance curves the grid holds hop counts (with `f64::INFINITY`
/// for the unreachable bucket) while the network itself was evaluated at
/// the corresponding scaled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCurve {
    pub target: CurveTarget,
    /// Strictly ascending plot positions.
    pub grid: Vec<f64>,
    /// `[grid.len(), C]`.
    pub values: Array2<f64>,
    /// True when `f_k(0)` was subtracted out (binary features).
    pub recentered: bool,
    /// `b = Σ_k f_k(0)` per class, attached to recentered curves.
    pub bias_term: Option<Vec<f64>>,
}

/// Grid request for feature curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveGridSpec {
    pub points: usize,
    /// Per-feature `[min, max]` overrides; training ranges otherwise.
    pub ranges: Option<Vec<(f64, f64)>>,
}

impl Default for CurveGridSpec {
    fn default() -> Self {
        CurveGridSpec { points: 100, ranges: None }
    }
}

/// `cells[[l, v, c]] = ρ(1/(1+l))[c] · f_k(grid[v])[c]`: the cross
/// product of the distance curve and one feature curve. The final row is
/// the unreachable bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMatrix {
    pub feature: usize,
    /// Hop counts `0..=L` then `f64::INFINITY`.
    pub distances: Vec<f64>,
    /// Feature grid; just `[1.0]` for binary features.
    pub inputs: Vec<f64>,
    pub cells: Array3<f64>,
    pub recentered: bool,
}

/// Percentile envelope aligned with one curve's `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBands {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    /// Seeds the resampling draws; training inside each resample uses
    /// `train.seed` so curve variation comes from the data alone.
    pub seed: u64,
    /// Budget per resample. A reduced epoch count is legitimate and is
    /// recorded in the result.
    pub train: TrainConfig,
    pub grid: CurveGridSpec,
    pub max_distance: u32,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 200,
            lower_percentile: 2.5,
            upper_percentile: 97.5,
            seed: 0,
            train: TrainConfig::default(),
            grid: CurveGridSpec::default(),
            max_distance: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Point estimates from the full-data fit; bands align by index.
    pub curves: Vec<ShapeCurve>,
    pub bands: Vec<CurveBands>,
    pub resamples: usize,
    /// Training budget each resample actually ran with.
    pub epochs_per_resample: usize,
}

/// Drawing data for one locally explained graph. Radii are normalized to
/// [0, 1] with node area proportional to |contribution|.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraphLayout {
    pub positions: Vec<(f64, f64)>,
    pub radii: Vec<f64>,
    /// +1 supporting, -1 opposing, 0 neutral.
    pub signs: Vec<i8>,
    pub contributions: Vec<f64>,
}

/// Everything the explain pipeline produces for one model (and, for the
/// local pieces, one graph).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationBundle {
    pub curves: Vec<ShapeCurve>,
    pub heatmaps: Vec<HeatmapMatrix>,
    /// `[N, C]` for the explained graph.
    pub node_contributions: Array2<f64>,
    /// `[N, d, C]` for the explained graph.
    pub node_feature_influence: Array3<f64>,
    pub bands: Option<Vec<CurveBands>>,
}

fn eval_points<F: Scalar>(
    net: &crate::nn::ShapeNetwork<F>,
    inputs: &[f64],
) -> Result<Array2<f64>> {
    let c = net.output_dim();
    let mut out = Array2::zeros((inputs.len(), c));
    for (row, &x) in inputs.iter().enumerate() {
        let y = net.eval_scalar(F::from_f64(x))?;
        for class in 0..c {
            let v = y[class].to_f64();
            if !v.is_finite() {
                return Err(GnanError::Numeric(format!("non-finite curve value at input {x}")));
            }
            out[[row, class]] = v;
        }
    }
    Ok(out)
}

fn linspace(min: f64, max: f64, points: usize) -> Vec<f64> {
    if min == max || points == 1 {
        return vec![min];
    }
    (0..points).map(|t| min + (max - min) * t as f64 / (points - 1) as f64).collect()
}

/// `b = Σ_k f_k(0)` per class.
pub fn bias_term<F: Scalar>(model: &GnanModel<F>) -> Result<Vec<f64>> {
    let mut b = vec![0.0; model.output_dim];
    for net in &model.feature_nets {
        let y = net.eval_scalar(F::from_f64(0.0))?;
        for (acc, &v) in b.iter_mut().zip(y.iter()) {
            *acc += v.to_f64();
        }
    }
    Ok(b)
}

/// Samples every feature shape function on its grid, evaluation mode.
///
/// Grids default to the training range captured in the model's feature
/// metadata; binary features get the grid `{0, 1}` and are re-centered so
/// the curve is exactly 0 at input 0, with the bias `Σ_k f_k(0)` attached.
pub fn sample_shape_curves<F: Scalar>(
    model: &GnanModel<F>,
    spec: &CurveGridSpec,
) -> Result<Vec<ShapeCurve>> {
    if spec.points == 0 {
        return Err(GnanError::Config("curve grid has no points".into()));
    }
    let d = model.feature_dim();
    if let Some(ranges) = &spec.ranges {
        if ranges.len() != d {
            return Err(GnanError::Config(format!(
                "{} grid ranges for {d} features",
                ranges.len()
            )));
        }
        for &(min, max) in ranges {
            if !(min.is_finite() && max.is_finite()) || min > max {
                return Err(GnanError::Config(format!("bad grid range [{min}, {max}]")));
            }
        }
    }
    let bias = bias_term(model)?;

    let mut curves = Vec::with_capacity(d);
    for k in 0..d {
        let meta = model.feature_meta.as_ref().map(|m| &m[k]);
        let binary = meta.map(|m| m.binary).unwrap_or(false);
        let grid = if binary {
            vec![0.0, 1.0]
        } else if let Some(ranges) = &spec.ranges {
            let (min, max) = ranges[k];
            linspace(min, max, spec.points)
        } else {
            let meta = meta.ok_or_else(|| {
                GnanError::Config(format!(
                    "feature {k} has no training range; fit the model or pass explicit ranges"
                ))
            })?;
            linspace(meta.min, meta.max, spec.points)
        };
        let mut values = eval_points(&model.feature_nets[k], &grid)?;
        if binary {
            let at_zero = eval_points(&model.feature_nets[k], &[0.0])?;
            for mut row in values.rows_mut() {
                for (v, z) in row.iter_mut().zip(at_zero.row(0)) {
                    *v -= z;
                }
            }
        }
        curves.push(ShapeCurve {
            target: CurveTarget::Feature(k),
            grid,
            values,
            recentered: binary,
            bias_term: if binary { Some(bias.clone()) } else { None },
        });
    }
    Ok(curves)
}

/// Samples each distance network at the scaled inputs for hop counts
/// `0..=max_distance`, plus the unreachable bucket as a final `∞` point.
pub fn distance_curves<F: Scalar>(
    model: &GnanModel<F>,
    max_distance: u32,
) -> Result<Vec<ShapeCurve>> {
    let mut grid: Vec<f64> = (0..=max_distance).map(f64::from).collect();
    grid.push(f64::INFINITY);
    let mut inputs: Vec<f64> = (0..=max_distance).map(scale).collect();
    inputs.push(scale(UNREACHABLE));

    let mut curves = Vec::with_capacity(model.distance_nets.len());
    for (r, net) in model.distance_nets.iter().enumerate() {
        curves.push(ShapeCurve {
            target: CurveTarget::Distance(r),
            grid: grid.clone(),
            values: eval_points(net, &inputs)?,
            recentered: false,
            bias_term: None,
        });
    }
    Ok(curves)
}

/// Cross product of feature `k`'s curve and its distance curve. Binary
/// features collapse to the single re-centered column at input 1.
pub fn heatmap<F: Scalar>(
    model: &GnanModel<F>,
    k: usize,
    spec: &CurveGridSpec,
    max_distance: u32,
) -> Result<HeatmapMatrix> {
    if k >= model.feature_dim() {
        return Err(GnanError::Validation(format!(
            "feature index {k} out of range for {} features",
            model.feature_dim()
        )));
    }
    if spec.points == 0 {
        return Err(GnanError::Config("curve grid has no points".into()));
    }
    let meta = model.feature_meta.as_ref().map(|m| &m[k]);
    let binary = meta.map(|m| m.binary).unwrap_or(false);
    let inputs = if binary {
        vec![1.0]
    } else if let Some(ranges) = &spec.ranges {
        let (min, max) = ranges[k];
        linspace(min, max, spec.points)
    } else {
        let meta = meta.ok_or_else(|| {
            GnanError::Config(format!(
                "feature {k} has no training range; fit the model or pass explicit ranges"
            ))
        })?;
        linspace(meta.min, meta.max, spec.points)
    };

    let mut feat = eval_points(&model.feature_nets[k], &inputs)?;
    if binary {
        let at_zero = eval_points(&model.feature_nets[k], &[0.0])?;
        for mut row in feat.rows_mut() {
            for (v, z) in row.iter_mut().zip(at_zero.row(0)) {
                *v -= z;
            }
        }
    }

    let mut distances: Vec<f64> = (0..=max_distance).map(f64::from).collect();
    distances.push(f64::INFINITY);
    let mut scaled: Vec<f64> = (0..=max_distance).map(scale).collect();
    scaled.push(scale(UNREACHABLE));
    let rho = eval_points(model.distance_net(k), &scaled)?;

    let c = model.output_dim;
    let mut cells = Array3::zeros((distances.len(), inputs.len(), c));
    for l in 0..distances.len() {
        for v in 0..inputs.len() {
            for class in 0..c {
                cells[[l, v, class]] = rho[[l, class]] * feat[[v, class]];
            }
        }
    }
    Ok(HeatmapMatrix { feature: k, distances, inputs, cells, recentered: binary })
}

/// Total contribution of node `i` to the pre-activation prediction:
/// `Σ_j (1/#dist_i(j,i)) · ρ(scaled(j,i)) ⊙ Σ_k f_k([x_j]_k)`, one entry
/// per class. Summing over all `i` recovers the graph's pre-activation
/// score exactly.
pub fn node_contribution<F: Scalar>(
    model: &GnanModel<F>,
    g: &GraphInstance,
    prof: &DistanceProfile,
    i: usize,
) -> Result<Array1<f64>> {
    if i >= g.node_count {
        return Err(GnanError::Validation(format!(
            "node index {i} out of range for {} nodes",
            g.node_count
        )));
    }
    let d = model.feature_dim();
    let c = model.output_dim;
    let mut out = Array1::zeros(c);
    for j in 0..g.node_count {
        let w = if model.normalize_by_count { prof.inv_count(i, j) } else { 1.0 };
        let s = F::from_f64(prof.scaled[[i, j]]);
        for k in 0..d {
            let rho = model.distance_net(k).eval_scalar(s)?;
            let f = model.feature_nets[k].eval_scalar(F::from_f64(g.features[[j, k]]))?;
            for class in 0..c {
                out[class] += w * rho[class].to_f64() * f[class].to_f64();
            }
        }
    }
    Ok(out)
}

/// Influence of node `j` on feature `k` in the graph representation:
/// `f_k([x_j]_k) ⊙ Σ_i (1/#dist_i(j,i)) · ρ(scaled(j,i))`, one entry per
/// class. Summing over all `j` recovers `[h]_k` exactly.
pub fn node_feature_influence<F: Scalar>(
    model: &GnanModel<F>,
    g: &GraphInstance,
    prof: &DistanceProfile,
    j: usize,
    k: usize,
) -> Result<Array1<f64>> {
    if j >= g.node_count {
        return Err(GnanError::Validation(format!(
            "node index {j} out of range for {} nodes",
            g.node_count
        )));
    }
    if k >= model.feature_dim() {
        return Err(GnanError::Validation(format!(
            "feature index {k} out of range for {} features",
            model.feature_dim()
        )));
    }
    let c = model.output_dim;
    let f = model.feature_nets[k].eval_scalar(F::from_f64(g.features[[j, k]]))?;
    let mut weighted = vec![0.0; c];
    for i in 0..g.node_count {
        let w = if model.normalize_by_count { prof.inv_count(i, j) } else { 1.0 };
        let rho = model.distance_net(k).eval_scalar(F::from_f64(prof.scaled[[i, j]]))?;
        for class in 0..c {
            weighted[class] += w * rho[class].to_f64();
        }
    }
    Ok(Array1::from_shape_fn(c, |class| f[class].to_f64() * weighted[class]))
}

/// [`node_contribution`] for every node: `[N, C]`.
pub fn all_contributions<F: Scalar>(
    model: &GnanModel<F>,
    g: &GraphInstance,
    prof: &DistanceProfile,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((g.node_count, model.output_dim));
    for i in 0..g.node_count {
        out.row_mut(i).assign(&node_contribution(model, g, prof, i)?);
    }
    Ok(out)
}

/// [`node_feature_influence`] for every node and feature: `[N, d, C]`.
pub fn influence_matrix<F: Scalar>(
    model: &GnanModel<F>,
    g: &GraphInstance,
    prof: &DistanceProfile,
) -> Result<Array3<f64>> {
    let d = model.feature_dim();
    let mut out = Array3::zeros((g.node_count, d, model.output_dim));
    for j in 0..g.node_count {
        for k in 0..d {
            let v = node_feature_influence(model, g, prof, j, k)?;
            for (class, &x) in v.iter().enumerate() {
                out[[j, k, class]] = x;
            }
        }
    }
    Ok(out)
}

/// Retrains on bootstrap resamples of the training units and wraps every
/// curve in a percentile envelope. Deterministic for a fixed seed: only
/// the resampling draws vary between resamples, training inside each one
/// reuses `train.seed`, and all curves are evaluated on the grids of the
/// full-data reference fit.
pub fn bootstrap_bands<F: Scalar>(
    graphs: &[GraphInstance],
    task: Task,
    output_dim: usize,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if cfg.resamples < 2 {
        return Err(GnanError::Config(format!(
            "{} bootstrap resamples; need at least 2",
            cfg.resamples
        )));
    }
    if !(0.0..=100.0).contains(&cfg.lower_percentile)
        || !(0.0..=100.0).contains(&cfg.upper_percentile)
        || cfg.lower_percentile >= cfg.upper_percentile
    {
        return Err(GnanError::Config(format!(
            "percentile band [{}, {}] is not an interval in [0, 100]",
            cfg.lower_percentile, cfg.upper_percentile
        )));
    }

    let full_split = DataSplit::all_train(graphs, task);
    let reference = fit::<F>(graphs, &full_split, task, output_dim, &cfg.train)?;
    let mut curves = sample_shape_curves(&reference.model, &cfg.grid)?;
    curves.extend(distance_curves(&reference.model, cfg.max_distance)?);

    // Scaled network inputs per curve; grids stay fixed across resamples.
    let eval_inputs: Vec<Vec<f64>> = curves
        .iter()
        .map(|curve| match curve.target {
            CurveTarget::Feature(_) => curve.grid.clone(),
            CurveTarget::Distance(_) => {
                let mut inputs: Vec<f64> = (0..=cfg.max_distance).map(scale).collect();
                inputs.push(scale(UNREACHABLE));
                inputs
            }
        })
        .collect();

    let unit_count = match &full_split {
        DataSplit::Nodes { train, .. } => train.len(),
        DataSplit::Graphs { train, .. } => train.len(),
    };
    if unit_count == 0 {
        return Err(GnanError::Config("nothing to resample".into()));
    }

    let mut samples: Vec<Array3<f64>> = curves
        .iter()
        .map(|c| Array3::zeros((cfg.resamples, c.grid.len(), c.values.ncols())))
        .collect();

    for r in 0..cfg.resamples {
        let mut rng = stream_rng(cfg.seed, Stream::Bootstrap, r as u64);
        let draw: Vec<usize> =
            (0..unit_count).map(|_| rng.random_range(0..unit_count)).collect();
        let split = match &full_split {
            DataSplit::Nodes { train, .. } => DataSplit::Nodes {
                train: draw.iter().map(|&u| train[u]).collect(),
                val: Vec::new(),
                test: Vec::new(),
            },
            DataSplit::Graphs { train, .. } => DataSplit::Graphs {
                train: draw.iter().map(|&u| train[u]).collect(),
                val: Vec::new(),
                test: Vec::new(),
            },
        };
        let fitted = fit::<F>(graphs, &split, task, output_dim, &cfg.train)?;

        for (curve_idx, curve) in curves.iter().enumerate() {
            let values = match curve.target {
                CurveTarget::Feature(k) => {
                    let mut v =
                        eval_points(&fitted.model.feature_nets[k], &eval_inputs[curve_idx])?;
                    if curve.recentered {
                        let at_zero = eval_points(&fitted.model.feature_nets[k], &[0.0])?;
                        for mut row in v.rows_mut() {
                            for (x, z) in row.iter_mut().zip(at_zero.row(0)) {
                                *x -= z;
                            }
                        }
                    }
                    v
                }
                CurveTarget::Distance(net) => {
                    eval_points(&fitted.model.distance_nets[net], &eval_inputs[curve_idx])?
                }
            };
            samples[curve_idx].index_axis_mut(ndarray::Axis(0), r).assign(&values);
        }
    }

    let mut bands = Vec::with_capacity(curves.len());
    for (curve_idx, curve) in curves.iter().enumerate() {
        let (points, classes) = (curve.grid.len(), curve.values.ncols());
        let mut lower = Array2::zeros((points, classes));
        let mut upper = Array2::zeros((points, classes));
        for p in 0..points {
            for class in 0..classes {
                let mut column: Vec<f64> = (0..cfg.resamples)
                    .map(|r| samples[curve_idx][[r, p, class]])
                    .collect();
                column.sort_unstable_by(f64::total_cmp);
                lower[[p, class]] = percentile(&column, cfg.lower_percentile)?;
                upper[[p, class]] = percentile(&column, cfg.upper_percentile)?;
            }
        }
        bands.push(CurveBands { lower, upper });
    }

    Ok(BootstrapResult {
        curves,
        bands,
        resamples: cfg.resamples,
        epochs_per_resample: cfg.train.epochs,
    })
}

/// Positions, radii, and sign colors for drawing one explained graph.
///
/// Node area is proportional to |contribution| (so radius goes with its
/// square root), normalized to a maximum radius of 1. Positions come from
/// the caller when available (e.g. molecule coordinates); otherwise a
/// deterministic force-directed layout runs from a circular start.
pub fn render_local_graph(
    g: &GraphInstance,
    contributions: &[f64],
    positions: Option<&[(f64, f64)]>,
) -> Result<LocalGraphLayout> {
    let n = g.node_count;
    if contributions.len() != n {
        return Err(GnanError::Contract(format!(
            "{} contributions for {n} nodes",
            contributions.len()
        )));
    }
    if let Some(p) = positions {
        if p.len() != n {
            return Err(GnanError::Contract(format!("{} positions for {n} nodes", p.len())));
        }
    }

    let positions = match positions {
        Some(p) => p.to_vec(),
        None => force_layout(g),
    };

    let max_abs = contributions.iter().fold(0.0_f64, |m, &c| m.max(c.abs()));
    let radii: Vec<f64> = contributions
        .iter()
        .map(|&c| if max_abs == 0.0 { 1.0 } else { (c.abs() / max_abs).sqrt() })
        .collect();
    let signs: Vec<i8> = contributions
        .iter()
        .map(|&c| {
            if c > 0.0 {
                1
            } else if c < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();

    Ok(LocalGraphLayout { positions, radii, signs, contributions: contributions.to_vec() })
}

/// Fruchterman–Reingold with a circular start; no randomness, so layouts
/// are reproducible byte for byte.
fn force_layout(g: &GraphInstance) -> Vec<(f64, f64)> {
    let n = g.node_count;
    if n == 1 {
        return vec![(0.0, 0.0)];
    }
    let tau = std::f64::consts::TAU;
    let mut pos: Vec<(f64, f64)> =
        (0..n).map(|i| (i as f64 * tau / n as f64).sin_cos()).collect();
    let k = 1.0 / (n as f64).sqrt();
    let iterations = 150;
    for step in 0..iterations {
        let temp = 0.1 * (1.0 - step as f64 / iterations as f64);
        let mut disp = vec![(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = pos[i].0 - pos[j].0;
                let dy = pos[i].1 - pos[j].1;
                let dist = (dx * dx + dy * dy).sqrt().max(1e-9);
                let repel = k * k / dist;
                disp[i].0 += dx / dist * repel;
                disp[i].1 += dy / dist * repel;
            }
        }
        for &(u, v) in &g.edges {
            let (u, v) = (u as usize, v as usize);
            let dx = pos[u].0 - pos[v].0;
            let dy = pos[u].1 - pos[v].1;
            let dist = (dx * dx + dy * dy).sqrt().max(1e-9);
            let attract = dist * dist / k;
            disp[u].0 -= dx / dist * attract;
            disp[u].1 -= dy / dist * attract;
            disp[v].0 += dx / dist * attract;
            disp[v].1 += dy / dist * attract;
        }
        for i in 0..n {
            let (dx, dy) = disp[i];
            let len = (dx * dx + dy * dy).sqrt().max(1e-9);
            let cap = len.min(temp);
            pos[i].0 += dx / len * cap;
            pos[i].1 += dy / len * cap;
        }
    }
    pos
}

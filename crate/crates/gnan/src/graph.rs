//! Graph data model.
//!
//! Graphs are small, undirected, and feature-annotated. Edges are stored in
//! canonical form: endpoints ordered `u < v`, duplicates merged, self-loops
//! dropped (a node is always at distance zero from itself, so a loop edge
//! carries no information the model could use).

use ndarray::Array2;

use crate::error::{GnanError, Result};

/// Train/validation/test node masks for node-level tasks.
///
/// A node may belong to at most one of the three sets; nodes in none of
/// them are unlabeled and ignored by both training and evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        for (name, mask) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if mask.len() != node_count {
                return Err(GnanError::Validation(format!(
                    "{name} mask has {} entries for a graph with {node_count} nodes",
                    mask.len()
                )));
            }
        }
        for i in 0..node_count {
            let memberships = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if memberships > 1 {
                return Err(GnanError::Validation(format!(
                    "node {i} appears in more than one split mask"
                )));
            }
        }
        Ok(())
    }
}

/// One graph: undirected edges over `node_count` nodes, a row of features
/// per node, and whichever labels the task provides.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    pub node_count: usize,
    /// Canonical edge list: `u < v`, sorted, deduplicated, no self-loops.
    pub edges: Vec<(u32, u32)>,
    /// Node features, shape `[node_count, feature_dim]`.
    pub features: Array2<f64>,
    /// Per-node labels (class index or regression target) for node tasks.
    pub node_labels: Option<Vec<f64>>,
    /// Single label for graph tasks.
    pub graph_label: Option<f64>,
    pub masks: Option<SplitMasks>,
}

/// Normalizes a raw edge list: symmetrizes direction, orders endpoints,
/// drops self-loops, sorts, and deduplicates. Rejects out-of-range ids.
pub fn canonical_edges(node_count: usize, raw: &[(u32, u32)]) -> Result<Vec<(u32, u32)>> {
    let mut edges = Vec::with_capacity(raw.len());
    for &(u, v) in raw {
        if (u as usize) >= node_count || (v as usize) >= node_count {
            return Err(GnanError::Validation(format!(
                "edge ({u}, {v}) references a node outside 0..{node_count}"
            )));
        }
        if u == v {
            continue;
        }
        edges.push(if u < v { (u, v) } else { (v, u) });
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

impl GraphInstance {
    /// Builds a validated instance from raw parts. Edges may arrive in any
    /// order and direction; they are canonicalized here.
    pub fn new(
        node_count: usize,
        raw_edges: &[(u32, u32)],
        features: Array2<f64>,
        node_labels: Option<Vec<f64>>,
        graph_label: Option<f64>,
        masks: Option<SplitMasks>,
    ) -> Result<Self> {
        let edges = canonical_edges(node_count, raw_edges)?;
        let g = GraphInstance { node_count, edges, features, node_labels, graph_label, masks };
        g.validate()?;
        Ok(g)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(GnanError::Validation("graph has zero nodes".into()));
        }
        if self.features.nrows() != self.node_count {
            return Err(GnanError::Validation(format!(
                "feature matrix has {} rows for a graph with {} nodes",
                self.features.nrows(),
                self.node_count
            )));
        }
        for &(u, v) in &self.edges {
            if (v as usize) >= self.node_count {
                return Err(GnanError::Validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{}",
                    self.node_count
                )));
            }
            if u >= v {
                return Err(GnanError::Validation(format!(
                    "edge ({u}, {v}) is not in canonical u < v order"
                )));
            }
        }
        if let Some(labels) = &self.node_labels {
            if labels.len() != self.node_count {
                return Err(GnanError::Validation(format!(
                    "{} node labels for a graph with {} nodes",
                    labels.len(),
                    self.node_count
                )));
            }
        }
        for value in self.features.iter() {
            if !value.is_finite() {
                return Err(GnanError::Validation("non-finite feature value".into()));
            }
        }
        if let Some(masks) = &self.masks {
            masks.validate(self.node_count)?;
        }
        Ok(())
    }

    /// Adjacency lists in node order; each list is sorted.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Relabels nodes so old node `i` becomes `perm[i]`. Used by the
    /// permutation-invariance tests; the model must not care about node
    /// order.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(GnanError::Validation(format!(
                "permutation has {} entries for a graph with {} nodes",
                perm.len(),
                self.node_count
            )));
        }
        let mut seen = vec![false; self.node_count];
        for &p in perm {
            if p >= self.node_count || seen[p] {
                return Err(GnanError::Validation("not a permutation".into()));
            }
            seen[p] = true;
        }

        let raw: Vec<(u32, u32)> =
            self.edges.iter().map(|&(u, v)| (perm[u as usize] as u32, perm[v as usize] as u32)).collect();
        let mut features = Array2::zeros((self.node_count, self.feature_dim()));
        for i in 0..self.node_count {
            features.row_mut(perm[i]).assign(&self.features.row(i));
        }
        let permute_vec = |xs: &Vec<f64>| {
            let mut out = vec![0.0; xs.len()];
            for (i, &x) in xs.iter().enumerate() {
                out[perm[i]] = x;
            }
            out
        };
        let permute_mask = |xs: &Vec<bool>| {
            let mut out = vec![false; xs.len()];
            for (i, &x) in xs.iter().enumerate() {
                out[perm[i]] = x;
            }
            out
        };
        GraphInstance::new(
            self.node_count,
            &raw,
            features,
            self.node_labels.as_ref().map(permute_vec),
            self.graph_label,
            self.masks.as_ref().map(|m| SplitMasks {
                train: permute_mask(&m.train),
                val: permute_mask(&m.val),
                test: permute_mask(&m.test),
            }),
        )
    }
}

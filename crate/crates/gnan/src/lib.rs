//! Graph neural additive networks (GNAN).
//!
//! A GNAN predicts over graphs with nothing but univariate functions: one
//! shape network per node feature and one over scaled hop distances. A node's
//! representation is the distance-weighted sum of the transformed features of
//! every node in the graph, so the trained model can be read off directly
//! from its shape functions — no post-hoc explainer required.
//!
//! The crate covers the full pipeline:
//!
//! - [`graph`] / [`distance`]: graph data model and all-pairs hop distances
//!   with per-distance counts.
//! - [`dataset`] / [`synth`]: dataset parsing (edge-json, flat-csv) and a
//!   seeded synthetic generator with additive ground-truth rules.
//! - [`nn`] / [`adam`]: dense shape networks with exact backpropagation and
//!   Adam.
//! - [`model`]: the additive forward pass, both as the literal triple-loop
//!   definition and as the tensor-product fast path.
//! - [`train`]: losses, the fitting loop, metrics, nested cross-validation.
//! - [`explain`] / [`artifacts`]: shape curves, distance-by-feature heatmaps,
//!   per-node contributions and influences, bootstrap confidence bands, and
//!   CSV/SVG emission.

pub mod adam;
pub mod artifacts;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod explain;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod serialize;
pub mod synth;
pub mod train;

pub use error::{GnanError, Result};
pub use scalar::{Precision, Scalar};

//! Univariate shape networks: dense ReLU MLPs from a scalar input to a
//! C-dimensional output, with exact backpropagation.
//!
//! Forward and backward run on batches of scalar inputs ("sites"), one row
//! per site. Training evaluates each shape function at many sites per step,
//! so batching is what keeps the whole model inside a handful of matrix
//! multiplies.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnanError, Result};
use crate::scalar::Scalar;

/// One affine layer. Weights are `[fan_in, fan_out]` so a batch of row
/// vectors maps through plain `x.dot(w) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

/// A univariate MLP: scalar input, `hidden_layers` ReLU layers of equal
/// width, linear output of dimension C. Dropout (inverted scaling) sits
/// after every hidden activation and nowhere else, so evaluation needs no
/// rescaling and the learned shape function is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeNetwork<F> {
    pub layers: Vec<Dense<F>>,
    pub dropout_rate: f64,
}

/// Activations saved by a forward pass, consumed by [`ShapeNetwork::backward`].
pub struct ForwardCache<F> {
    /// Input sites as a column matrix `[n, 1]`.
    inputs: Array2<F>,
    /// Post-activation (and post-dropout) output of each hidden layer.
    hidden: Vec<Array2<F>>,
    /// d(activation)/d(pre-activation) per hidden layer: the ReLU mask
    /// multiplied by the dropout keep/scale factor.
    factors: Vec<Array2<F>>,
}

/// Parameter gradients with the same shapes as the network's layers.
#[derive(Debug, Clone)]
pub struct NetGrads<F> {
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: Scalar> NetGrads<F> {
    pub fn zeros_like(net: &ShapeNetwork<F>) -> Self {
        NetGrads {
            weights: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads<F>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl<F: Scalar> ShapeNetwork<F> {
    /// Fresh network with Kaiming-uniform fan-in weights (`|w| ≤ √(6/fan_in)`,
    /// the standard scaling for ReLU) and zero biases. Weight entries are
    /// drawn row-major, layer by layer, so a fixed rng gives a fixed network.
    pub fn new(
        hidden_layers: usize,
        hidden_width: usize,
        output_dim: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if output_dim == 0 {
            return Err(GnanError::Config("output_dim must be at least 1".into()));
        }
        if hidden_layers > 0 && hidden_width == 0 {
            return Err(GnanError::Config("hidden_width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(GnanError::Config(format!(
                "dropout_rate {dropout_rate} outside [0, 1)"
            )));
        }

        let mut dims = Vec::with_capacity(hidden_layers + 2);
        dims.push(1);
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(output_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                F::from_f64(rng.random_range(-bound..bound))
            });
            layers.push(Dense { w, b: Array1::zeros(fan_out) });
        }
        Ok(ShapeNetwork { layers, dropout_rate })
    }

    /// Wraps hand-built layers; validates that the dims chain from a scalar
    /// input.
    pub fn from_layers(layers: Vec<Dense<F>>, dropout_rate: f64) -> Result<Self> {
        let net = ShapeNetwork { layers, dropout_rate };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(GnanError::Validation("network has no layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(GnanError::Validation(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let mut expected_in = 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.w.nrows() != expected_in {
                return Err(GnanError::Validation(format!(
                    "layer {idx} expects fan-in {}, got {expected_in}",
                    layer.w.nrows()
                )));
            }
            if layer.b.len() != layer.w.ncols() {
                return Err(GnanError::Validation(format!(
                    "layer {idx} bias length {} does not match fan-out {}",
                    layer.b.len(),
                    layer.w.ncols()
                )));
            }
            expected_in = layer.w.ncols();
        }
        for value in self.iter_params() {
            if !value.to_f64().is_finite() {
                return Err(GnanError::Validation("non-finite parameter".into()));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn iter_params(&self) -> impl Iterator<Item = F> + '_ {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter())).copied()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Deterministic forward pass: no dropout.
    pub fn forward_eval(&self, xs: ArrayView1<F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        self.forward(xs, None)
    }

    /// Training forward pass: dropout masks are drawn from `rng` when the
    /// rate is positive (one draw per hidden unit per site, row-major).
    pub fn forward_train(
        &self,
        xs: ArrayView1<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        self.forward(xs, Some(rng))
    }

    fn forward(
        &self,
        xs: ArrayView1<F>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        for &x in xs.iter() {
            if !x.to_f64().is_finite() {
                return Err(GnanError::Numeric(format!(
                    "non-finite shape-network input {}",
                    x.to_f64()
                )));
            }
        }
        let n = xs.len();
        let inputs = xs.to_owned().insert_axis(Axis(1));

        let hidden_count = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(hidden_count);
        let mut factors = Vec::with_capacity(hidden_count);

        let mut activation = inputs.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = activation.dot(&layer.w) + &layer.b;
            if idx == self.layers.len() - 1 {
                activation = z;
                break;
            }
            let mut factor = z.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
            // Inverted dropout: active only during training, identity at
            // evaluation time.
            if self.dropout_rate > 0.0 {
                if let Some(rng) = rng.as_deref_mut() {
                    let scale = F::from_f64(1.0 / (1.0 - self.dropout_rate));
                    for v in factor.iter_mut() {
                        if rng.random::<f64>() < self.dropout_rate {
                            *v = F::zero();
                        } else {
                            *v *= scale;
                        }
                    }
                }
            }
            activation = z * &factor;
            hidden.push(activation.clone());
            factors.push(factor);
        }

        debug_assert_eq!(activation.nrows(), n);
        Ok((activation, ForwardCache { inputs, hidden, factors }))
    }

    /// Exact gradients of the cached forward pass, contracted against
    /// `upstream` (shape `[n, C]`). Returns parameter gradients plus the
    /// gradient with respect to each input site.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        upstream: ArrayView2<F>,
    ) -> Result<(NetGrads<F>, Array1<F>)> {
        let n = cache.inputs.nrows();
        if upstream.nrows() != n || upstream.ncols() != self.output_dim() {
            return Err(GnanError::Contract(format!(
                "upstream gradient is {:?}, expected [{n}, {}]",
                upstream.shape(),
                self.output_dim()
            )));
        }
        if cache.hidden.len() != self.layers.len() - 1 {
            return Err(GnanError::Contract(
                "forward cache does not match network depth".into(),
            ));
        }

        let mut grads = NetGrads::zeros_like(self);
        let mut g_z = upstream.to_owned();
        for idx in (0..self.layers.len()).rev() {
            let a_prev = if idx == 0 { &cache.inputs } else { &cache.hidden[idx - 1] };
            grads.weights[idx] = a_prev.t().dot(&g_z);
            grads.biases[idx] = g_z.sum_axis(Axis(0));
            let g_a_prev = g_z.dot(&self.layers[idx].w.t());
            if idx == 0 {
                return Ok((grads, g_a_prev.index_axis(Axis(1), 0).to_owned()));
            }
            g_z = g_a_prev * &cache.factors[idx - 1];
        }
        unreachable!("loop returns at idx == 0");
    }

    /// Single-input convenience used by tests and curve sampling.
    pub fn eval_scalar(&self, x: F) -> Result<Array1<F>> {
        let xs = Array1::from_elem(1, x);
        let (out, _) = self.forward_eval(xs.view())?;
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }
}

//! Adam optimizer with classic L2 weight decay.
//!
//! Decay is added to the gradient before the moment updates (the original
//! Adam-with-L2 formulation, not decoupled decay), because the training
//! recipe this crate reproduces treats weight decay as a plain
//! regularization hyperparameter of standard Adam.

use ndarray::{Array1, Array2, Zip};

use crate::error::{GnanError, Result};
use crate::nn::{NetGrads, ShapeNetwork};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for one [`ShapeNetwork`], shape-aligned with its layers.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    learning_rate: f64,
    weight_decay: f64,
    step: u64,
    m_w: Vec<Array2<F>>,
    v_w: Vec<Array2<F>>,
    m_b: Vec<Array1<F>>,
    v_b: Vec<Array1<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(net: &ShapeNetwork<F>, learning_rate: f64, weight_decay: f64) -> Self {
        AdamState {
            learning_rate,
            weight_decay,
            step: 0,
            m_w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, net: &mut ShapeNetwork<F>, grads: &NetGrads<F>) -> Result<()> {
        if grads.weights.len() != net.layers.len() || self.m_w.len() != net.layers.len() {
            return Err(GnanError::Contract("optimizer/gradient/network layer counts differ".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::from_f64(1.0 - BETA1.powi(t));
        let bc2 = F::from_f64(1.0 - BETA2.powi(t));
        let beta1 = F::from_f64(BETA1);
        let beta2 = F::from_f64(BETA2);
        let one = F::one();
        let lr = F::from_f64(self.learning_rate);
        let wd = F::from_f64(self.weight_decay);
        let eps = F::from_f64(EPSILON);

        for (idx, layer) in net.layers.iter_mut().enumerate() {
            if grads.weights[idx].raw_dim() != layer.w.raw_dim()
                || grads.biases[idx].raw_dim() != layer.b.raw_dim()
            {
                return Err(GnanError::Contract(format!(
                    "gradient shape mismatch at layer {idx}"
                )));
            }
            Zip::from(&mut layer.w)
                .and(&mut self.m_w[idx])
                .and(&mut self.v_w[idx])
                .and(&grads.weights[idx])
                .for_each(|p, m, v, &g| {
                    let g = g + wd * *p;
                    *m = beta1 * *m + (one - beta1) * g;
                    *v = beta2 * *v + (one - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            Zip::from(&mut layer.b)
                .and(&mut self.m_b[idx])
                .and(&mut self.v_b[idx])
                .and(&grads.biases[idx])
                .for_each(|p, m, v, &g| {
                    let g = g + wd * *p;
                    *m = beta1 * *m + (one - beta1) * g;
                    *v = beta2 * *v + (one - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn scalar_net(w: f64) -> ShapeNetwork<f64> {
        ShapeNetwork::from_layers(vec![Dense { w: array![[w]], b: array![0.0] }], 0.0).unwrap()
    }

    fn scalar_grads(net: &ShapeNetwork<f64>, gw: f64) -> NetGrads<f64> {
        let mut grads = NetGrads::zeros_like(net);
        grads.weights[0][[0, 0]] = gw;
        grads
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut net = scalar_net(1.25);
        let grads = NetGrads::zeros_like(&net);
        let mut adam = AdamState::new(&net, 0.1, 0.0);
        for _ in 0..5 {
            adam.step(&mut net, &grads).unwrap();
        }
        assert_eq!(net.layers[0].w[[0, 0]], 1.25);
        assert_eq!(net.layers[0].b[0], 0.0);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_normalized_gradient() {
        // Bias correction cancels on step one, so the update is
        // lr * g / (|g| + eps), a signed step of magnitude ~lr.
        for g in [0.7, -2.0] {
            let mut net = scalar_net(0.5);
            let mut adam = AdamState::new(&net, 0.01, 0.0);
            let grads = scalar_grads(&net, g);
            adam.step(&mut net, &grads).unwrap();
            let expected = 0.5 - 0.01 * g / (g.abs() + EPSILON);
            assert_abs_diff_eq!(net.layers[0].w[[0, 0]], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_bowl_converges_monotonically() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net, 0.1, 0.0);
        let mut prev_gap = 3.0;
        for _ in 0..10 {
            let w = net.layers[0].w[[0, 0]];
            let grads = scalar_grads(&net, 2.0 * (w - 3.0));
            adam.step(&mut net, &grads).unwrap();
            let gap = (net.layers[0].w[[0, 0]] - 3.0).abs();
            assert!(gap < prev_gap, "step away from the minimum: {gap} >= {prev_gap}");
            prev_gap = gap;
        }
        assert!(prev_gap < 3.0);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_a_loss_gradient() {
        let mut net = scalar_net(2.0);
        let grads = NetGrads::zeros_like(&net);
        let mut adam = AdamState::new(&net, 0.01, 5e-4);
        for _ in 0..20 {
            adam.step(&mut net, &grads).unwrap();
        }
        let w = net.layers[0].w[[0, 0]];
        assert!(w < 2.0 && w > 0.0, "decayed weight {w}");
        // Zero parameters stay zero: decay gradient is proportional to the
        // parameter itself.
        assert_eq!(net.layers[0].b[0], 0.0);
    }

    #[test]
    fn mismatched_shapes_are_contract_errors() {
        let mut net = scalar_net(1.0);
        let other = ShapeNetwork::from_layers(
            vec![Dense { w: array![[1.0, 1.0]], b: array![0.0, 0.0] }],
            0.0,
        )
        .unwrap();
        let grads = NetGrads::zeros_like(&other);
        let mut adam = AdamState::new(&net, 0.1, 0.0);
        assert!(adam.step(&mut net, &grads).is_err());
    }
}

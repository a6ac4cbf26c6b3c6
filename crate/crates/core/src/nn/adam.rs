use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { config, step: 0, first: zeros.clone(), second: zeros }
    }

    /// Applies one Adam update in place.
    pub fn step(&mut self, net: &mut Network<T>, grads: &[Tensor<T>]) -> Result<()> {
        let mut params = net.params_mut();
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Usage(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::Usage(format!("gradient {i} has shape {:?}", g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::Divergence(format!("non-finite gradient in parameter tensor {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.learning_rate / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.epsilon);
        for (i, param) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *p = *p - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn net() -> Network<f64> {
        Network::from_specs(&[3], &[LayerSpec::Dense { out_units: 2 }], 5).unwrap()
    }

    fn constant_grads(n: &Network<f64>, g: f64) -> Vec<Tensor<f64>> {
        n.params().iter().map(|p| Tensor::full(p.shape(), g)).collect()
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut n = net();
        let before = n.clone();
        let mut s = AdamState::new(&n, AdamConfig::default());
        let g = constant_grads(&n, 0.0);
        for _ in 0..3 {
            s.step(&mut n, &g).unwrap();
        }
        assert_eq!(n, before);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.3, -5.0, 1e3] {
            let mut n = net();
            let before = n.clone();
            let cfg = AdamConfig { learning_rate: 1e-3, ..Default::default() };
            let mut s = AdamState::new(&n, cfg);
            let grads = constant_grads(&n, g);
            s.step(&mut n, &grads).unwrap();
            // closed form: lr * g / (|g| + eps)
            let want = -1e-3 * g / (g.abs() + 1e-8);
            for (a, b) in n.params().iter().zip(before.params()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut n = net();
        let before = n.clone();
        let mut s = AdamState::new(&n, AdamConfig { learning_rate: 0.0, ..Default::default() });
        let grads = constant_grads(&n, 2.0);
        s.step(&mut n, &grads).unwrap();
        assert_eq!(n, before);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut n = net();
        let mut s = AdamState::new(&n, AdamConfig::default());
        let g = constant_grads(&n, f64::NAN);
        assert!(matches!(s.step(&mut n, &g), Err(Error::Divergence(_))));
        assert_eq!(s.step, 0);
    }
}

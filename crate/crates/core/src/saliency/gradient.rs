use rand_distr::{Distribution, Normal};

use super::one_hot;
use crate::error::{Error, Result};
use crate::nn::{GradientRule, Network, ReluRule};
use crate::seed::rng_for;
use crate::tensor::{Scalar, Tensor};

/// Images per forward pass when a method evaluates many inputs.
const CHUNK: usize = 32;

/// d logit[target] / d input.
pub fn gradient<T: Scalar>(net: &Network<T>, image: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    modified_backprop(net, image, target, &mut GradientRule)
}

/// Backward pass with `rule` replacing the ReLU derivative.
pub fn modified_backprop<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    target: usize,
    rule: &mut dyn ReluRule<T>,
) -> Result<Tensor<T>> {
    let (logits, trace) = net.forward(image)?;
    let upstream = one_hot(1, logits.len(), target)?;
    net.backprop(&trace, &upstream, rule, false)?.input.reshape(image.shape())
}

pub fn input_times_gradient<T: Scalar>(net: &Network<T>, image: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    Ok(gradient(net, image, target)?.zip_map(image, |g, x| g * x))
}

/// Mean gradient over a batch of inputs, computed in chunks.
fn mean_gradient<T: Scalar>(net: &Network<T>, inputs: &[Tensor<T>], target: usize) -> Result<Tensor<T>> {
    let shape = inputs[0].shape().to_vec();
    let mut acc = vec![0.0f64; inputs[0].len()];
    for chunk in inputs.chunks(CHUNK) {
        let batch = Tensor::stack(chunk)?;
        let trace = net.forward_batch(&batch)?;
        let classes = trace.logits().shape()[1];
        let upstream = one_hot(chunk.len(), classes, target)?;
        let grads = net.backprop(&trace, &upstream, &mut GradientRule, false)?.input;
        for row in grads.data().chunks(acc.len()) {
            for (a, g) in acc.iter_mut().zip(row) {
                *a += g.f64();
            }
        }
    }
    let n = inputs.len() as f64;
    Tensor::from_vec(&shape, acc.into_iter().map(|a| T::of(a / n)).collect())
}

/// Mean gradient over `samples` copies of the image with Gaussian noise of
/// std `noise * (max - min)`.
pub fn smoothgrad<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    target: usize,
    samples: usize,
    noise: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.f64()), hi.max(v.f64())));
    let std = noise * (hi - lo);
    let normal = Normal::new(0.0, std).map_err(|e| Error::config(format!("smoothgrad noise: {e}")))?;
    let mut rng = rng_for(seed, &["smoothgrad"]);
    let noisy: Vec<Tensor<T>> = (0..samples)
        .map(|_| {
            let data = image.data().iter().map(|v| T::of(v.f64() + normal.sample(&mut rng))).collect();
            Tensor::from_vec(image.shape(), data)
        })
        .collect::<Result<_>>()?;
    mean_gradient(net, &noisy, target)
}

/// (input - baseline) times the mean gradient at the midpoints of `steps`
/// equal segments of the straight path from baseline to input.
pub fn integrated_gradients<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    baseline: &Tensor<T>,
    target: usize,
    steps: usize,
) -> Result<Tensor<T>> {
    if baseline.shape() != image.shape() {
        return Err(Error::config("baseline and image shapes differ"));
    }
    if steps == 0 {
        return Err(Error::config("integrated gradients needs at least one step"));
    }
    let delta = image.zip_map(baseline, |x, b| x - b);
    let path: Vec<Tensor<T>> = (0..steps)
        .map(|k| {
            let alpha = T::of((k as f64 + 0.5) / steps as f64);
            baseline.zip_map(&delta, |b, d| b + alpha * d)
        })
        .collect();
    let avg = mean_gradient(net, &path, target)?;
    Ok(avg.zip_map(&delta, |g, d| g * d))
}

/// Passes the upstream signal only where it is positive.
pub struct DeconvRule;

impl<T: Scalar> ReluRule<T> for DeconvRule {
    fn backward(&mut self, _: usize, _: &Tensor<T>, _: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
        upstream.map(|g| if g > T::zero() { g } else { T::zero() })
    }
}

/// Passes the upstream signal where it is positive and the forward input was active.
pub struct GuidedRule;

impl<T: Scalar> ReluRule<T> for GuidedRule {
    fn backward(&mut self, _: usize, input: &Tensor<T>, _: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
        upstream.zip_map(input, |g, x| if g > T::zero() && x > T::zero() { g } else { T::zero() })
    }
}

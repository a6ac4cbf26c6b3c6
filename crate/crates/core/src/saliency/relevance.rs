//! Relevance propagation (LRP family, z+ for deep Taylor) and DeepLIFT
//! multipliers.
//!
//! LRP denominators use the bias-free pre-activation `sum_i a_i w_ij`, so a
//! layer conserves relevance exactly unless a neuron with zero denominator
//! carries relevance; that relevance is dropped and reported as leakage.

use super::one_hot;
use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, Layer, Network, ReluRule};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrpRule {
    Z,
    Epsilon(f64),
    AlphaBeta { alpha: f64, beta: f64 },
    /// Positive weights only; on nonnegative inputs this is the deep Taylor
    /// decomposition of a ReLU network.
    ZPlus,
}

#[derive(Clone, Debug)]
pub struct LrpOutcome<T> {
    /// Relevance on the image, shaped like the image.
    pub input: Tensor<T>,
    /// `layer_sums[i]` is the total relevance entering layer `i` from below
    /// (i.e. at its input); the last entry is the starting relevance.
    pub layer_sums: Vec<f64>,
    /// Relevance dropped at layer `i` because of a zero denominator.
    pub leaked: Vec<f64>,
}

fn clamp_pos<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn clamp_neg<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v < T::zero() { v } else { T::zero() })
}

/// `r / z` with zero denominators mapped to zero; returns the ratio and the
/// relevance (signed sum, absolute sum) that was dropped.
fn divide<T: Scalar>(r: &Tensor<T>, z: &Tensor<T>) -> (Tensor<T>, f64, f64) {
    let (mut lost, mut lost_abs) = (0.0, 0.0);
    let data = r
        .data()
        .iter()
        .zip(z.data())
        .map(|(&r, &z)| {
            if z == T::zero() {
                lost += r.f64();
                lost_abs += r.f64().abs();
                T::zero()
            } else {
                r / z
            }
        })
        .collect();
    (Tensor::from_vec(r.shape(), data).expect("same shape"), lost, lost_abs)
}

struct Step<T> {
    relevance: Tensor<T>,
    lost: f64,
    lost_abs: f64,
}

fn linear_step<T: Scalar>(layer: &Layer<T>, a: &Tensor<T>, r: &Tensor<T>, rule: LrpRule) -> Step<T> {
    let w = layer.weight().expect("linear layer has weights");
    let has_negative_input = a.data().iter().any(|v| *v < T::zero());
    match rule {
        LrpRule::Z | LrpRule::Epsilon(_) => {
            let z = layer.linear_with(w, a);
            let (s, lost, lost_abs) = match rule {
                LrpRule::Epsilon(eps) => {
                    let eps = T::of(eps);
                    let stab = z.map(|v| if v >= T::zero() { v + eps } else { v - eps });
                    let (s, _, _) = divide(r, &stab);
                    (s, 0.0, 0.0)
                }
                _ => divide(r, &z),
            };
            let c = layer.linear_transpose_with(w, a, &s);
            Step { relevance: a.zip_map(&c, |x, c| x * c), lost, lost_abs }
        }
        LrpRule::ZPlus => {
            let wp = clamp_pos(w);
            let ap = clamp_pos(a);
            let z = layer.linear_with(&wp, &ap);
            let (s, lost, lost_abs) = divide(r, &z);
            let c = layer.linear_transpose_with(&wp, &ap, &s);
            Step { relevance: ap.zip_map(&c, |x, c| x * c), lost, lost_abs }
        }
        LrpRule::AlphaBeta { alpha, beta } => {
            let (wp, wn) = (clamp_pos(w), clamp_neg(w));
            let (ap, an) = (clamp_pos(a), clamp_neg(a));
            let mut zp = layer.linear_with(&wp, &ap);
            let mut zn = layer.linear_with(&wn, &ap);
            if has_negative_input {
                zp.add_assign(&layer.linear_with(&wn, &an));
                zn.add_assign(&layer.linear_with(&wp, &an));
            }
            let (sp, lost_p, abs_p) = divide(r, &zp);
            let (sn, lost_n, abs_n) = divide(r, &zn);
            let back = |wa: &Tensor<T>, wb: &Tensor<T>, s: &Tensor<T>| {
                let c = layer.linear_transpose_with(wa, a, s);
                let mut out = ap.zip_map(&c, |x, c| x * c);
                if has_negative_input {
                    let c = layer.linear_transpose_with(wb, a, s);
                    out.add_assign(&an.zip_map(&c, |x, c| x * c));
                }
                out
            };
            let pos = back(&wp, &wn, &sp);
            let neg = back(&wn, &wp, &sn);
            let (al, be) = (T::of(alpha), T::of(beta));
            Step {
                relevance: pos.zip_map(&neg, |p, n| al * p - be * n),
                lost: alpha * lost_p - beta * lost_n,
                lost_abs: alpha * abs_p + beta * abs_n,
            }
        }
    }
}

/// Propagates the target logit back to the input with `rule` at every
/// linear layer; ReLU, flatten and output layers pass relevance through.
pub fn lrp<T: Scalar>(net: &Network<T>, image: &Tensor<T>, target: usize, rule: LrpRule) -> Result<LrpOutcome<T>> {
    let (logits, trace) = net.forward(image)?;
    let mut r = one_hot::<T>(1, logits.len(), target)?.zip_map(trace.logits(), |m, l| m * l);
    let layers = net.layers();
    let mut layer_sums = vec![0.0; layers.len() + 1];
    let mut leaked = vec![0.0; layers.len()];
    layer_sums[layers.len()] = r.sum_f64();
    for (i, layer) in layers.iter().enumerate().rev() {
        let a = trace.input(i);
        r = match layer {
            Layer::Conv2D(_) | Layer::Dense(_) => {
                let total_abs: f64 = r.data().iter().map(|v| v.f64().abs()).sum();
                let step = linear_step(layer, a, &r, rule);
                leaked[i] = step.lost;
                if total_abs > 0.0 && step.lost_abs >= total_abs {
                    return Err(Error::NumericalDegeneracy {
                        layer: i,
                        detail: format!("{:?} rule: every relevant neuron has a zero denominator", rule),
                    });
                }
                step.relevance
            }
            Layer::Flatten => r.reshape(a.shape())?,
            Layer::ReLU | Layer::SoftmaxOutput => r,
        };
        layer_sums[i] = r.sum_f64();
    }
    Ok(LrpOutcome { input: r.reshape(image.shape())?, layer_sums, leaked })
}

/// DeepLIFT Rescale multiplier for ReLU: `(y - y_ref) / (x - x_ref)`, falling
/// back to the gradient where the input equals the reference.
pub struct RescaleRule<'a, T> {
    pub reference: &'a ForwardTrace<T>,
}

impl<T: Scalar> ReluRule<T> for RescaleRule<'_, T> {
    fn backward(&mut self, layer: usize, input: &Tensor<T>, output: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
        let (xr, yr) = (self.reference.input(layer).data(), self.reference.output(layer).data());
        let data = upstream
            .data()
            .iter()
            .zip(input.data().iter().zip(output.data()))
            .zip(xr.iter().zip(yr))
            .map(|((&g, (&x, &y)), (&x0, &y0))| {
                let dx = x - x0;
                let m = if dx == T::zero() {
                    if x > T::zero() { T::one() } else { T::zero() }
                } else {
                    (y - y0) / dx
                };
                g * m
            })
            .collect();
        Tensor::from_vec(upstream.shape(), data).expect("same shape")
    }
}

/// DeepLIFT Rescale contributions of `image` relative to `reference`.
pub fn deeplift<T: Scalar>(net: &Network<T>, image: &Tensor<T>, reference: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    deepshap(net, image, std::slice::from_ref(reference), target)
}

/// Mean DeepLIFT Rescale attribution over a set of references.
pub fn deepshap<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    references: &[Tensor<T>],
    target: usize,
) -> Result<Tensor<T>> {
    if references.is_empty() {
        return Err(Error::config("DeepSHAP needs at least one reference image"));
    }
    if references.iter().any(|r| r.shape() != image.shape()) {
        return Err(Error::config("reference and image shapes differ"));
    }
    let k = references.len();
    let inputs = Tensor::stack(&vec![image.clone(); k])?;
    let refs = Tensor::stack(references)?;
    let trace = net.forward_batch(&inputs)?;
    let ref_trace = net.forward_batch(&refs)?;
    let upstream = one_hot(k, trace.logits().shape()[1], target)?;
    let mult = net.backprop(&trace, &upstream, &mut RescaleRule { reference: &ref_trace }, false)?.input;
    let n = image.len();
    let mut acc = vec![0.0f64; n];
    for (row, reference) in mult.data().chunks(n).zip(references) {
        for ((a, m), (x, r)) in acc.iter_mut().zip(row).zip(image.data().iter().zip(reference.data())) {
            *a += m.f64() * (x.f64() - r.f64());
        }
    }
    Tensor::from_vec(image.shape(), acc.into_iter().map(|a| T::of(a / k as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::super::gradient::{gradient, input_times_gradient};
    use super::*;
    use crate::nn::{Dense, LayerSpec, NetworkMeta};
    use crate::seed::rng_for;
    use rand::Rng;

    fn relu_net(seed: u64) -> Network<f64> {
        let specs = [
            LayerSpec::Conv2D { out_channels: 4, kernel_size: 3, stride: 2 },
            LayerSpec::ReLU,
            LayerSpec::Conv2D { out_channels: 3, kernel_size: 3, stride: 1 },
            LayerSpec::ReLU,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_units: 6 },
            LayerSpec::ReLU,
            LayerSpec::Dense { out_units: 2 },
            LayerSpec::SoftmaxOutput,
        ];
        let mut net = Network::from_specs(&[2, 9, 9], &specs, seed).unwrap();
        let mut rng = rng_for(seed, &["bias"]);
        for (i, p) in net.params_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                for b in p.data_mut() {
                    *b = rng.random_range(-0.1..0.1);
                }
            }
        }
        net
    }

    fn linear_net(seed: u64) -> Network<f64> {
        let specs = [
            LayerSpec::Conv2D { out_channels: 3, kernel_size: 3, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_units: 4 },
            LayerSpec::Dense { out_units: 2 },
        ];
        let mut net = Network::from_specs(&[2, 7, 7], &specs, seed).unwrap();
        for p in net.params_mut() {
            if p.shape().len() == 1 {
                for b in p.data_mut() {
                    *b = 0.05;
                }
            }
        }
        net
    }

    fn image(shape: &[usize], seed: u64, lo: f64) -> Tensor<f64> {
        let mut rng = rng_for(seed, &["img"]);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_dense_z_rule_by_hand() {
        let dense = Dense {
            in_units: 3,
            out_units: 2,
            weight: Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 0.3, 0.3, 0.3]).unwrap(),
            bias: Tensor::from_vec(&[2], vec![0.25, 0.0]).unwrap(),
        };
        let net =
            Network::from_layers(&[1, 1, 3], vec![Layer::Flatten, Layer::Dense(dense)], NetworkMeta::default()).unwrap();
        let x = [2.0, 0.5, 4.0];
        let img = Tensor::from_vec(&[1, 1, 3], x.to_vec()).unwrap();
        let out = lrp(&net, &img, 0, LrpRule::Z).unwrap();
        let w = [1.0, -2.0, 0.5];
        let zsum: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let logit = zsum + 0.25;
        for i in 0..3 {
            let expect = x[i] * w[i] / zsum * logit;
            assert!((out.input.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn z_rule_conserves_per_layer() {
        for seed in 0..10 {
            let net = relu_net(seed);
            let img = image(&[2, 9, 9], seed, 0.0);
            let out = lrp(&net, &img, (seed % 2) as usize, LrpRule::Z).unwrap();
            for i in 0..net.layers().len() {
                if out.leaked[i] != 0.0 {
                    continue;
                }
                let (below, above) = (out.layer_sums[i], out.layer_sums[i + 1]);
                assert!((below - above).abs() <= 1e-3 * above.abs().max(1e-12), "seed {seed} layer {i}");
            }
        }
    }

    #[test]
    fn epsilon_rule_leaks_little() {
        let net = relu_net(3);
        let img = image(&[2, 9, 9], 4, 0.0);
        let out = lrp(&net, &img, 1, LrpRule::Epsilon(1e-7)).unwrap();
        let top = out.layer_sums[net.layers().len()];
        assert!((out.input.sum_f64() - top).abs() <= 0.01 * top.abs());
    }

    #[test]
    fn alpha_one_beta_zero_equals_zplus_on_nonnegative_input() {
        let net = relu_net(5);
        let img = image(&[2, 9, 9], 6, 0.0);
        let a = lrp(&net, &img, 0, LrpRule::AlphaBeta { alpha: 1.0, beta: 0.0 }).unwrap().input;
        let b = lrp(&net, &img, 0, LrpRule::ZPlus).unwrap().input;
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn alpha_beta_splits_by_hand() {
        let dense = Dense {
            in_units: 2,
            out_units: 2,
            weight: Tensor::from_vec(&[2, 2], vec![2.0, -1.0, 0.0, 0.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        };
        let net =
            Network::from_layers(&[1, 1, 2], vec![Layer::Flatten, Layer::Dense(dense)], NetworkMeta::default()).unwrap();
        let img = Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        // logit 1; positive part 2 (all from x0), negative part -1 (all from x1)
        let out = lrp(&net, &img, 0, LrpRule::AlphaBeta { alpha: 2.0, beta: 1.0 }).unwrap();
        assert_eq!(out.input.data(), &[2.0, -1.0]);
    }

    #[test]
    fn all_relevance_on_zero_denominators_is_degenerate() {
        let dense = Dense {
            in_units: 2,
            out_units: 2,
            weight: Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
            bias: Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap(),
        };
        let net =
            Network::from_layers(&[1, 1, 2], vec![Layer::Flatten, Layer::Dense(dense)], NetworkMeta::default()).unwrap();
        let img = Tensor::zeros(&[1, 1, 2]);
        assert!(matches!(lrp(&net, &img, 0, LrpRule::Z), Err(Error::NumericalDegeneracy { layer: 1, .. })));
        assert!(lrp(&net, &img, 0, LrpRule::Epsilon(1e-7)).is_ok());
    }

    #[test]
    fn deeplift_on_linear_net_is_input_times_gradient() {
        for seed in 0..5 {
            let net = linear_net(seed);
            let img = image(&[2, 7, 7], seed, -1.0);
            let dl = deeplift(&net, &img, &Tensor::zeros(img.shape()), 1).unwrap();
            let ixg = input_times_gradient(&net, &img, 1).unwrap();
            assert!(dl.data().iter().zip(ixg.data()).all(|(a, b)| (a - b).abs() <= 1e-6));
        }
    }

    #[test]
    fn deeplift_sums_to_logit_difference() {
        let net = relu_net(8);
        let img = image(&[2, 9, 9], 1, 0.0);
        let reference = image(&[2, 9, 9], 2, 0.0);
        let dl = deeplift(&net, &img, &reference, 0).unwrap();
        let (a, _) = net.forward(&img).unwrap();
        let (b, _) = net.forward(&reference).unwrap();
        assert!((dl.sum_f64() - (a.data()[0] - b.data()[0])).abs() < 1e-9);
    }

    #[test]
    fn deepshap_reduces_to_deeplift_and_ignores_order() {
        let net = relu_net(9);
        let img = image(&[2, 9, 9], 3, 0.0);
        let zero = Tensor::zeros(img.shape());
        assert_eq!(deepshap(&net, &img, std::slice::from_ref(&zero), 1).unwrap(), deeplift(&net, &img, &zero, 1).unwrap());
        let refs: Vec<_> = (0..4).map(|s| image(&[2, 9, 9], 10 + s, 0.0)).collect();
        let mut rev = refs.clone();
        rev.reverse();
        let a = deepshap(&net, &img, &refs, 0).unwrap();
        let b = deepshap(&net, &img, &rev, 0).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(matches!(deepshap(&net, &img, &[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn deepshap_on_linear_net_uses_mean_reference() {
        let net = linear_net(2);
        let img = image(&[2, 7, 7], 5, -1.0);
        let refs: Vec<_> = (0..3).map(|s| image(&[2, 7, 7], 20 + s, -1.0)).collect();
        let got = deepshap(&net, &img, &refs, 0).unwrap();
        let g = gradient(&net, &img, 0).unwrap();
        for p in 0..img.len() {
            let mean_ref: f64 = refs.iter().map(|r| r.data()[p]).sum::<f64>() / 3.0;
            let expect = (img.data()[p] - mean_ref) * g.data()[p];
            assert!((got.data()[p] - expect).abs() < 1e-9);
        }
    }
}

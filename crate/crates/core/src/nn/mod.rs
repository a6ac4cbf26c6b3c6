//! Minimal feed-forward network engine: the layer set the TextBox classifiers
//! need, batched forward passes that record every activation, and
//! reverse-mode differentiation with a pluggable ReLU backward rule.
//!
//! Tensors flowing through a network always carry a leading batch axis.
//! Convolutions use no padding, so a 64x64 input shrinks 64 -> 31 -> 15 -> 7
//! (-> 3 for the four-convolution architecture).

mod adam;
mod checkpoint;
mod conv;
mod dense;
mod loss;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{conv_out_len, Conv2D};
pub use dense::Dense;
pub use loss::{bce_loss, bce_loss_batch};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2D { out_channels: usize, kernel_size: usize, stride: usize },
    Dense { out_units: usize },
    ReLU,
    Flatten,
    /// Marks the logits as the input of a softmax cross-entropy head. Passes
    /// values through unchanged; the loss applies the softmax.
    SoftmaxOutput,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2D { out_channels, kernel_size, stride } => {
                write!(f, "C{out_channels}k{kernel_size}s{stride}")
            }
            LayerSpec::Dense { out_units } => write!(f, "D{out_units}"),
            LayerSpec::ReLU => write!(f, "R"),
            LayerSpec::Flatten => write!(f, "F"),
            LayerSpec::SoftmaxOutput => write!(f, "S"),
        }
    }
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad layer descriptor {s:?}"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        match s.chars().next() {
            Some('R') if s.len() == 1 => Ok(LayerSpec::ReLU),
            Some('F') if s.len() == 1 => Ok(LayerSpec::Flatten),
            Some('S') if s.len() == 1 => Ok(LayerSpec::SoftmaxOutput),
            Some('D') => Ok(LayerSpec::Dense { out_units: num(&s[1..])? }),
            Some('C') => {
                let (o, rest) = s[1..].split_once('k').ok_or_else(bad)?;
                let (k, st) = rest.split_once('s').ok_or_else(bad)?;
                Ok(LayerSpec::Conv2D { out_channels: num(o)?, kernel_size: num(k)?, stride: num(st)? })
            }
            _ => Err(bad()),
        }
    }
}

/// `"C32k3s2-R-F-D2"` style descriptor of a layer sequence.
pub fn describe_layers(specs: &[LayerSpec]) -> String {
    specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-")
}

pub fn parse_layers(descriptor: &str) -> Result<Vec<LayerSpec>> {
    descriptor.split('-').map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2D(Conv2D<T>),
    Dense(Dense<T>),
    ReLU,
    Flatten,
    SoftmaxOutput,
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2D(c) => LayerSpec::Conv2D {
                out_channels: c.out_channels,
                kernel_size: c.kernel_size,
                stride: c.stride,
            },
            Layer::Dense(d) => LayerSpec::Dense { out_units: d.out_units },
            Layer::ReLU => LayerSpec::ReLU,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::SoftmaxOutput => LayerSpec::SoftmaxOutput,
        }
    }

    pub fn weight(&self) -> Option<&Tensor<T>> {
        match self {
            Layer::Conv2D(c) => Some(&c.weight),
            Layer::Dense(d) => Some(&d.weight),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Conv2D(_) | Layer::Dense(_))
    }

    /// Bias-free linear map of a conv/dense layer with substitute weights.
    /// Identity for every other layer kind.
    pub fn linear_with(&self, weight: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2D(c) => c.forward_with(weight, input, false),
            Layer::Dense(d) => d.forward_with(weight, input, false),
            _ => input.clone(),
        }
    }

    /// Transpose of [`Layer::linear_with`] applied to `upstream`, shaped like `input`.
    pub fn linear_transpose_with(
        &self,
        weight: &Tensor<T>,
        input: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Tensor<T> {
        match self {
            Layer::Conv2D(c) => c.backward(weight, input, upstream, None),
            Layer::Dense(d) => d.backward(weight, input, upstream, None),
            _ => upstream.clone(),
        }
    }

    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2D(c) => c.forward(input, true),
            Layer::Dense(d) => d.forward(input, true),
            Layer::ReLU => input.map(|v| if v > T::zero() { v } else { T::zero() }),
            Layer::Flatten => {
                let b = input.shape()[0];
                let n = input.len() / b;
                input.clone().reshape(&[b, n]).expect("flatten")
            }
            Layer::SoftmaxOutput => input.clone(),
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2D(c) => Layer::Conv2D(Conv2D {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel_size: c.kernel_size,
                stride: c.stride,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                in_units: d.in_units,
                out_units: d.out_units,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
            }),
            Layer::ReLU => Layer::ReLU,
            Layer::Flatten => Layer::Flatten,
            Layer::SoftmaxOutput => Layer::SoftmaxOutput,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub reasoning: Option<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    pub meta: NetworkMeta,
}

/// Activations of one (batched) forward pass: `acts[i]` feeds layer `i`,
/// `acts[i + 1]` is its output.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    acts: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Number of layers recorded.
    pub fn len(&self) -> usize {
        self.acts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self) -> usize {
        self.acts[0].shape()[0]
    }

    pub fn input(&self, layer: usize) -> &Tensor<T> {
        &self.acts[layer]
    }

    pub fn output(&self, layer: usize) -> &Tensor<T> {
        &self.acts[layer + 1]
    }

    pub fn network_input(&self) -> &Tensor<T> {
        &self.acts[0]
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.acts.last().expect("trace has an input")
    }
}

/// Backward rule for ReLU layers. The standard rule gates the upstream
/// gradient by `input > 0`; attribution methods substitute their own.
pub trait ReluRule<T: Scalar> {
    fn backward(&mut self, layer: usize, input: &Tensor<T>, output: &Tensor<T>, upstream: &Tensor<T>)
        -> Tensor<T>;
}

pub struct GradientRule;

impl<T: Scalar> ReluRule<T> for GradientRule {
    fn backward(&mut self, _: usize, input: &Tensor<T>, _: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
        upstream.zip_map(input, |g, x| if x > T::zero() { g } else { T::zero() })
    }
}

pub struct Gradients<T> {
    /// One tensor per parameter, in [`Network::params`] order. Empty when
    /// parameter gradients were not requested.
    pub params: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn from_specs(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Conv2D { out_channels, kernel_size, stride } => {
                    if stride == 0 || kernel_size == 0 || out_channels == 0 {
                        return Err(Error::config(format!("layer {i}: degenerate conv {spec}")));
                    }
                    if shape.len() != 3 {
                        return Err(Error::config(format!("layer {i}: conv needs a CxHxW input, got {shape:?}")));
                    }
                    let fan_in = shape[0] * kernel_size * kernel_size;
                    let fan_out = out_channels * kernel_size * kernel_size;
                    let conv = Conv2D {
                        in_channels: shape[0],
                        out_channels,
                        kernel_size,
                        stride,
                        weight: glorot(&mut rng, &[out_channels, shape[0], kernel_size, kernel_size], fan_in, fan_out),
                        bias: Tensor::zeros(&[out_channels]),
                    };
                    shape = conv
                        .output_shape(&shape)
                        .ok_or_else(|| Error::config(format!("layer {i}: input {shape:?} too small for {spec}")))?;
                    Layer::Conv2D(conv)
                }
                LayerSpec::Dense { out_units } => {
                    if shape.len() != 1 || out_units == 0 {
                        return Err(Error::config(format!("layer {i}: dense needs a flat input, got {shape:?}")));
                    }
                    let dense = Dense {
                        in_units: shape[0],
                        out_units,
                        weight: glorot(&mut rng, &[out_units, shape[0]], shape[0], out_units),
                        bias: Tensor::zeros(&[out_units]),
                    };
                    shape = vec![out_units];
                    Layer::Dense(dense)
                }
                LayerSpec::ReLU => Layer::ReLU,
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                    Layer::Flatten
                }
                LayerSpec::SoftmaxOutput => Layer::SoftmaxOutput,
            };
            layers.push(layer);
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            meta: NetworkMeta { reasoning: None, seed },
        })
    }

    /// Assembles a network from explicit layers, checking shape compatibility.
    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer<T>>, meta: NetworkMeta) -> Result<Self> {
        let net = Network { input_shape: input_shape.to_vec(), layers, meta };
        net.layer_shapes()?;
        Ok(net)
    }

    /// Per-sample shapes: entry `i` is the input of layer `i`, the last entry the output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv2D(c) => {
                    if c.weight.shape() != [c.out_channels, c.in_channels, c.kernel_size, c.kernel_size]
                        || c.bias.shape() != [c.out_channels]
                    {
                        return Err(Error::config(format!("layer {i}: conv parameter shapes")));
                    }
                    c.output_shape(&shape)
                        .ok_or_else(|| Error::config(format!("layer {i}: conv cannot take {shape:?}")))?
                }
                Layer::Dense(d) => {
                    if shape != [d.in_units]
                        || d.weight.shape() != [d.out_units, d.in_units]
                        || d.bias.shape() != [d.out_units]
                    {
                        return Err(Error::config(format!("layer {i}: dense cannot take {shape:?}")));
                    }
                    vec![d.out_units]
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::ReLU | Layer::SoftmaxOutput => shape,
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layer_shapes().expect("validated at construction").pop().expect("has output")
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn descriptor(&self) -> String {
        describe_layers(&self.specs())
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2D(c) => out.extend([&c.weight, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2D(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Forward pass over a `[B, ...input_shape]` batch.
    pub fn forward_batch(&self, input: &Tensor<T>) -> Result<ForwardTrace<T>> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::config(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"));
            acts.push(next);
        }
        Ok(ForwardTrace { acts })
    }

    /// Forward pass for a single example; returns the unbatched logits.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::config(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        let trace = self.forward_batch(&input.clone().reshape(&shape)?)?;
        let logits = trace.logits().row(0);
        Ok((logits, trace))
    }

    /// Standard reverse pass. `loss_grad` is the gradient w.r.t. the logits,
    /// with or without the batch axis for a batch of one.
    pub fn backward(&self, trace: &ForwardTrace<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        self.backprop(trace, loss_grad, &mut GradientRule, true)
    }

    /// Reverse pass with a custom ReLU rule; parameter gradients only when asked.
    pub fn backprop(
        &self,
        trace: &ForwardTrace<T>,
        upstream: &Tensor<T>,
        relu: &mut dyn ReluRule<T>,
        param_grads: bool,
    ) -> Result<Gradients<T>> {
        self.reverse(trace, upstream, relu, param_grads, 0)
    }

    /// Gradient with respect to the input of layer `layer` (batched like the trace).
    pub fn backprop_to(
        &self,
        trace: &ForwardTrace<T>,
        upstream: &Tensor<T>,
        relu: &mut dyn ReluRule<T>,
        layer: usize,
    ) -> Result<Tensor<T>> {
        if layer > self.layers.len() {
            return Err(Error::Usage(format!("layer {layer} out of range")));
        }
        let out_shape = trace.logits().shape().to_vec();
        let upstream = if trace.batch() == 1 && upstream.shape() == &out_shape[1..] {
            upstream.clone().reshape(&out_shape)?
        } else {
            upstream.clone()
        };
        Ok(self.reverse(trace, &upstream, relu, false, layer)?.input)
    }

    fn reverse(
        &self,
        trace: &ForwardTrace<T>,
        upstream: &Tensor<T>,
        relu: &mut dyn ReluRule<T>,
        param_grads: bool,
        until: usize,
    ) -> Result<Gradients<T>> {
        if trace.acts.len() != self.layers.len() + 1 {
            return Err(Error::Usage(format!(
                "trace has {} layers, network has {}",
                trace.len(),
                self.layers.len()
            )));
        }
        let out_shape = trace.logits().shape();
        let mut grad = if upstream.shape() == out_shape {
            upstream.clone()
        } else if trace.batch() == 1 && upstream.shape() == &out_shape[1..] {
            upstream.clone().reshape(out_shape)?
        } else {
            return Err(Error::Usage(format!(
                "upstream gradient {:?} does not match network output {:?}",
                upstream.shape(),
                out_shape
            )));
        };
        let mut grads: Vec<Tensor<T>> = if param_grads {
            self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
        } else {
            Vec::new()
        };
        let mut slot = grads.len();
        for (i, layer) in self.layers.iter().enumerate().skip(until).rev() {
            let input = trace.input(i);
            grad = match layer {
                Layer::Conv2D(c) => {
                    let pg = if param_grads {
                        slot -= 2;
                        let (w, b) = grads[slot..slot + 2].split_at_mut(1);
                        Some((&mut w[0], &mut b[0]))
                    } else {
                        None
                    };
                    c.backward(&c.weight, input, &grad, pg)
                }
                Layer::Dense(d) => {
                    let pg = if param_grads {
                        slot -= 2;
                        let (w, b) = grads[slot..slot + 2].split_at_mut(1);
                        Some((&mut w[0], &mut b[0]))
                    } else {
                        None
                    };
                    d.backward(&d.weight, input, &grad, pg)
                }
                Layer::ReLU => relu.backward(i, input, trace.output(i), &grad),
                Layer::Flatten => grad.reshape(input.shape())?,
                Layer::SoftmaxOutput => grad,
            };
        }
        let input = if upstream.shape() == out_shape { grad } else { grad.row(0) };
        Ok(Gradients { params: grads, input })
    }
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("glorot shape")
}

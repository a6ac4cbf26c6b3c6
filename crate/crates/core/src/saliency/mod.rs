//! Attribution methods. Every method produces a raw `[C, 64, 64]` attribution
//! that [`channel_reduce`] folds into the single nonnegative map the metrics
//! consume.

mod baseline;
mod gradcam;
mod gradient;
mod relevance;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::{Scalar, Tensor};

pub use baseline::{edge_map, random_map};
pub use gradcam::{gradcam, upsample_bilinear};
pub use gradient::{
    gradient, input_times_gradient, integrated_gradients, modified_backprop, smoothgrad, DeconvRule,
    GuidedRule,
};
pub use relevance::{deeplift, deepshap, lrp, LrpOutcome, LrpRule, RescaleRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Gradient,
    SmoothGrad,
    DeConvNet,
    GuidedBackprop,
    DeepTaylor,
    InputTimesGradient,
    IntegratedGradients,
    LrpZ,
    LrpEpsilon,
    LrpAlphaBeta10,
    LrpAlphaBeta21,
    DeepLiftRescale,
    DeepLiftRescaleMeanRef,
    GradCam,
    DeepShapApprox,
    RandomBaseline,
    EdgeDetector,
}

impl Method {
    pub const ALL: [Method; 17] = [
        Method::Gradient,
        Method::SmoothGrad,
        Method::DeConvNet,
        Method::GuidedBackprop,
        Method::DeepTaylor,
        Method::InputTimesGradient,
        Method::IntegratedGradients,
        Method::LrpZ,
        Method::LrpEpsilon,
        Method::LrpAlphaBeta10,
        Method::LrpAlphaBeta21,
        Method::DeepLiftRescale,
        Method::DeepLiftRescaleMeanRef,
        Method::GradCam,
        Method::DeepShapApprox,
        Method::RandomBaseline,
        Method::EdgeDetector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::SmoothGrad => "smoothgrad",
            Method::DeConvNet => "deconvnet",
            Method::GuidedBackprop => "guided-backprop",
            Method::DeepTaylor => "deep-taylor",
            Method::InputTimesGradient => "input-x-gradient",
            Method::IntegratedGradients => "integrated-gradients",
            Method::LrpZ => "lrp-z",
            Method::LrpEpsilon => "lrp-epsilon",
            Method::LrpAlphaBeta10 => "lrp-alpha1-beta0",
            Method::LrpAlphaBeta21 => "lrp-alpha2-beta1",
            Method::DeepLiftRescale => "deeplift-rescale",
            Method::DeepLiftRescaleMeanRef => "deeplift-rescale-meanref",
            Method::GradCam => "gradcam",
            Method::DeepShapApprox => "deepshap",
            Method::RandomBaseline => "random",
            Method::EdgeDetector => "edge",
        }
    }

    /// Random and edge maps ignore the model.
    pub fn is_baseline(self) -> bool {
        matches!(self, Method::RandomBaseline | Method::EdgeDetector)
    }

    pub fn non_baseline() -> impl Iterator<Item = Method> {
        Method::ALL.into_iter().filter(|m| !m.is_baseline())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::config(format!("unknown method '{s}'")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

/// Parses a comma-separated method list; `all` selects every method.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::config("empty method list"));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub ig_steps: usize,
    pub smoothgrad_samples: usize,
    /// Noise std as a fraction of the input's value range.
    pub smoothgrad_noise: f64,
    pub lrp_epsilon: f64,
    pub deepshap_references: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            ig_steps: 64,
            smoothgrad_samples: 16,
            smoothgrad_noise: 0.15,
            lrp_epsilon: 1e-7,
            deepshap_references: 8,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::config("ig_steps must be at least 1"));
        }
        if self.smoothgrad_samples == 0 {
            return Err(Error::config("smoothgrad_samples must be at least 1"));
        }
        if !(self.smoothgrad_noise >= 0.0 && self.smoothgrad_noise.is_finite()) {
            return Err(Error::config("smoothgrad_noise must be a nonnegative number"));
        }
        if !(self.lrp_epsilon > 0.0 && self.lrp_epsilon.is_finite()) {
            return Err(Error::config("lrp_epsilon must be positive"));
        }
        if self.deepshap_references == 0 {
            return Err(Error::config("deepshap_references must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub hyper: Hyperparams,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        MethodSpec { method, hyper: Hyperparams::default() }
    }
}

impl From<Method> for MethodSpec {
    fn from(method: Method) -> Self {
        MethodSpec::new(method)
    }
}

/// Reduced attribution, row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub method: Method,
    pub image_id: String,
    pub target: usize,
}

impl AttributionMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Sum over channels, then absolute value per pixel.
pub fn channel_reduce<T: Scalar>(raw: &Tensor<T>) -> Vec<f64> {
    let (c, hw) = match raw.shape() {
        [c, h, w] => (*c, h * w),
        [hw] => (1, *hw),
        s => panic!("channel_reduce expects [C, H, W], got {s:?}"),
    };
    let d = raw.data();
    (0..hw).map(|p| (0..c).map(|ch| d[ch * hw + p].f64()).sum::<f64>().abs()).collect()
}

/// Inputs an attribution may need beyond the model and the image.
#[derive(Clone, Copy, Debug, Default)]
pub struct Context<'a, T = f32> {
    /// Mean image of the evaluation bucket, for the mean-reference DeepLIFT variant.
    pub mean_reference: Option<&'a Tensor<T>>,
    /// Reference images for DeepSHAP.
    pub references: &'a [Tensor<T>],
    /// Seed for sampling methods (SmoothGrad noise, random baseline).
    pub seed: u64,
}

/// Class with the largest logit.
pub fn predicted_class<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<usize> {
    let (logits, _) = net.forward(image)?;
    Ok(argmax(logits.data()))
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Unreduced `[C, H, W]` attribution of `target` (the predicted class when
/// `None`). Returns the attribution and the class used.
pub fn attribute_raw<T: Scalar>(
    spec: &MethodSpec,
    net: &Network<T>,
    image: &Tensor<T>,
    target: Option<usize>,
    ctx: &Context<'_, T>,
) -> Result<(Tensor<T>, usize)> {
    spec.hyper.validate()?;
    let h = &spec.hyper;
    let target = match target {
        Some(t) => t,
        None if spec.method.is_baseline() => 0,
        None => predicted_class(net, image)?,
    };
    let raw = match spec.method {
        Method::Gradient => gradient(net, image, target)?,
        Method::SmoothGrad => smoothgrad(net, image, target, h.smoothgrad_samples, h.smoothgrad_noise, ctx.seed)?,
        Method::DeConvNet => modified_backprop(net, image, target, &mut DeconvRule)?,
        Method::GuidedBackprop => modified_backprop(net, image, target, &mut GuidedRule)?,
        Method::InputTimesGradient => input_times_gradient(net, image, target)?,
        Method::IntegratedGradients => {
            integrated_gradients(net, image, &Tensor::zeros(image.shape()), target, h.ig_steps)?
        }
        Method::LrpZ => lrp(net, image, target, LrpRule::Z)?.input,
        Method::LrpEpsilon => lrp(net, image, target, LrpRule::Epsilon(h.lrp_epsilon))?.input,
        Method::LrpAlphaBeta10 => lrp(net, image, target, LrpRule::AlphaBeta { alpha: 1.0, beta: 0.0 })?.input,
        Method::LrpAlphaBeta21 => lrp(net, image, target, LrpRule::AlphaBeta { alpha: 2.0, beta: 1.0 })?.input,
        Method::DeepTaylor => lrp(net, image, target, LrpRule::ZPlus)?.input,
        Method::DeepLiftRescale => deeplift(net, image, &Tensor::zeros(image.shape()), target)?,
        Method::DeepLiftRescaleMeanRef => {
            let reference = ctx
                .mean_reference
                .ok_or_else(|| Error::config("deeplift-rescale-meanref needs a mean reference image"))?;
            deeplift(net, image, reference, target)?
        }
        Method::DeepShapApprox => {
            let k = h.deepshap_references.min(ctx.references.len());
            deepshap(net, image, &ctx.references[..k], target)?
        }
        Method::GradCam => gradcam(net, image, target)?,
        Method::RandomBaseline => random_map(image, ctx.seed),
        Method::EdgeDetector => edge_map(image),
    };
    if !raw.all_finite() {
        return Err(Error::MethodFailure {
            method: spec.method.name().to_string(),
            detail: format!("non-finite attribution (max |value| {:e})", raw.max_abs()),
        });
    }
    Ok((raw, target))
}

/// Reduced attribution map for one image.
pub fn attribute<T: Scalar>(
    spec: &MethodSpec,
    net: &Network<T>,
    image: &Tensor<T>,
    target: Option<usize>,
    ctx: &Context<'_, T>,
    image_id: &str,
) -> Result<AttributionMap> {
    let (raw, target) = attribute_raw(spec, net, image, target, ctx)?;
    let (height, width) = match raw.shape() {
        [_, h, w] => (*h, *w),
        s => return Err(Error::Usage(format!("attribution shape {s:?} is not [C, H, W]"))),
    };
    Ok(AttributionMap {
        values: channel_reduce(&raw),
        height,
        width,
        method: spec.method,
        image_id: image_id.to_string(),
        target,
    })
}

/// `[B, classes]` upstream selecting `target` in every row.
pub(crate) fn one_hot<T: Scalar>(batch: usize, classes: usize, target: usize) -> Result<Tensor<T>> {
    if target >= classes {
        return Err(Error::config(format!("target class {target} out of range for {classes} outputs")));
    }
    let mut t = Tensor::zeros(&[batch, classes]);
    for b in 0..batch {
        t.data_mut()[b * classes + target] = T::one();
    }
    Ok(t)
}

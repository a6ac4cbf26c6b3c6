//! Ground-truth evaluation of saliency methods on synthetic TextBox images.
//!
//! The crate covers the whole pipeline: a small CPU network engine ([`nn`]),
//! the image generator ([`textbox`]), the reasoning rules that fix what a
//! trained model looks at ([`reasoning`]), training with verification
//! ([`trainer`]), the attribution methods ([`saliency`]) and the scores that
//! compare attributions with the ground truth ([`metrics`]).

pub mod error;
pub mod metrics;
pub mod nn;
pub mod reasoning;
pub mod saliency;
pub mod seed;
pub mod tensor;
pub mod textbox;
pub mod trainer;

pub use error::{Error, Result};
pub use metrics::{AggregateRecord, MetricRecord, RegionPartition};
pub use nn::{ForwardTrace, LayerSpec, Network};
pub use reasoning::{GroundTruth, ReasoningKind};
pub use saliency::{AttributionMap, Method, MethodSpec};
pub use tensor::{Scalar, Tensor};
pub use textbox::{BucketSpec, ImageSample, ObjectKind, SceneSpec};
pub use trainer::{TrainConfig, TrainReport};

//! Fixtures shared by the benchmarks.

use smerf_core::metrics::RegionPartition;
use smerf_core::nn::Network;
use smerf_core::reasoning::ReasoningKind;
use smerf_core::tensor::Tensor;
use smerf_core::textbox::{generate_bucket, BucketSpec, LabeledScene, RenderOptions};
use smerf_core::trainer::build_model;

/// An untrained model with the architecture `reasoning` trains.
pub fn model(reasoning: ReasoningKind) -> Network<f32> {
    build_model(reasoning, 1)
}

/// The first bucket of `reasoning` that has a primary region.
pub fn scored_bucket(reasoning: ReasoningKind) -> BucketSpec {
    reasoning
        .valid_buckets()
        .into_iter()
        .find(|b| reasoning.ground_truth(*b).map(|g| g.has_primary()).unwrap_or(false))
        .expect("every reasoning type has a scored bucket")
}

pub fn scenes(reasoning: ReasoningKind, n: usize) -> Vec<LabeledScene> {
    generate_bucket(reasoning, scored_bucket(reasoning), n, 5, "bench", RenderOptions::default()).expect("bucket renders")
}

pub fn image(reasoning: ReasoningKind) -> Tensor<f32> {
    scenes(reasoning, 1)[0].render().pixels
}

pub fn batch(reasoning: ReasoningKind, n: usize) -> Tensor<f32> {
    let images: Vec<Tensor<f32>> = scenes(reasoning, n).iter().map(|s| s.render().pixels).collect();
    Tensor::stack(&images).expect("same shapes")
}

/// A positive map with its ground-truth regions.
pub fn scored_map(reasoning: ReasoningKind) -> (Vec<f64>, RegionPartition) {
    let scene = &scenes(reasoning, 1)[0];
    let sample = scene.render();
    let gt = reasoning.ground_truth(scene.scene.bucket).expect("valid bucket");
    let parts = RegionPartition::from_ground_truth(&gt, &sample.region_masks).expect("masks fit");
    let map = (0..64 * 64).map(|i| ((i * 7919) % 1013) as f64 / 1013.0 + 1e-3).collect();
    (map, parts)
}

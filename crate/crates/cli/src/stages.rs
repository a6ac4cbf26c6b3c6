//! The pipeline stages. Each stage reads only the artifacts of the stages
//! before it and checks their recorded hashes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _};
use rand::seq::index::sample;
use rayon::prelude::*;
use smerf_core::metrics::{aggregate, saturation_curve, score, AggregateRecord, MetricRecord, RecordKey, RegionPartition};
use smerf_core::nn::Network;
use smerf_core::reasoning::ReasoningKind;
use smerf_core::saliency::{attribute, Context, Method, MethodSpec};
use smerf_core::seed::{derive_seed, rng_for};
use smerf_core::tensor::Tensor;
use smerf_core::textbox::{generate_bucket, generate_dataset, BucketSpec, LabeledScene};
use smerf_core::trainer::{build_model, train_best, TrainReport};
use smerf_core::Error;

use crate::config::RunConfig;
use crate::output;
use crate::store::{self, DumpEntry, DumpOutcome, StageRecord, StoredDatasetInput};

/// The model exists but did not pass verification; attributions would have
/// no ground truth to be judged against.
#[derive(Debug)]
pub struct Unverified(pub PathBuf);

impl std::fmt::Display for Unverified {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "refusing to use unverified model {}", self.0.display())
    }
}

impl std::error::Error for Unverified {}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn record_stage(cfg: &RunConfig, reasoning: ReasoningKind, stage: &str, rec: StageRecord) -> anyhow::Result<()> {
    store::update_manifest(&cfg.reasoning_dir(reasoning), &config_json(cfg), stage, rec)?;
    Ok(())
}

fn recorded_output(dir: &Path, stage: &str, file: &str) -> anyhow::Result<Option<String>> {
    let path = dir.join("run_manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let m: store::RunManifest = store::read_json(&path)?;
    Ok(m.stages.get(stage).and_then(|s| s.outputs.get(file).cloned()))
}

/// Buckets whose ground truth names at least one primary object.
pub fn scored_buckets(reasoning: ReasoningKind) -> Vec<BucketSpec> {
    reasoning
        .valid_buckets()
        .into_iter()
        .filter(|b| reasoning.ground_truth(*b).map(|g| g.has_primary()).unwrap_or(false))
        .collect()
}

pub fn generate(cfg: &RunConfig, reasoning: ReasoningKind) -> anyhow::Result<store::DatasetManifest> {
    let started = Instant::now();
    let counts = cfg.counts_for(reasoning)?;
    let seed = cfg.dataset_seed(reasoning);
    let options = cfg.render_options();
    let dataset = generate_dataset(reasoning, &counts, seed, options)?;
    let evaluation = reasoning
        .valid_buckets()
        .into_iter()
        .map(|b| Ok((b, generate_bucket(reasoning, b, cfg.eval_per_bucket, seed, "evaluation", options)?)))
        .collect::<smerf_core::Result<Vec<_>>>()?;
    let dir = cfg.reasoning_dir(reasoning).join(store::DATASET_DIR);
    let manifest = store::write_dataset(&dir, seed, cfg.color_jitter, &StoredDatasetInput { dataset: &dataset, evaluation: &evaluation })?;
    log::info!(
        "{reasoning}: wrote {} training, {} validation, {} evaluation images to {}",
        dataset.train.len(),
        dataset.validation.len(),
        evaluation.iter().map(|(_, v)| v.len()).sum::<usize>(),
        dir.display()
    );
    let mut outputs = manifest.shards.clone();
    outputs.insert("manifest.json".into(), store::sha256_file(&dir.join("manifest.json"))?);
    record_stage(cfg, reasoning, "generate", StageRecord { outputs, inputs: BTreeMap::new(), seconds: started.elapsed().as_secs_f64() })?;
    Ok(manifest)
}

/// Trains and stores the model. A model that misses the threshold is still
/// written (marked unverified) before the training-failure error is returned.
pub fn train(cfg: &RunConfig, reasoning: ReasoningKind) -> anyhow::Result<TrainReport> {
    let started = Instant::now();
    let root = cfg.reasoning_dir(reasoning);
    let data_dir = root.join(store::DATASET_DIR);
    let stored = store::read_dataset(&data_dir)?;
    if stored.manifest.reasoning != reasoning {
        bail!(Error::Config(format!("dataset at {} is for {}", data_dir.display(), stored.manifest.reasoning)));
    }
    let dataset_hash = store::sha256_file(&data_dir.join("manifest.json"))?;
    let tc = cfg.train_config(reasoning);
    let (net, report) = train_best(build_model(reasoning, tc.init_seed(0)), &stored.dataset, &tc)?;
    let model_dir = root.join(store::MODEL_DIR);
    let sidecar = store::write_model(&model_dir, &net, &report, &dataset_hash)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset/manifest.json".into(), dataset_hash);
    let outputs = store::hash_files(&model_dir, &["model.ckpt", "model.json", "train_report.json"])?;
    record_stage(cfg, reasoning, "train", StageRecord { outputs, inputs, seconds: started.elapsed().as_secs_f64() })?;
    if !sidecar.verified {
        let path = model_dir.join("train_report.json");
        return Err(anyhow::Error::new(Error::TrainingFailure {
            restarts: report.restarts,
            best_accuracy: report.final_validation_accuracy,
            report: Box::new(report),
        }))
        .with_context(|| format!("training report written to {}", path.display()));
    }
    log::info!(
        "{reasoning}: verified after {} restart(s), train {:.4}, validation {:.4}",
        report.restarts,
        report.final_train_accuracy,
        report.final_validation_accuracy
    );
    Ok(report)
}

/// Everything the attribution stage needs for one reasoning type.
pub struct AttributionInputs {
    pub net: Network<f32>,
    pub buckets: Vec<(BucketSpec, Vec<LabeledScene>)>,
    pub references: Vec<Tensor<f32>>,
    pub means: BTreeMap<u8, Tensor<f32>>,
}

fn mean_image(scenes: &[LabeledScene]) -> Tensor<f32> {
    let mut acc = vec![0.0f64; scenes[0].render().pixels.len()];
    for s in scenes {
        for (a, v) in acc.iter_mut().zip(s.render().pixels.data()) {
            *a += *v as f64;
        }
    }
    let n = scenes.len() as f64;
    Tensor::from_vec(&[3, 64, 64], acc.into_iter().map(|a| (a / n) as f32).collect()).expect("image shape")
}

pub fn attribution_inputs(cfg: &RunConfig, reasoning: ReasoningKind) -> anyhow::Result<AttributionInputs> {
    let root = cfg.reasoning_dir(reasoning);
    let model_dir = root.join(store::MODEL_DIR);
    let (net, sidecar) = store::read_model(&model_dir)?;
    if !sidecar.verified {
        bail!(Unverified(model_dir.join("model.ckpt")));
    }
    let data_dir = root.join(store::DATASET_DIR);
    let stored = store::read_dataset(&data_dir)?;
    if store::sha256_file(&data_dir.join("manifest.json"))? != sidecar.dataset_manifest_sha256 {
        bail!(Error::Integrity(format!("model in {} was trained on a different dataset", model_dir.display())));
    }
    let scored: Vec<u8> = scored_buckets(reasoning).iter().map(|b| b.id).collect();
    let buckets: Vec<_> = stored.evaluation.into_iter().filter(|(b, s)| scored.contains(&b.id) && !s.is_empty()).collect();
    let all: Vec<&LabeledScene> = buckets.iter().flat_map(|(_, s)| s.iter()).collect();
    let k = cfg.hyper.deepshap_references.min(all.len());
    let mut rng = rng_for(cfg.attribution_seed(reasoning), &["deepshap-references"]);
    let mut picks = sample(&mut rng, all.len(), k).into_vec();
    picks.sort_unstable();
    let references = picks.iter().map(|&i| all[i].render().pixels).collect();
    let means = buckets.iter().map(|(b, s)| (b.id, mean_image(s))).collect();
    Ok(AttributionInputs { net, buckets, references, means })
}

/// Attributions for every (bucket, image, method), in that order.
pub fn compute_attributions(cfg: &RunConfig, reasoning: ReasoningKind, inputs: &AttributionInputs) -> anyhow::Result<Vec<DumpEntry>> {
    let seed = cfg.attribution_seed(reasoning);
    let jobs: Vec<(BucketSpec, usize, &LabeledScene)> =
        inputs.buckets.iter().flat_map(|(b, s)| s.iter().enumerate().map(move |(i, sc)| (*b, i, sc))).collect();
    let per_image: Vec<anyhow::Result<Vec<DumpEntry>>> = jobs
        .par_iter()
        .map(|&(bucket, index, scene)| {
            let image = scene.render().pixels;
            let mut out = Vec::with_capacity(cfg.methods.len());
            for &method in &cfg.methods {
                let spec = MethodSpec { method, hyper: cfg.hyper.clone() };
                let ctx = Context {
                    mean_reference: inputs.means.get(&bucket.id),
                    references: &inputs.references,
                    seed: derive_seed(seed, &[method.name(), &bucket.id.to_string(), &index.to_string()]),
                };
                let id = format!("b{:02}-{index}", bucket.id);
                let (target, outcome) = match attribute(&spec, &inputs.net, &image, None, &ctx, &id) {
                    Ok(map) => (map.target, DumpOutcome::Map(map.values.iter().map(|&v| v as f32).collect())),
                    Err(e @ (Error::MethodFailure { .. } | Error::NumericalDegeneracy { .. })) => {
                        log::warn!("{reasoning} {method} on {id}: {e}");
                        (0, DumpOutcome::Failed(e.to_string()))
                    }
                    Err(e) => return Err(e.into()),
                };
                out.push(DumpEntry { method, bucket: bucket.id, image: index, target, outcome });
            }
            Ok(out)
        })
        .collect();
    let mut entries = Vec::new();
    for r in per_image {
        entries.extend(r?);
    }
    Ok(entries)
}

pub fn attribute_stage(cfg: &RunConfig, reasoning: ReasoningKind) -> anyhow::Result<PathBuf> {
    let started = Instant::now();
    let root = cfg.reasoning_dir(reasoning);
    let inputs = attribution_inputs(cfg, reasoning)?;
    let entries = compute_attributions(cfg, reasoning, &inputs)?;
    let dir = root.join(store::ATTRIBUTION_DIR);
    fs::create_dir_all(&dir)?;
    let path = dir.join("attributions.bin");
    let mut w = BufWriter::new(File::create(&path)?);
    store::write_dump(&mut w, 64, 64, &entries)?;
    w.flush()?;
    drop(w);
    output::write_heatmap_grids(&dir.join("png"), &inputs, &entries)?;
    log::info!("{reasoning}: {} attributions written to {}", entries.len(), path.display());
    let mut inputs_h = BTreeMap::new();
    inputs_h.insert("model/model.ckpt".into(), store::sha256_file(&root.join(store::MODEL_DIR).join("model.ckpt"))?);
    inputs_h.insert("dataset/manifest.json".into(), store::sha256_file(&root.join(store::DATASET_DIR).join("manifest.json"))?);
    let outputs = store::hash_files(&dir, &["attributions.bin"])?;
    record_stage(cfg, reasoning, "attribute", StageRecord { outputs, inputs: inputs_h, seconds: started.elapsed().as_secs_f64() })?;
    Ok(path)
}

/// Metric records plus the per-method count of maps that could not be scored.
pub struct Scored {
    pub records: Vec<MetricRecord>,
    pub excluded: BTreeMap<(ReasoningKind, Method), usize>,
}

pub fn score_entries(
    cfg: &RunConfig,
    reasoning: ReasoningKind,
    evaluation: &[(BucketSpec, Vec<LabeledScene>)],
    entries: &[DumpEntry],
) -> anyhow::Result<Scored> {
    let mut regions: BTreeMap<(u8, usize), RegionPartition> = BTreeMap::new();
    for (bucket, scenes) in evaluation {
        let gt = reasoning.ground_truth(*bucket)?;
        if !gt.has_primary() {
            continue;
        }
        for (i, s) in scenes.iter().enumerate() {
            regions.insert((bucket.id, i), RegionPartition::from_ground_truth(&gt, &s.render().region_masks)?);
        }
    }
    let mut records = Vec::with_capacity(entries.len());
    let mut excluded: BTreeMap<(ReasoningKind, Method), usize> = BTreeMap::new();
    for e in entries {
        let bucket = BucketSpec::from_id(e.bucket)?;
        let gt = reasoning.ground_truth(bucket)?;
        let part = regions
            .get(&(e.bucket, e.image))
            .ok_or_else(|| Error::Integrity(format!("dump refers to missing image {} of bucket {}", e.image, e.bucket)))?;
        let map = match &e.outcome {
            DumpOutcome::Map(v) => v.iter().map(|&x| x as f64).collect::<Vec<_>>(),
            DumpOutcome::Failed(_) => {
                *excluded.entry((reasoning, e.method)).or_default() += 1;
                continue;
            }
        };
        let key = RecordKey {
            reasoning,
            method: e.method,
            bucket: e.bucket,
            image: e.image,
            object_count: bucket.object_count(),
            dual_feature: gt.is_dual_feature(),
            weak_evidence: gt.weak_evidence,
        };
        match score(&map, part, &cfg.blur, key) {
            Ok(r) => {
                if r.pafl + r.safl > 1.0 + 1e-9 || (r.pafl > 0.5 && r.pafl <= r.safl) {
                    bail!(Error::Integrity(format!(
                        "{} on bucket {} image {}: pafl {} safl {} break the focus bound",
                        r.method, r.bucket, r.image, r.pafl, r.safl
                    )));
                }
                records.push(r);
            }
            Err(Error::DegenerateAttribution) => *excluded.entry((reasoning, e.method)).or_default() += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Scored { records, excluded })
}

pub struct Evaluation {
    pub records: Vec<MetricRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

pub fn evaluate(cfg: &RunConfig, reasoning: ReasoningKind) -> anyhow::Result<Evaluation> {
    let started = Instant::now();
    let root = cfg.reasoning_dir(reasoning);
    let dump_path = root.join(store::ATTRIBUTION_DIR).join("attributions.bin");
    let (_, _, entries) = store::read_dump_file(&dump_path)?;
    if entries.is_empty() {
        bail!(Error::Config(format!("attribution dump {} is empty", dump_path.display())));
    }
    let dump_hash = store::sha256_file(&dump_path)?;
    if let Some(expected) = recorded_output(&root, "attribute", "attributions.bin")? {
        if expected != dump_hash {
            bail!(Error::Integrity(format!("{} does not match its recorded hash", dump_path.display())));
        }
    }
    let stored = store::read_dataset(&root.join(store::DATASET_DIR))?;
    let scored = score_entries(cfg, reasoning, &stored.evaluation, &entries)?;
    let aggregates = aggregate(&scored.records, &scored.excluded);
    let dir = root.join(store::METRICS_DIR);
    output::write_metric_files(&dir, &scored.records, &aggregates)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("attributions/attributions.bin".into(), dump_hash);
    let outputs = store::hash_files(
        &dir,
        &["metrics.csv", "aggregate.json", "success_matrix.csv", "failure_matrix.csv", "saturation.csv"],
    )?;
    record_stage(cfg, reasoning, "evaluate", StageRecord { outputs, inputs, seconds: started.elapsed().as_secs_f64() })?;
    log::info!("{reasoning}: {} metric records in {}", scored.records.len(), dir.display());
    Ok(Evaluation { records: scored.records, aggregates })
}

/// Figures for every evaluated reasoning type under the output root, plus
/// the cross-reasoning success and failure matrices.
pub fn report(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let mut all = Vec::new();
    let mut written = Vec::new();
    for r in ReasoningKind::ALL {
        let path = cfg.reasoning_dir(r).join(store::METRICS_DIR).join("aggregate.json");
        if !path.exists() {
            continue;
        }
        let aggs: Vec<AggregateRecord> = store::read_json(&path)?;
        let fig_dir = cfg.reasoning_dir(r).join(store::FIGURES_DIR);
        written.extend(output::write_reasoning_figures(&fig_dir, r, &aggs, &saturation_curve(&aggs))?);
        all.extend(aggs);
    }
    if all.is_empty() {
        bail!(Error::Config(format!("no evaluated reasoning types under {}", cfg.out.display())));
    }
    written.extend(output::write_summary(&cfg.out.join("report"), &all)?);
    Ok(written)
}

pub fn run_all(cfg: &RunConfig) -> anyhow::Result<()> {
    for &r in &cfg.reasoning {
        generate(cfg, r)?;
        train(cfg, r)?;
        attribute_stage(cfg, r)?;
        evaluate(cfg, r)?;
    }
    report(cfg)?;
    Ok(())
}

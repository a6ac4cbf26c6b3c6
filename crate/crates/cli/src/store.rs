//! On-disk layout of every stage's artifacts, with content hashes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smerf_core::nn::{read_checkpoint, write_checkpoint, Network};
use smerf_core::reasoning::ReasoningKind;
use smerf_core::saliency::Method;
use smerf_core::textbox::{read_shard, write_shard, BucketSpec, Dataset, LabeledScene};
use smerf_core::trainer::TrainReport;
use smerf_core::{Error, Result};

pub const DATASET_DIR: &str = "dataset";
pub const MODEL_DIR: &str = "model";
pub const ATTRIBUTION_DIR: &str = "attributions";
pub const METRICS_DIR: &str = "metrics";
pub const FIGURES_DIR: &str = "figures";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found: expected {}", path.display())))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub bucket: u8,
    pub description: String,
    pub label: usize,
    pub train: usize,
    pub validation: usize,
    pub evaluation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub reasoning: ReasoningKind,
    pub seed: u64,
    pub color_jitter: bool,
    pub buckets: Vec<BucketEntry>,
    /// Shard file name to SHA-256.
    pub shards: BTreeMap<String, String>,
}

pub const DATASET_FORMAT: &str = "smerf-dataset";

/// Training, validation and evaluation images of one reasoning type.
#[derive(Clone, Debug)]
pub struct StoredDataset {
    pub manifest: DatasetManifest,
    pub dataset: Dataset,
    /// Evaluation images grouped by bucket, in bucket order.
    pub evaluation: Vec<(BucketSpec, Vec<LabeledScene>)>,
}

fn shard_name(split: &str, bucket: u8) -> String {
    format!("{split}-b{bucket:02}.shd")
}

fn by_bucket(scenes: &[LabeledScene]) -> BTreeMap<u8, Vec<LabeledScene>> {
    let mut out: BTreeMap<u8, Vec<LabeledScene>> = BTreeMap::new();
    for s in scenes {
        out.entry(s.scene.bucket.id).or_default().push(s.clone());
    }
    out
}

pub fn write_dataset(dir: &Path, seed: u64, color_jitter: bool, data: &StoredDatasetInput<'_>) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let train = by_bucket(&data.dataset.train);
    let validation = by_bucket(&data.dataset.validation);
    let mut shards = BTreeMap::new();
    let mut buckets = Vec::new();
    for (bucket, eval) in data.evaluation {
        let id = bucket.id;
        let empty = Vec::new();
        let parts = [
            ("train", train.get(&id).unwrap_or(&empty)),
            ("validation", validation.get(&id).unwrap_or(&empty)),
            ("evaluation", eval),
        ];
        for (split, scenes) in parts {
            let name = shard_name(split, id);
            let path = dir.join(&name);
            let mut w = BufWriter::new(File::create(&path)?);
            write_shard(&mut w, id, split, scenes)?;
            w.flush()?;
            drop(w);
            shards.insert(name, sha256_file(&path)?);
        }
        buckets.push(BucketEntry {
            bucket: id,
            description: bucket.to_string(),
            label: data.dataset.reasoning.label(*bucket)?,
            train: parts[0].1.len(),
            validation: parts[1].1.len(),
            evaluation: eval.len(),
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: 1,
        reasoning: data.dataset.reasoning,
        seed,
        color_jitter,
        buckets,
        shards,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub struct StoredDatasetInput<'a> {
    pub dataset: &'a Dataset,
    pub evaluation: &'a [(BucketSpec, Vec<LabeledScene>)],
}

/// Loads a dataset container, checking every shard against its recorded hash.
pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let manifest_path = dir.join("manifest.json");
    require(&manifest_path, "dataset manifest")?;
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    if manifest.format != DATASET_FORMAT || manifest.version != 1 {
        return Err(Error::Format(format!("{} is not a version-1 dataset manifest", manifest_path.display())));
    }
    let mut dataset = Dataset { reasoning: manifest.reasoning, train: Vec::new(), validation: Vec::new() };
    let mut evaluation = Vec::new();
    for entry in &manifest.buckets {
        let bucket = BucketSpec::from_id(entry.bucket)?;
        for split in ["train", "validation", "evaluation"] {
            let name = shard_name(split, entry.bucket);
            let path = dir.join(&name);
            require(&path, "dataset shard")?;
            let expected = manifest
                .shards
                .get(&name)
                .ok_or_else(|| Error::Integrity(format!("manifest has no hash for {name}")))?;
            let bytes = fs::read(&path)?;
            if &sha256_bytes(&bytes) != expected {
                return Err(Error::Integrity(format!("{} does not match its recorded hash", path.display())));
            }
            let (header, scenes) = read_shard(&bytes[..])?;
            if header.bucket != entry.bucket || header.split != split {
                return Err(Error::Integrity(format!("{name} holds bucket {} split {}", header.bucket, header.split)));
            }
            match split {
                "train" => dataset.train.extend(scenes),
                "validation" => dataset.validation.extend(scenes),
                _ => evaluation.push((bucket, scenes)),
            }
        }
    }
    Ok(StoredDataset { manifest, dataset, evaluation })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub reasoning: ReasoningKind,
    pub architecture: String,
    pub input_shape: Vec<usize>,
    pub parameter_shapes: Vec<Vec<usize>>,
    pub parameter_count: usize,
    pub init_seed: u64,
    /// Passed the per-bucket validation threshold.
    pub verified: bool,
    pub checkpoint_sha256: String,
    pub dataset_manifest_sha256: String,
    pub epochs_run: usize,
    pub restarts: usize,
    pub final_train_accuracy: f64,
    pub final_validation_accuracy: f64,
}

pub fn write_model(dir: &Path, net: &Network<f32>, report: &TrainReport, dataset_hash: &str) -> Result<ModelSidecar> {
    fs::create_dir_all(dir)?;
    let ckpt = dir.join("model.ckpt");
    let mut w = BufWriter::new(File::create(&ckpt)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    drop(w);
    let sidecar = ModelSidecar {
        reasoning: report.reasoning,
        architecture: net.descriptor(),
        input_shape: net.input_shape().to_vec(),
        parameter_shapes: net.params().iter().map(|p| p.shape().to_vec()).collect(),
        parameter_count: net.param_count(),
        init_seed: net.meta.seed,
        verified: report.passed,
        checkpoint_sha256: sha256_file(&ckpt)?,
        dataset_manifest_sha256: dataset_hash.to_string(),
        epochs_run: report.epochs_run,
        restarts: report.restarts,
        final_train_accuracy: report.final_train_accuracy,
        final_validation_accuracy: report.final_validation_accuracy,
    };
    write_json(&dir.join("model.json"), &sidecar)?;
    write_json(&dir.join("train_report.json"), report)?;
    Ok(sidecar)
}

pub fn read_model(dir: &Path) -> Result<(Network<f32>, ModelSidecar)> {
    let ckpt = dir.join("model.ckpt");
    let side = dir.join("model.json");
    require(&ckpt, "model checkpoint")?;
    require(&side, "model sidecar")?;
    let sidecar: ModelSidecar = read_json(&side)?;
    let bytes = fs::read(&ckpt)?;
    if sha256_bytes(&bytes) != sidecar.checkpoint_sha256 {
        return Err(Error::Integrity(format!("{} does not match its recorded hash", ckpt.display())));
    }
    let net = read_checkpoint(&bytes[..])?;
    Ok((net, sidecar))
}

pub const DUMP_MAGIC: &[u8; 8] = b"SMERFATT";
pub const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum DumpOutcome {
    Map(Vec<f32>),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DumpEntry {
    pub method: Method,
    pub bucket: u8,
    pub image: usize,
    pub target: usize,
    pub outcome: DumpOutcome,
}

pub fn write_dump<W: Write>(mut out: W, height: usize, width: usize, entries: &[DumpEntry]) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    out.write_all(&(height as u16).to_le_bytes())?;
    out.write_all(&(width as u16).to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.method.name().as_bytes();
        out.write_all(&[name.len() as u8])?;
        out.write_all(name)?;
        out.write_all(&[e.bucket])?;
        out.write_all(&(e.image as u32).to_le_bytes())?;
        out.write_all(&[e.target as u8])?;
        match &e.outcome {
            DumpOutcome::Map(v) => {
                if v.len() != height * width {
                    return Err(Error::Usage(format!("map has {} values, expected {}", v.len(), height * width)));
                }
                out.write_all(&[0])?;
                for x in v {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            DumpOutcome::Failed(msg) => {
                out.write_all(&[1])?;
                let m = msg.as_bytes();
                let m = &m[..m.len().min(u16::MAX as usize)];
                out.write_all(&(m.len() as u16).to_le_bytes())?;
                out.write_all(m)?;
            }
        }
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated attribution dump: {e}")))?;
    Ok(b)
}

pub fn read_dump<R: Read>(mut input: R) -> Result<(usize, usize, Vec<DumpEntry>)> {
    if &take::<8>(&mut input)? != DUMP_MAGIC {
        return Err(Error::Format("not an attribution dump".into()));
    }
    let version = u32::from_le_bytes(take(&mut input)?);
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    let h = u16::from_le_bytes(take(&mut input)?) as usize;
    let w = u16::from_le_bytes(take(&mut input)?) as usize;
    let n = u32::from_le_bytes(take(&mut input)?) as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let [len] = take::<1>(&mut input)?;
        let mut name = vec![0u8; len as usize];
        input.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated attribution dump: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("method name is not UTF-8".into()))?;
        let method: Method = name.parse().map_err(|_| Error::Format(format!("unknown method {name} in dump")))?;
        let [bucket] = take::<1>(&mut input)?;
        let image = u32::from_le_bytes(take(&mut input)?) as usize;
        let [target] = take::<1>(&mut input)?;
        let [status] = take::<1>(&mut input)?;
        let outcome = match status {
            0 => {
                let mut raw = vec![0u8; h * w * 4];
                input.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated attribution dump: {e}")))?;
                DumpOutcome::Map(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
            1 => {
                let len = u16::from_le_bytes(take(&mut input)?) as usize;
                let mut m = vec![0u8; len];
                input.read_exact(&mut m).map_err(|e| Error::Format(format!("truncated attribution dump: {e}")))?;
                DumpOutcome::Failed(String::from_utf8_lossy(&m).into_owned())
            }
            s => return Err(Error::Format(format!("bad entry status {s}"))),
        };
        entries.push(DumpEntry { method, bucket, image, target: target as usize, outcome });
    }
    Ok((h, w, entries))
}

pub fn read_dump_file(path: &Path) -> Result<(usize, usize, Vec<DumpEntry>)> {
    require(path, "attribution dump")?;
    read_dump(BufReader::new(File::open(path)?))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub outputs: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub seconds: f64,
}

/// Per-reasoning record of what each stage consumed and produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn update_manifest(dir: &Path, config: &serde_json::Value, stage: &str, record: StageRecord) -> Result<()> {
    let path = dir.join("run_manifest.json");
    let mut m: RunManifest = if path.exists() { read_json(&path)? } else { RunManifest::default() };
    m.tool = env!("CARGO_PKG_NAME").into();
    m.version = env!("CARGO_PKG_VERSION").into();
    m.config = config.clone();
    m.stages.insert(stage.into(), record);
    write_json(&path, &m)
}

/// Hashes of the named files relative to `dir`.
pub fn hash_files(dir: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    names.iter().map(|n| Ok((n.to_string(), sha256_file(&dir.join(n))?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let entries = vec![
            DumpEntry { method: Method::LrpZ, bucket: 3, image: 7, target: 1, outcome: DumpOutcome::Map(vec![0.5; 4]) },
            DumpEntry {
                method: Method::GradCam,
                bucket: 12,
                image: 0,
                target: 0,
                outcome: DumpOutcome::Failed("boom".into()),
            },
        ];
        let mut buf = Vec::new();
        write_dump(&mut buf, 2, 2, &entries).unwrap();
        assert_eq!(read_dump(&buf[..]).unwrap(), (2, 2, entries));
        assert!(matches!(read_dump(&buf[..buf.len() - 3]), Err(Error::Format(_))));
    }
}

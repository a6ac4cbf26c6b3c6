//! Run configuration: a TOML file mirrored by command-line flags, flags winning.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use smerf_core::metrics::BlurParams;
use smerf_core::reasoning::ReasoningKind;
use smerf_core::saliency::{parse_methods, Hyperparams, Method};
use smerf_core::seed::derive_seed;
use smerf_core::textbox::{BucketCount, BucketSpec, DatasetCounts, RenderOptions};
use smerf_core::trainer::TrainConfig;
use smerf_core::{Error, Result};

pub const DEFAULT_OUT: &str = "smerf-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub max_restarts: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::new(ReasoningKind::SimpleFr, 0);
        TrainSettings {
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            max_restarts: t.max_restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "reasoning_list")]
    pub reasoning: Vec<ReasoningKind>,
    pub seed: u64,
    /// Common shrink factor for the default per-bucket counts.
    pub scale: f64,
    /// Fresh evaluation images per bucket.
    pub eval_per_bucket: usize,
    #[serde(deserialize_with = "method_list")]
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub color_jitter: bool,
    /// Per-bucket `[train, validation]` overrides keyed by bucket id.
    pub counts: BTreeMap<String, [usize; 2]>,
    pub train: TrainSettings,
    pub hyper: Hyperparams,
    pub blur: BlurParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reasoning: vec![ReasoningKind::SimpleFr],
            seed: 0,
            scale: 1.0,
            eval_per_bucket: 100,
            methods: Method::ALL.to_vec(),
            out: PathBuf::from(DEFAULT_OUT),
            color_jitter: false,
            counts: BTreeMap::new(),
            train: TrainSettings::default(),
            hyper: Hyperparams::default(),
            blur: BlurParams::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn joined(self) -> String {
        match self {
            OneOrMany::One(s) => s,
            OneOrMany::Many(v) => v.join(","),
        }
    }
}

fn method_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Method>, D::Error> {
    parse_methods(&OneOrMany::deserialize(d)?.joined()).map_err(serde::de::Error::custom)
}

fn reasoning_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ReasoningKind>, D::Error> {
    parse_reasoning(&OneOrMany::deserialize(d)?.joined()).map_err(serde::de::Error::custom)
}

/// Comma-separated reasoning names; `all` selects all seven.
pub fn parse_reasoning(list: &str) -> Result<Vec<ReasoningKind>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(ReasoningKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let r: ReasoningKind = part.trim().parse()?;
        if !out.contains(&r) {
            out.push(r);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty reasoning list".into()));
    }
    Ok(out)
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub reasoning: Option<String>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub methods: Option<String>,
    pub out: Option<PathBuf>,
    pub eval_per_bucket: Option<usize>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_restarts: Option<usize>,
    pub learning_rate: Option<f64>,
    pub color_jitter: Option<bool>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(r) = &o.reasoning {
            self.reasoning = parse_reasoning(r)?;
        }
        if let Some(m) = &o.methods {
            self.methods = parse_methods(m)?;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.scale {
            self.scale = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.eval_per_bucket {
            self.eval_per_bucket = v;
        }
        if let Some(v) = o.max_epochs {
            self.train.max_epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.max_restarts {
            self.train.max_restarts = v;
        }
        if let Some(v) = o.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = o.color_jitter {
            self.color_jitter = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.reasoning.is_empty() {
            return Err(Error::Config("no reasoning type selected".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if self.eval_per_bucket == 0 {
            return Err(Error::Config("eval_per_bucket must be at least 1".into()));
        }
        if !(self.blur.sigma > 0.0 && self.blur.sigma.is_finite()) {
            return Err(Error::Config("blur sigma must be positive".into()));
        }
        for key in self.counts.keys() {
            let id: u8 = key.parse().map_err(|_| Error::Config(format!("count key '{key}' is not a bucket id")))?;
            BucketSpec::from_id(id)?;
        }
        self.hyper.validate()?;
        self.train_config(self.reasoning[0]).validate()
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { color_jitter: self.color_jitter }
    }

    /// Default counts, scaled, with per-bucket overrides for buckets the reasoning uses.
    pub fn counts_for(&self, reasoning: ReasoningKind) -> Result<DatasetCounts> {
        let mut counts = DatasetCounts::full_scale(reasoning).scaled(self.scale)?;
        for (key, &[train, validation]) in &self.counts {
            let id: u8 = key.parse().map_err(|_| Error::Config(format!("count key '{key}' is not a bucket id")))?;
            if let Some(c) = counts.buckets.iter_mut().find(|c| c.bucket == id) {
                *c = BucketCount { bucket: id, train, validation };
            }
        }
        Ok(counts)
    }

    pub fn dataset_seed(&self, reasoning: ReasoningKind) -> u64 {
        derive_seed(self.seed, &["dataset", reasoning.name()])
    }

    pub fn train_config(&self, reasoning: ReasoningKind) -> TrainConfig {
        let mut c = TrainConfig::new(reasoning, derive_seed(self.seed, &["train", reasoning.name()]));
        c.learning_rate = self.train.learning_rate;
        c.max_epochs = self.train.max_epochs;
        c.batch_size = self.train.batch_size;
        c.max_restarts = self.train.max_restarts;
        c
    }

    pub fn attribution_seed(&self, reasoning: ReasoningKind) -> u64 {
        derive_seed(self.seed, &["attribute", reasoning.name()])
    }

    pub fn reasoning_dir(&self, reasoning: ReasoningKind) -> PathBuf {
        self.out.join(reasoning.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut c = RunConfig::from_toml(
            r#"
            reasoning = ["simple-fr", "complex-cr2"]
            seed = 3
            scale = 0.5
            methods = "gradient,lrp-z"
            [train]
            max_epochs = 4
            [hyper]
            ig_steps = 32
            [counts]
            "12" = [50, 20]
            "#,
        )
        .unwrap();
        assert_eq!(c.reasoning, vec![ReasoningKind::SimpleFr, ReasoningKind::ComplexCr2]);
        assert_eq!(c.methods, vec![Method::Gradient, Method::LrpZ]);
        assert_eq!((c.train.max_epochs, c.train.batch_size), (4, TrainSettings::default().batch_size));
        assert_eq!(c.hyper.ig_steps, 32);
        c.apply(&Overrides { seed: Some(9), methods: Some("all".into()), ..Default::default() }).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.methods.len(), 17);
        let counts = c.counts_for(ReasoningKind::SimpleFr).unwrap();
        let b12 = counts.buckets.iter().find(|b| b.bucket == 12).unwrap();
        assert_eq!((b12.train, b12.validation), (50, 20));
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::from_toml("scale = 1.0\nbogus = 2").is_err());
        assert!(RunConfig::from_toml("methods = [\"occlusion\"]").is_err());
        assert!(RunConfig::from_toml("reasoning = \"simple-xx\"").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply(&Overrides { scale: Some(0.0), ..Default::default() }).is_err());
        let mut c = RunConfig::default();
        c.counts.insert("13".into(), [1, 1]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig { reasoning: ReasoningKind::ALL.to_vec(), ..Default::default() };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}

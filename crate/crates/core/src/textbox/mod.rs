//! TextBox images: 64x64 RGB, black background, white objects (a text glyph
//! 'A' or 'B', a 10x10 box and a 4x4 box) at random non-overlapping spots.

mod container;
mod glyph;
mod mask;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use container::{read_shard, write_shard, ShardHeader, SHARD_MAGIC, SHARD_VERSION};
pub use mask::PixelMask;

use crate::error::{Error, Result};
use crate::reasoning::ReasoningKind;
use crate::seed::{derive_seed, rng_for};
use crate::tensor::Tensor;

pub const CANVAS: usize = 64;
pub const CHANNELS: usize = 3;
pub const GLYPH_SIZE: usize = 10;
pub const BOX1_SIZE: usize = 10;
pub const BOX2_SIZE: usize = 4;
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Smallest per-bucket count a scaled-down dataset keeps.
pub const MIN_SCALED_PER_BUCKET: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectKind {
    TextA,
    TextB,
    Box1,
    Box2,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [ObjectKind::TextA, ObjectKind::TextB, ObjectKind::Box1, ObjectKind::Box2];

    /// Bounding-box side length in pixels; every object is square.
    pub fn size(self) -> usize {
        match self {
            ObjectKind::TextA | ObjectKind::TextB => GLYPH_SIZE,
            ObjectKind::Box1 => BOX1_SIZE,
            ObjectKind::Box2 => BOX2_SIZE,
        }
    }

    pub fn is_text(self) -> bool {
        matches!(self, ObjectKind::TextA | ObjectKind::TextB)
    }

    /// Whether the object covers pixel `(row, col)` of its own bounding box.
    pub fn covers(self, row: usize, col: usize) -> bool {
        match self {
            ObjectKind::TextA => glyph::A[row].as_bytes()[col] == b'#',
            ObjectKind::TextB => glyph::B[row].as_bytes()[col] == b'#',
            ObjectKind::Box1 | ObjectKind::Box2 => true,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::TextA => "TextA",
            ObjectKind::TextB => "TextB",
            ObjectKind::Box1 => "Box1",
            ObjectKind::Box2 => "Box2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Text {
    None,
    A,
    B,
}

impl Text {
    pub fn object(self) -> Option<ObjectKind> {
        match self {
            Text::None => None,
            Text::A => Some(ObjectKind::TextA),
            Text::B => Some(ObjectKind::TextB),
        }
    }
}

/// One (Text, Box1, Box2) presence combination.
///
/// Buckets are numbered 1..=12, grouped by box configuration with the text
/// value varying fastest:
///
/// | ids   | Box1 | Box2 | text order   |
/// |-------|------|------|--------------|
/// | 1-3   | no   | no   | None, A, B   |
/// | 4-6   | yes  | no   | None, A, B   |
/// | 7-9   | no   | yes  | None, A, B   |
/// | 10-12 | yes  | yes  | None, A, B   |
///
/// so the text-free buckets are 1, 4, 7, 10 and both boxes appear in 10-12.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketSpec {
    pub id: u8,
    pub text: Text,
    pub box1: bool,
    pub box2: bool,
}

impl BucketSpec {
    pub fn new(text: Text, box1: bool, box2: bool) -> Self {
        let boxes = match (box1, box2) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        };
        let t = match text {
            Text::None => 0,
            Text::A => 1,
            Text::B => 2,
        };
        BucketSpec { id: (boxes * 3 + t + 1) as u8, text, box1, box2 }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        if !(1..=12).contains(&id) {
            return Err(Error::Domain(format!("bucket id {id} outside 1..=12")));
        }
        let k = id - 1;
        let text = [Text::None, Text::A, Text::B][(k % 3) as usize];
        let (box1, box2) = [(false, false), (true, false), (false, true), (true, true)][(k / 3) as usize];
        Ok(BucketSpec::new(text, box1, box2))
    }

    /// Present objects in placement order (text, Box1, Box2).
    pub fn objects(&self) -> Vec<ObjectKind> {
        let mut out = Vec::with_capacity(3);
        out.extend(self.text.object());
        if self.box1 {
            out.push(ObjectKind::Box1);
        }
        if self.box2 {
            out.push(ObjectKind::Box2);
        }
        out
    }

    pub fn object_count(&self) -> usize {
        self.objects().len()
    }
}

impl fmt::Display for BucketSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self.text {
            Text::None => "-",
            Text::A => "A",
            Text::B => "B",
        };
        write!(f, "#{} text={} box1={} box2={}", self.id, text, self.box1 as u8, self.box2 as u8)
    }
}

/// All twelve buckets in id order.
pub fn enumerate_buckets() -> Vec<BucketSpec> {
    (1..=12).map(|id| BucketSpec::from_id(id).expect("valid id")).collect()
}

/// Intensities used when rendering. The default is black background and
/// white objects; jitter samples grey levels per image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub background: f32,
    pub foreground: f32,
}

impl Default for Palette {
    fn default() -> Self {
        Palette { background: 0.0, foreground: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub color_jitter: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub bucket: BucketSpec,
    /// Top-left `(row, col)` of each present object.
    pub placements: BTreeMap<ObjectKind, (usize, usize)>,
    pub seed: u64,
    pub palette: Palette,
}

impl SceneSpec {
    /// Bounding box `(top, left, size)` of a placed object.
    pub fn bbox(&self, kind: ObjectKind) -> Option<(usize, usize, usize)> {
        self.placements.get(&kind).map(|&(r, c)| (r, c, kind.size()))
    }

    /// Every placed object lies on the canvas and no two bounding boxes meet.
    pub fn is_valid(&self) -> bool {
        let boxes: Vec<_> = self.placements.iter().map(|(&k, &(r, c))| (r, c, k.size())).collect();
        let inside = boxes.iter().all(|&(r, c, s)| r + s <= CANVAS && c + s <= CANVAS);
        let expected: Vec<_> = self.bucket.objects();
        let keys: Vec<_> = self.placements.keys().copied().collect();
        let mut want = expected.clone();
        want.sort();
        inside && keys == want && (0..boxes.len()).all(|i| (i + 1..boxes.len()).all(|j| !overlaps(boxes[i], boxes[j])))
    }
}

pub(crate) fn overlaps(a: (usize, usize, usize), b: (usize, usize, usize)) -> bool {
    a.0 < b.0 + b.2 && b.0 < a.0 + a.2 && a.1 < b.1 + b.2 && b.1 < a.1 + a.2
}

/// Places the bucket's objects uniformly at random without overlap.
pub fn sample_scene(bucket: BucketSpec, seed: u64, options: RenderOptions) -> Result<SceneSpec> {
    let mut rng = rng_for(seed, &["scene"]);
    let palette = if options.color_jitter {
        Palette { background: rng.random_range(0.0..0.3), foreground: rng.random_range(0.6..=1.0) }
    } else {
        Palette::default()
    };
    let mut placements = BTreeMap::new();
    let mut placed: Vec<(usize, usize, usize)> = Vec::new();
    for kind in bucket.objects() {
        let s = kind.size();
        let mut spot = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let r = rng.random_range(0..=CANVAS - s);
            let c = rng.random_range(0..=CANVAS - s);
            if placed.iter().all(|&b| !overlaps(b, (r, c, s))) {
                spot = Some((r, c));
                break;
            }
        }
        let (r, c) = spot.ok_or_else(|| {
            Error::Usage(format!("could not place {} after {MAX_PLACEMENT_ATTEMPTS} attempts", kind.name()))
        })?;
        placed.push((r, c, s));
        placements.insert(kind, (r, c));
    }
    Ok(SceneSpec { bucket, placements, seed, palette })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `[3, 64, 64]`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub scene: SceneSpec,
    pub label: Option<usize>,
    /// Bounding-box region of each present object.
    pub region_masks: BTreeMap<ObjectKind, PixelMask>,
}

pub fn render(scene: &SceneSpec) -> ImageSample {
    let mut pixels = vec![scene.palette.background; CHANNELS * CANVAS * CANVAS];
    let mut masks = BTreeMap::new();
    for (&kind, &(top, left)) in &scene.placements {
        let s = kind.size();
        for r in 0..s {
            for c in 0..s {
                if kind.covers(r, c) {
                    for ch in 0..CHANNELS {
                        pixels[(ch * CANVAS + top + r) * CANVAS + left + c] = scene.palette.foreground;
                    }
                }
            }
        }
        masks.insert(kind, PixelMask::rect(CANVAS, CANVAS, top, left, s, s));
    }
    ImageSample {
        pixels: Tensor::from_vec(&[CHANNELS, CANVAS, CANVAS], pixels).expect("canvas shape"),
        scene: scene.clone(),
        label: None,
        region_masks: masks,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScene {
    pub scene: SceneSpec,
    pub label: usize,
}

impl LabeledScene {
    pub fn render(&self) -> ImageSample {
        let mut s = render(&self.scene);
        s.label = Some(self.label);
        s
    }
}

/// Renders scenes into a `[B, 3, 64, 64]` batch.
pub fn render_batch<'a>(scenes: impl IntoIterator<Item = &'a SceneSpec>) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut n = 0;
    for s in scenes {
        data.extend_from_slice(render(s).pixels.data());
        n += 1;
    }
    Tensor::from_vec(&[n, CHANNELS, CANVAS, CANVAS], data).expect("batch shape")
}

/// Per-bucket sample counts for each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub bucket: u8,
    pub train: usize,
    pub validation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub buckets: Vec<BucketCount>,
}

impl DatasetCounts {
    /// Training/validation counts used for each reasoning type at full scale.
    pub fn full_scale(reasoning: ReasoningKind) -> Self {
        let buckets = reasoning
            .valid_buckets()
            .into_iter()
            .map(|b| {
                let (train, validation) = match reasoning {
                    ReasoningKind::SimpleFr | ReasoningKind::SimpleNr => (2000, 500),
                    ReasoningKind::ComplexFr => (if b.box1 && b.box2 { 6000 } else { 2000 }, 500),
                    _ => (15000, 400),
                };
                BucketCount { bucket: b.id, train, validation }
            })
            .collect();
        DatasetCounts { buckets }
    }

    /// Shrinks every count by a common factor, never letting the smallest
    /// training bucket drop below [`MIN_SCALED_PER_BUCKET`]. The shared factor
    /// keeps the label balance of oversampled buckets intact.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("scale must be positive, got {scale}")));
        }
        if scale >= 1.0 {
            return Ok(self.clone());
        }
        let min_train = self.buckets.iter().map(|b| b.train).min().unwrap_or(0).max(1);
        let factor = scale.max((MIN_SCALED_PER_BUCKET as f64 / min_train as f64).min(1.0));
        let shrink = |n: usize, floor: usize| ((n as f64 * factor).round() as usize).max(floor.min(n));
        let buckets = self
            .buckets
            .iter()
            .map(|b| BucketCount {
                bucket: b.bucket,
                train: shrink(b.train, 0),
                validation: shrink(b.validation, MIN_SCALED_PER_BUCKET),
            })
            .collect();
        Ok(DatasetCounts { buckets })
    }

    pub fn train_total(&self) -> usize {
        self.buckets.iter().map(|b| b.train).sum()
    }

    pub fn validation_total(&self) -> usize {
        self.buckets.iter().map(|b| b.validation).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub reasoning: ReasoningKind,
    pub train: Vec<LabeledScene>,
    pub validation: Vec<LabeledScene>,
}

/// `n` labeled scenes of one bucket drawn from the stream `(seed, split, bucket)`.
pub fn generate_bucket(
    reasoning: ReasoningKind,
    bucket: BucketSpec,
    n: usize,
    seed: u64,
    split: &str,
    options: RenderOptions,
) -> Result<Vec<LabeledScene>> {
    let label = reasoning.label(bucket)?;
    let bucket_label = bucket.id.to_string();
    (0..n)
        .map(|i| {
            let s = derive_seed(seed, &[split, &bucket_label, &i.to_string()]);
            Ok(LabeledScene { scene: sample_scene(bucket, s, options)?, label })
        })
        .collect()
}

/// Training and validation sets for `reasoning`, bucket by bucket in id order.
pub fn generate_dataset(
    reasoning: ReasoningKind,
    counts: &DatasetCounts,
    seed: u64,
    options: RenderOptions,
) -> Result<Dataset> {
    if counts.buckets.is_empty() {
        return Err(Error::config(format!("{reasoning} has no buckets to generate")));
    }
    let valid: Vec<u8> = reasoning.valid_buckets().iter().map(|b| b.id).collect();
    let mut train = Vec::with_capacity(counts.train_total());
    let mut validation = Vec::with_capacity(counts.validation_total());
    for c in &counts.buckets {
        if !valid.contains(&c.bucket) {
            return Err(Error::Domain(format!("bucket {} is not used by {reasoning}", c.bucket)));
        }
        if c.train == 0 || c.validation == 0 {
            return Err(Error::config(format!("bucket {} has a zero count", c.bucket)));
        }
        let bucket = BucketSpec::from_id(c.bucket)?;
        train.extend(generate_bucket(reasoning, bucket, c.train, seed, "train", options)?);
        validation.extend(generate_bucket(reasoning, bucket, c.validation, seed, "validation", options)?);
    }
    Ok(Dataset { reasoning, train, validation })
}

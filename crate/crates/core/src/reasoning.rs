//! The seven model-reasoning types: which buckets each uses, the label rule
//! that encodes it, and the ground-truth primary/secondary objects per bucket.
//!
//! "Based on Text" means class 1 iff the glyph is 'B'.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Scalar;
use crate::textbox::{enumerate_buckets, render_batch, BucketSpec, LabeledScene, ObjectKind, Text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ReasoningKind {
    SimpleNr,
    SimpleFr,
    ComplexFr,
    ComplexCr1,
    ComplexCr2,
    ComplexCr3,
    ComplexCr4,
}

/// Which feature a label rule reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cue {
    Text,
    Box1,
    Box2,
}

impl Cue {
    fn object(self, b: &BucketSpec) -> Option<ObjectKind> {
        match self {
            Cue::Text => b.text.object(),
            Cue::Box1 => b.box1.then_some(ObjectKind::Box1),
            Cue::Box2 => b.box2.then_some(ObjectKind::Box2),
        }
    }

    fn positive(self, b: &BucketSpec) -> bool {
        match self {
            Cue::Text => b.text == Text::B,
            Cue::Box1 => b.box1,
            Cue::Box2 => b.box2,
        }
    }
}

/// "If `condition` is present decide by `then`, otherwise by `otherwise`."
struct Conditional {
    condition: Cue,
    then: Cue,
    otherwise: Cue,
}

impl ReasoningKind {
    pub const ALL: [ReasoningKind; 7] = [
        ReasoningKind::SimpleNr,
        ReasoningKind::SimpleFr,
        ReasoningKind::ComplexFr,
        ReasoningKind::ComplexCr1,
        ReasoningKind::ComplexCr2,
        ReasoningKind::ComplexCr3,
        ReasoningKind::ComplexCr4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReasoningKind::SimpleNr => "simple-nr",
            ReasoningKind::SimpleFr => "simple-fr",
            ReasoningKind::ComplexFr => "complex-fr",
            ReasoningKind::ComplexCr1 => "complex-cr1",
            ReasoningKind::ComplexCr2 => "complex-cr2",
            ReasoningKind::ComplexCr3 => "complex-cr3",
            ReasoningKind::ComplexCr4 => "complex-cr4",
        }
    }

    pub fn is_simple(self) -> bool {
        matches!(self, ReasoningKind::SimpleNr | ReasoningKind::SimpleFr)
    }

    fn conditional(self) -> Option<Conditional> {
        let (condition, then, otherwise) = match self {
            ReasoningKind::ComplexCr1 => (Cue::Box2, Cue::Box1, Cue::Text),
            ReasoningKind::ComplexCr2 => (Cue::Box1, Cue::Box2, Cue::Text),
            ReasoningKind::ComplexCr3 => (Cue::Box2, Cue::Text, Cue::Box1),
            ReasoningKind::ComplexCr4 => (Cue::Box1, Cue::Text, Cue::Box2),
            _ => return None,
        };
        Some(Conditional { condition, then, otherwise })
    }

    /// Buckets whose images have a defined label under this reasoning.
    pub fn valid_buckets(self) -> Vec<BucketSpec> {
        enumerate_buckets().into_iter().filter(|b| self.is_valid(b)).collect()
    }

    pub fn is_valid(self, b: &BucketSpec) -> bool {
        match self {
            ReasoningKind::SimpleNr => b.text != Text::None,
            ReasoningKind::SimpleFr | ReasoningKind::ComplexFr => true,
            _ => {
                let c = self.conditional().expect("conditional kind");
                // the branch that decides by Text needs a glyph
                let branch = if c.condition.positive(b) { c.then } else { c.otherwise };
                branch != Cue::Text || b.text != Text::None
            }
        }
    }

    pub fn label(self, b: BucketSpec) -> Result<usize> {
        if !self.is_valid(&b) {
            return Err(Error::Domain(format!("bucket {b} is not used by {self}")));
        }
        let positive = match self {
            ReasoningKind::SimpleNr => Cue::Text.positive(&b),
            ReasoningKind::SimpleFr => b.box1,
            ReasoningKind::ComplexFr => b.box1 && b.box2,
            _ => {
                let c = self.conditional().expect("conditional kind");
                if c.condition.positive(&b) {
                    c.then.positive(&b)
                } else {
                    c.otherwise.positive(&b)
                }
            }
        };
        Ok(positive as usize)
    }

    /// Objects the verified model relies on (primary) and the other present
    /// objects (secondary) for images of bucket `b`.
    pub fn ground_truth(self, b: BucketSpec) -> Result<GroundTruth> {
        if !self.is_valid(&b) {
            return Err(Error::Domain(format!("bucket {b} is not used by {self}")));
        }
        let present: BTreeSet<ObjectKind> = b.objects().into_iter().collect();
        let mut weak_evidence = false;
        let primary: BTreeSet<ObjectKind> = match self {
            ReasoningKind::SimpleNr => Cue::Text.object(&b).into_iter().collect(),
            ReasoningKind::SimpleFr => Cue::Box1.object(&b).into_iter().collect(),
            ReasoningKind::ComplexFr => {
                let boxes: BTreeSet<_> = [Cue::Box1.object(&b), Cue::Box2.object(&b)].into_iter().flatten().collect();
                weak_evidence = boxes.len() == 1;
                boxes
            }
            _ => {
                let c = self.conditional().expect("conditional kind");
                if c.condition.positive(&b) {
                    [c.condition.object(&b), c.then.object(&b)].into_iter().flatten().collect()
                } else {
                    c.otherwise.object(&b).into_iter().collect()
                }
            }
        };
        let secondary = present.difference(&primary).copied().collect();
        Ok(GroundTruth { primary, secondary, weak_evidence })
    }
}

impl fmt::Display for ReasoningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReasoningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReasoningKind::ALL
            .into_iter()
            .find(|r| r.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown reasoning {s:?}; expected one of {}",
                    ReasoningKind::ALL.map(|r| r.name()).join(", ")
                ))
            })
    }
}

impl From<ReasoningKind> for String {
    fn from(r: ReasoningKind) -> String {
        r.name().to_string()
    }
}

impl TryFrom<String> for ReasoningKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub primary: BTreeSet<ObjectKind>,
    pub secondary: BTreeSet<ObjectKind>,
    /// Complex-FR bucket holding a single box: the model keys on the pair,
    /// so one box alone is weak evidence.
    pub weak_evidence: bool,
}

impl GroundTruth {
    /// Buckets without a primary object cannot be scored.
    pub fn has_primary(&self) -> bool {
        !self.primary.is_empty()
    }

    /// Both relevant and irrelevant objects are visible.
    pub fn is_dual_feature(&self) -> bool {
        !self.primary.is_empty() && !self.secondary.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub bucket: u8,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub overall: f64,
    pub per_bucket: Vec<BucketAccuracy>,
    pub passed: bool,
}

/// Required accuracy, overall and in every bucket.
pub const VERIFICATION_THRESHOLD: f64 = 0.99;

/// Predicted class (argmax of the logits) for every scene, in batches.
pub fn predict<T: Scalar>(net: &Network<T>, scenes: &[LabeledScene], batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(batch.max(1)) {
        let x = render_batch(chunk.iter().map(|s| &s.scene)).cast::<T>();
        let trace = net.forward_batch(&x)?;
        out.extend(trace.logits().data().chunks(2).map(|l| (l[1] > l[0]) as usize));
    }
    Ok(out)
}

/// Accuracy table from predictions; passes iff overall and every bucket reach
/// [`VERIFICATION_THRESHOLD`].
pub fn accuracy_report(scenes: &[LabeledScene], predictions: &[usize]) -> VerificationReport {
    let mut per: std::collections::BTreeMap<u8, (usize, usize)> = Default::default();
    for (s, &p) in scenes.iter().zip(predictions) {
        let e = per.entry(s.scene.bucket.id).or_default();
        e.0 += (p == s.label) as usize;
        e.1 += 1;
    }
    let per_bucket: Vec<BucketAccuracy> = per
        .into_iter()
        .map(|(bucket, (correct, total))| BucketAccuracy {
            bucket,
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
        .collect();
    let correct: usize = per_bucket.iter().map(|b| b.correct).sum();
    let total: usize = per_bucket.iter().map(|b| b.total).sum();
    let overall = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    let passed = total > 0
        && overall >= VERIFICATION_THRESHOLD
        && per_bucket.iter().all(|b| b.accuracy >= VERIFICATION_THRESHOLD);
    VerificationReport { overall, per_bucket, passed }
}

/// Checks that `net` implements the intended reasoning on held-out samples.
pub fn verify_model<T: Scalar>(net: &Network<T>, validation: &[LabeledScene]) -> Result<VerificationReport> {
    let preds = predict(net, validation, 64)?;
    Ok(accuracy_report(validation, &preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ObjectKind::*;

    fn b(text: Text, box1: bool, box2: bool) -> BucketSpec {
        BucketSpec::new(text, box1, box2)
    }

    fn set(items: &[ObjectKind]) -> BTreeSet<ObjectKind> {
        items.iter().copied().collect()
    }

    #[test]
    fn valid_bucket_counts() {
        let counts: Vec<usize> = ReasoningKind::ALL.iter().map(|r| r.valid_buckets().len()).collect();
        assert_eq!(counts, vec![8, 12, 12, 10, 10, 10, 10]);
    }

    #[test]
    fn discarded_buckets_per_conditional_type() {
        let dropped = |r: ReasoningKind| -> Vec<u8> {
            enumerate_buckets().into_iter().filter(|b| !r.is_valid(b)).map(|b| b.id).collect()
        };
        // text-free buckets: 1 (none), 4 (box1), 7 (box2), 10 (both)
        assert_eq!(dropped(ReasoningKind::SimpleNr), vec![1, 4, 7, 10]);
        assert_eq!(dropped(ReasoningKind::ComplexCr1), vec![1, 4]);
        assert_eq!(dropped(ReasoningKind::ComplexCr2), vec![1, 7]);
        assert_eq!(dropped(ReasoningKind::ComplexCr3), vec![7, 10]);
        assert_eq!(dropped(ReasoningKind::ComplexCr4), vec![4, 10]);
    }

    #[test]
    fn label_examples() {
        assert_eq!(ReasoningKind::ComplexFr.label(b(Text::A, true, true)).unwrap(), 1);
        assert_eq!(ReasoningKind::ComplexFr.label(b(Text::B, true, false)).unwrap(), 0);
        assert_eq!(ReasoningKind::ComplexCr2.label(b(Text::B, false, true)).unwrap(), 1);
        assert_eq!(ReasoningKind::ComplexCr1.label(b(Text::A, true, true)).unwrap(), 1);
        assert_eq!(ReasoningKind::ComplexCr1.label(b(Text::B, false, true)).unwrap(), 0);
        assert_eq!(ReasoningKind::ComplexCr3.label(b(Text::B, false, true)).unwrap(), 1);
        assert_eq!(ReasoningKind::ComplexCr3.label(b(Text::None, true, false)).unwrap(), 1);
        assert_eq!(ReasoningKind::ComplexCr4.label(b(Text::A, true, true)).unwrap(), 0);
        assert_eq!(ReasoningKind::SimpleNr.label(b(Text::B, false, false)).unwrap(), 1);
        assert_eq!(ReasoningKind::SimpleFr.label(b(Text::None, true, false)).unwrap(), 1);
        assert!(matches!(ReasoningKind::SimpleNr.label(b(Text::None, true, true)), Err(Error::Domain(_))));
    }

    #[test]
    fn ground_truth_examples() {
        let g = ReasoningKind::ComplexCr2.ground_truth(b(Text::B, true, true)).unwrap();
        assert_eq!((g.primary, g.secondary), (set(&[Box1, Box2]), set(&[TextB])));
        let g = ReasoningKind::SimpleFr.ground_truth(b(Text::A, true, true)).unwrap();
        assert_eq!((g.primary, g.secondary), (set(&[Box1]), set(&[TextA, Box2])));
        let g = ReasoningKind::SimpleNr.ground_truth(b(Text::A, true, false)).unwrap();
        assert_eq!((g.primary, g.secondary), (set(&[TextA]), set(&[Box1])));
        let g = ReasoningKind::ComplexCr2.ground_truth(b(Text::B, true, false)).unwrap();
        assert_eq!((g.primary, g.secondary), (set(&[Box1]), set(&[TextB])));
        let g = ReasoningKind::SimpleFr.ground_truth(b(Text::A, false, true)).unwrap();
        assert!(!g.has_primary());
        let g = ReasoningKind::ComplexFr.ground_truth(b(Text::A, false, true)).unwrap();
        assert!(g.weak_evidence && g.primary == set(&[Box2]));
        let g = ReasoningKind::ComplexCr3.ground_truth(b(Text::A, false, false)).unwrap();
        assert!(!g.has_primary());
    }

    #[test]
    fn ground_truth_partitions_present_objects() {
        for r in ReasoningKind::ALL {
            for bucket in r.valid_buckets() {
                let g = r.ground_truth(bucket).unwrap();
                assert!(g.primary.is_disjoint(&g.secondary));
                let union: BTreeSet<_> = g.primary.union(&g.secondary).copied().collect();
                assert_eq!(union, bucket.objects().into_iter().collect());
            }
        }
    }

    #[test]
    fn label_balance_under_default_counts() {
        use crate::textbox::DatasetCounts;
        for r in ReasoningKind::ALL {
            let counts = DatasetCounts::full_scale(r);
            let (mut pos, mut total) = (0usize, 0usize);
            for c in &counts.buckets {
                let l = r.label(BucketSpec::from_id(c.bucket).unwrap()).unwrap();
                pos += l * c.train;
                total += c.train;
            }
            let f = pos as f64 / total as f64;
            assert!((0.45..=0.55).contains(&f), "{r}: {f}");
        }
    }

    fn swap_boxes(bk: BucketSpec) -> BucketSpec {
        BucketSpec::new(bk.text, bk.box2, bk.box1)
    }

    #[test]
    fn conditional_types_mirror_under_box_swap() {
        for (a, bb) in [
            (ReasoningKind::ComplexCr1, ReasoningKind::ComplexCr2),
            (ReasoningKind::ComplexCr3, ReasoningKind::ComplexCr4),
        ] {
            for bucket in enumerate_buckets() {
                let s = swap_boxes(bucket);
                assert_eq!(a.is_valid(&bucket), bb.is_valid(&s));
                if a.is_valid(&bucket) {
                    assert_eq!(a.label(bucket).unwrap(), bb.label(s).unwrap());
                }
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for r in ReasoningKind::ALL {
            assert_eq!(r.name().parse::<ReasoningKind>().unwrap(), r);
        }
        assert!("simple".parse::<ReasoningKind>().is_err());
    }

    #[test]
    fn accuracy_report_thresholds() {
        use crate::textbox::{generate_bucket, RenderOptions};
        let r = ReasoningKind::ComplexFr;
        let mut scenes = Vec::new();
        for bk in r.valid_buckets() {
            scenes.extend(generate_bucket(r, bk, 4, 1, "validation", RenderOptions::default()).unwrap());
        }
        let perfect: Vec<usize> = scenes.iter().map(|s| s.label).collect();
        let rep = accuracy_report(&scenes, &perfect);
        assert!(rep.passed && rep.per_bucket.iter().all(|b| b.accuracy == 1.0));
        let constant = vec![0; scenes.len()];
        let rep = accuracy_report(&scenes, &constant);
        assert!(!rep.passed);
        assert!((rep.overall - 0.75).abs() < 1e-12); // 9 of 12 buckets are negative
    }
}

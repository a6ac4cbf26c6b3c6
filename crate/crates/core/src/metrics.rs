//! Scores that compare a reduced attribution map with the ground-truth
//! regions, and their aggregation over images, buckets and object counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoning::{GroundTruth, ReasoningKind};
use crate::saliency::Method;
use crate::textbox::{ObjectKind, PixelMask};

#[derive(Clone, Debug, PartialEq)]
pub struct RegionPartition {
    pub primary: PixelMask,
    pub secondary: PixelMask,
}

impl RegionPartition {
    pub fn new(primary: PixelMask, secondary: PixelMask) -> Result<Self> {
        if (primary.height(), primary.width()) != (secondary.height(), secondary.width()) {
            return Err(Error::config("primary and secondary masks differ in size"));
        }
        if primary.intersects(&secondary) {
            return Err(Error::config("primary and secondary regions overlap"));
        }
        Ok(RegionPartition { primary, secondary })
    }

    /// Unions of the object bounding boxes named by the ground truth.
    pub fn from_ground_truth(gt: &GroundTruth, masks: &BTreeMap<ObjectKind, PixelMask>) -> Result<Self> {
        let any = masks.values().next().ok_or_else(|| Error::config("image has no object masks"))?;
        let (h, w) = (any.height(), any.width());
        let union = |kinds: &std::collections::BTreeSet<ObjectKind>| -> Result<PixelMask> {
            let mut m = PixelMask::empty(h, w);
            for k in kinds {
                let part = masks.get(k).ok_or_else(|| Error::config(format!("no mask for {}", k.name())))?;
                m = m.union(part);
            }
            Ok(m)
        };
        RegionPartition::new(union(&gt.primary)?, union(&gt.secondary)?)
    }

    fn pixels(&self) -> usize {
        self.primary.height() * self.primary.width()
    }
}

/// Gaussian blur applied before top-K thresholding. Reflect padding that
/// does not repeat the edge pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub sigma: f64,
    /// Kernel size is `2 * radius + 1`.
    pub radius: usize,
}

impl Default for BlurParams {
    fn default() -> Self {
        BlurParams { sigma: 1.0, radius: 2 }
    }
}

impl BlurParams {
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius as isize;
        let mut k = Vec::with_capacity((2 * self.radius + 1).pow(2));
        for dy in -r..=r {
            for dx in -r..=r {
                k.push((-((dx * dx + dy * dy) as f64) / (2.0 * self.sigma * self.sigma)).exp());
            }
        }
        let s: f64 = k.iter().sum();
        k.iter().map(|v| v / s).collect()
    }
}

fn check_map(map: &[f64], regions: &RegionPartition) -> Result<f64> {
    if map.len() != regions.pixels() {
        return Err(Error::config(format!("map has {} pixels, regions {}", map.len(), regions.pixels())));
    }
    if map.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::config("attribution map must be finite and nonnegative"));
    }
    let total: f64 = map.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateAttribution);
    }
    Ok(total)
}

fn mass(map: &[f64], mask: &PixelMask) -> f64 {
    map.iter().zip(mask.bits()).filter(|(_, &b)| b).map(|(v, _)| v).sum()
}

/// Fractions of the normalized map inside the primary and secondary regions.
pub fn afl(map: &[f64], regions: &RegionPartition) -> Result<(f64, f64)> {
    let total = check_map(map, regions)?;
    Ok((mass(map, &regions.primary) / total, mass(map, &regions.secondary) / total))
}

/// Mean normalized value over each region; `None` for an empty region.
pub fn mafl(map: &[f64], regions: &RegionPartition) -> Result<(Option<f64>, Option<f64>)> {
    let total = check_map(map, regions)?;
    let mean = |m: &PixelMask| {
        let n = m.count();
        (n > 0).then(|| mass(map, m) / total / n as f64)
    };
    Ok((mean(&regions.primary), mean(&regions.secondary)))
}

pub fn gaussian_blur(map: &[f64], height: usize, width: usize, blur: &BlurParams) -> Vec<f64> {
    let kernel = blur.kernel();
    let r = blur.radius as isize;
    let side = 2 * r + 1;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as usize
    };
    let mut out = vec![0.0; height * width];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let row = reflect(y + dy, height) * width;
                for dx in -r..=r {
                    acc += kernel[((dy + r) * side + dx + r) as usize] * map[row + reflect(x + dx, width)];
                }
            }
            out[y as usize * width + x as usize] = acc;
        }
    }
    out
}

/// Indices of the `k` largest values; equal values go to the earlier raster index.
pub fn top_k(values: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mask = vec![false; values.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

fn set_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IOU of the top-K mask of the blurred map against each region, K = primary size.
pub fn iou(map: &[f64], regions: &RegionPartition, blur: &BlurParams) -> Result<(f64, f64)> {
    let total = check_map(map, regions)?;
    let normalized: Vec<f64> = map.iter().map(|v| v / total).collect();
    let (h, w) = (regions.primary.height(), regions.primary.width());
    let blurred = gaussian_blur(&normalized, h, w, blur);
    let mask = top_k(&blurred, regions.primary.count());
    Ok((set_iou(&mask, regions.primary.bits()), set_iou(&mask, regions.secondary.bits())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub reasoning: ReasoningKind,
    pub method: Method,
    pub bucket: u8,
    pub image: usize,
    pub pafl: f64,
    pub safl: f64,
    /// Mass outside both regions.
    pub background: f64,
    pub pmafl: f64,
    pub smafl: Option<f64>,
    pub piou: f64,
    pub siou: f64,
    pub object_count: usize,
    pub dual_feature: bool,
    pub weak_evidence: bool,
}

/// Bucket-level facts a record carries along.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordKey {
    pub reasoning: ReasoningKind,
    pub method: Method,
    pub bucket: u8,
    pub image: usize,
    pub object_count: usize,
    pub dual_feature: bool,
    pub weak_evidence: bool,
}

/// All six scores for one map.
pub fn score(map: &[f64], regions: &RegionPartition, blur: &BlurParams, key: RecordKey) -> Result<MetricRecord> {
    if regions.primary.is_empty() {
        return Err(Error::config("cannot score a bucket without a primary region"));
    }
    let (pafl, safl) = afl(map, regions)?;
    let (pmafl, smafl) = mafl(map, regions)?;
    let (piou, siou) = iou(map, regions, blur)?;
    Ok(MetricRecord {
        reasoning: key.reasoning,
        method: key.method,
        bucket: key.bucket,
        image: key.image,
        pafl,
        safl,
        background: (1.0 - pafl - safl).max(0.0),
        pmafl: pmafl.expect("primary region is nonempty"),
        smafl,
        piou,
        siou,
        object_count: key.object_count,
        dual_feature: key.dual_feature,
        weak_evidence: key.weak_evidence,
    })
}

/// Population mean and standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub pafl: Stat,
    pub safl: Stat,
    pub background: Stat,
    pub pmafl: Stat,
    pub smafl: Option<Stat>,
    pub piou: Stat,
    pub siou: Stat,
}

impl MetricStats {
    fn of(rows: &[MetricStatsRow]) -> MetricStats {
        let col = |f: fn(&MetricStatsRow) -> f64| Stat::of(&rows.iter().map(f).collect::<Vec<_>>()).unwrap_or_default();
        let smafl: Vec<f64> = rows.iter().filter_map(|r| r.smafl).collect();
        MetricStats {
            pafl: col(|r| r.pafl),
            safl: col(|r| r.safl),
            background: col(|r| r.background),
            pmafl: col(|r| r.pmafl),
            smafl: Stat::of(&smafl),
            piou: col(|r| r.piou),
            siou: col(|r| r.siou),
        }
    }
}

struct MetricStatsRow {
    pafl: f64,
    safl: f64,
    background: f64,
    pmafl: f64,
    smafl: Option<f64>,
    piou: f64,
    siou: f64,
}

impl From<&MetricRecord> for MetricStatsRow {
    fn from(r: &MetricRecord) -> Self {
        MetricStatsRow {
            pafl: r.pafl,
            safl: r.safl,
            background: r.background,
            pmafl: r.pmafl,
            smafl: r.smafl,
            piou: r.piou,
            siou: r.siou,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAggregate {
    pub bucket: u8,
    pub images: usize,
    pub object_count: usize,
    pub dual_feature: bool,
    pub weak_evidence: bool,
    pub stats: MetricStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub reasoning: ReasoningKind,
    pub method: Method,
    pub images: usize,
    /// Maps excluded because they had no positive mass.
    pub degenerate: usize,
    pub buckets: Vec<BucketAggregate>,
    /// Every bucket weighted equally; `std` is across bucket means.
    pub mean_by_bucket: MetricStats,
    /// Every image weighted equally.
    pub mean_by_image: MetricStats,
    pub min_bucket_pafl: f64,
    /// Fraction of dual-feature buckets with mean PAFL above 0.5.
    pub success_fraction: f64,
    /// Same, leaving out buckets whose primary evidence is weak.
    pub success_fraction_strong: Option<f64>,
    /// Fraction of dual-feature buckets with mean SAFL above mean PAFL.
    pub wrong_focus_fraction: f64,
    pub wrong_focus: bool,
}

pub const SUCCESS_THRESHOLD: f64 = 0.5;

/// Aggregates records per (reasoning, method). `degenerate` counts excluded
/// maps per (reasoning, method).
pub fn aggregate(
    records: &[MetricRecord],
    degenerate: &BTreeMap<(ReasoningKind, Method), usize>,
) -> Vec<AggregateRecord> {
    let mut groups: BTreeMap<(ReasoningKind, Method), BTreeMap<u8, Vec<&MetricRecord>>> = BTreeMap::new();
    for r in records {
        groups.entry((r.reasoning, r.method)).or_default().entry(r.bucket).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((reasoning, method), buckets)| {
            let buckets: Vec<BucketAggregate> = buckets
                .into_iter()
                .map(|(bucket, rs)| {
                    let rows: Vec<MetricStatsRow> = rs.iter().map(|r| MetricStatsRow::from(*r)).collect();
                    BucketAggregate {
                        bucket,
                        images: rs.len(),
                        object_count: rs[0].object_count,
                        dual_feature: rs[0].dual_feature,
                        weak_evidence: rs[0].weak_evidence,
                        stats: MetricStats::of(&rows),
                    }
                })
                .collect();
            let bucket_rows: Vec<MetricStatsRow> = buckets
                .iter()
                .map(|b| MetricStatsRow {
                    pafl: b.stats.pafl.mean,
                    safl: b.stats.safl.mean,
                    background: b.stats.background.mean,
                    pmafl: b.stats.pmafl.mean,
                    smafl: b.stats.smafl.map(|s| s.mean),
                    piou: b.stats.piou.mean,
                    siou: b.stats.siou.mean,
                })
                .collect();
            let image_rows: Vec<MetricStatsRow> = records
                .iter()
                .filter(|r| r.reasoning == reasoning && r.method == method)
                .map(MetricStatsRow::from)
                .collect();
            let dual: Vec<&BucketAggregate> = buckets.iter().filter(|b| b.dual_feature).collect();
            let judged: Vec<&BucketAggregate> = if dual.is_empty() { buckets.iter().collect() } else { dual };
            let fraction = |set: &[&BucketAggregate], pred: &dyn Fn(&BucketAggregate) -> bool| {
                set.iter().filter(|b| pred(b)).count() as f64 / set.len() as f64
            };
            let success = |b: &BucketAggregate| b.stats.pafl.mean > SUCCESS_THRESHOLD;
            let strong: Vec<&BucketAggregate> = judged.iter().copied().filter(|b| !b.weak_evidence).collect();
            let wrong_focus_fraction = fraction(&judged, &|b| b.stats.safl.mean > b.stats.pafl.mean);
            AggregateRecord {
                reasoning,
                method,
                images: image_rows.len(),
                degenerate: degenerate.get(&(reasoning, method)).copied().unwrap_or(0),
                min_bucket_pafl: buckets.iter().map(|b| b.stats.pafl.mean).fold(f64::INFINITY, f64::min),
                success_fraction: fraction(&judged, &success),
                success_fraction_strong: (!strong.is_empty()).then(|| fraction(&strong, &success)),
                wrong_focus_fraction,
                wrong_focus: wrong_focus_fraction > 0.5,
                mean_by_bucket: MetricStats::of(&bucket_rows),
                mean_by_image: MetricStats::of(&image_rows),
                buckets,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub reasoning: ReasoningKind,
    pub method: Method,
    pub objects: usize,
    pub buckets: usize,
    pub pafl: f64,
    pub safl: f64,
}

/// Bucket-mean PAFL and SAFL grouped by the number of visible objects, every
/// bucket weighted equally.
pub fn saturation_curve(aggregates: &[AggregateRecord]) -> Vec<SaturationPoint> {
    let mut out = Vec::new();
    for agg in aggregates {
        let mut by_count: BTreeMap<usize, Vec<&BucketAggregate>> = BTreeMap::new();
        for b in &agg.buckets {
            by_count.entry(b.object_count).or_default().push(b);
        }
        for (objects, bs) in by_count {
            let n = bs.len() as f64;
            out.push(SaturationPoint {
                reasoning: agg.reasoning,
                method: agg.method,
                objects,
                buckets: bs.len(),
                pafl: bs.iter().map(|b| b.stats.pafl.mean).sum::<f64>() / n,
                safl: bs.iter().map(|b| b.stats.safl.mean).sum::<f64>() / n,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn regions() -> RegionPartition {
        RegionPartition::new(PixelMask::rect(64, 64, 10, 10, 10, 10), PixelMask::rect(64, 64, 40, 40, 4, 4)).unwrap()
    }

    fn key(bucket: u8, objects: usize, dual: bool) -> RecordKey {
        RecordKey {
            reasoning: ReasoningKind::SimpleFr,
            method: Method::Gradient,
            bucket,
            image: 0,
            object_count: objects,
            dual_feature: dual,
            weak_evidence: false,
        }
    }

    fn record(bucket: u8, pafl: f64, safl: f64, objects: usize) -> MetricRecord {
        MetricRecord {
            reasoning: ReasoningKind::SimpleFr,
            method: Method::Gradient,
            bucket,
            image: 0,
            pafl,
            safl,
            background: 1.0 - pafl - safl,
            pmafl: 0.0,
            smafl: None,
            piou: 0.0,
            siou: 0.0,
            object_count: objects,
            dual_feature: true,
            weak_evidence: false,
        }
    }

    #[test]
    fn all_mass_in_primary() {
        let regions = regions();
        let map: Vec<f64> = regions.primary.bits().iter().map(|&b| if b { 2.0 } else { 0.0 }).collect();
        assert_eq!(afl(&map, &regions).unwrap(), (1.0, 0.0));
        let (piou, siou) = iou(&map, &regions, &BlurParams { sigma: 1.0, radius: 0 }).unwrap();
        assert_eq!((piou, siou), (1.0, 0.0));
    }

    #[test]
    fn uniform_map_gives_area_fraction() {
        let regions = regions();
        let map = vec![1.0; 4096];
        let (p, s) = afl(&map, &regions).unwrap();
        assert!((p - 100.0 / 4096.0).abs() < 1e-15);
        assert!((s - 16.0 / 4096.0).abs() < 1e-15);
        let (pm, sm) = mafl(&map, &regions).unwrap();
        assert!((pm.unwrap() - sm.unwrap()).abs() < 1e-18);
    }

    #[test]
    fn single_primary_pixel_mafl() {
        let regions = regions();
        let mut map = vec![0.0; 4096];
        map[15 * 64 + 15] = 3.0;
        assert_eq!(mafl(&map, &regions).unwrap(), (Some(0.01), Some(0.0)));
        let no_secondary = RegionPartition::new(regions.primary.clone(), PixelMask::empty(64, 64)).unwrap();
        assert_eq!(mafl(&map, &no_secondary).unwrap().1, None);
    }

    #[test]
    fn disjoint_mask_gives_zero_iou() {
        let regions = regions();
        let map: Vec<f64> = (0..4096).map(|i| if (50 * 64..50 * 64 + 100).contains(&i) { 1.0 } else { 0.0 }).collect();
        let (piou, _) = iou(&map, &regions, &BlurParams { sigma: 1.0, radius: 0 }).unwrap();
        assert_eq!(piou, 0.0);
    }

    #[test]
    fn zero_map_is_degenerate() {
        assert!(matches!(afl(&[0.0; 4096], &regions()), Err(Error::DegenerateAttribution)));
        assert!(matches!(iou(&[0.0; 4096], &regions(), &BlurParams::default()), Err(Error::DegenerateAttribution)));
    }

    #[test]
    fn ties_resolve_in_raster_order() {
        let mask = top_k(&[1.0, 2.0, 1.0, 1.0, 2.0], 3);
        assert_eq!(mask, vec![true, true, false, false, true]);
        let flat = top_k(&[0.5; 10], 4);
        assert_eq!(flat, (0..10).map(|i| i < 4).collect::<Vec<_>>());
    }

    #[test]
    fn blur_preserves_constant_maps_and_mass_center() {
        let out = gaussian_blur(&vec![2.0; 36], 6, 6, &BlurParams::default());
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let mut spike = vec![0.0; 81];
        spike[40] = 1.0;
        let out = gaussian_blur(&spike, 9, 9, &BlurParams::default());
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(top_k(&out, 1)[40]);
    }

    #[test]
    fn overlapping_regions_are_rejected() {
        let a = PixelMask::rect(8, 8, 0, 0, 4, 4);
        let b = PixelMask::rect(8, 8, 3, 3, 2, 2);
        assert!(RegionPartition::new(a, b).is_err());
    }

    #[test]
    fn random_maps_respect_bounds() {
        let mut rng = crate::seed::rng_for(1, &["metrics"]);
        let regions = regions();
        for _ in 0..50 {
            let map: Vec<f64> = (0..4096).map(|_| rng.random::<f64>().powi(4)).collect();
            let r = score(&map, &regions, &BlurParams::default(), key(12, 3, true)).unwrap();
            assert!(r.pafl + r.safl <= 1.0 + 1e-9);
            for v in [r.pafl, r.safl, r.pmafl, r.piou, r.siou, r.background] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(r.pafl <= 0.5 || r.pafl > r.safl);
        }
    }

    #[test]
    fn success_fraction_examples() {
        let one = aggregate(&[record(12, 0.8, 0.1, 3), record(12, 0.8, 0.1, 3)], &BTreeMap::new());
        assert_eq!(one[0].success_fraction, 1.0);
        let two = aggregate(&[record(11, 0.6, 0.1, 2), record(12, 0.4, 0.5, 3)], &BTreeMap::new());
        assert_eq!(two[0].success_fraction, 0.5);
        assert_eq!(two[0].wrong_focus_fraction, 0.5);
        assert!(!two[0].wrong_focus);
        assert_eq!(two[0].min_bucket_pafl, 0.4);
    }

    #[test]
    fn stats_match_loop_oracle() {
        let mut rng = crate::seed::rng_for(2, &["agg"]);
        let mut recs = Vec::new();
        for b in [2u8, 3, 5, 6] {
            for i in 0..(3 + b as usize) {
                let p: f64 = rng.random_range(0.0..0.7);
                let mut r = record(b, p, rng.random_range(0.0..(1.0 - p)), 1 + (b as usize % 3));
                r.image = i;
                recs.push(r);
            }
        }
        let agg = &aggregate(&recs, &BTreeMap::new())[0];
        let mut bucket_means = Vec::new();
        for b in &agg.buckets {
            let vals: Vec<f64> = recs.iter().filter(|r| r.bucket == b.bucket).map(|r| r.pafl).collect();
            let mut sum = 0.0;
            for v in &vals {
                sum += v;
            }
            let mean = sum / vals.len() as f64;
            let mut ss = 0.0;
            for v in &vals {
                ss += (v - mean) * (v - mean);
            }
            assert!((b.stats.pafl.mean - mean).abs() < 1e-12);
            assert!((b.stats.pafl.std - (ss / vals.len() as f64).sqrt()).abs() < 1e-12);
            bucket_means.push(mean);
        }
        let overall = bucket_means.iter().sum::<f64>() / bucket_means.len() as f64;
        assert!((agg.mean_by_bucket.pafl.mean - overall).abs() < 1e-12);
        let min = bucket_means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(agg.min_bucket_pafl, min);
        assert!(agg.min_bucket_pafl <= agg.mean_by_bucket.pafl.mean);
        let by_image = recs.iter().map(|r| r.pafl).sum::<f64>() / recs.len() as f64;
        assert!((agg.mean_by_image.pafl.mean - by_image).abs() < 1e-12);
    }

    #[test]
    fn saturation_groups_by_object_count() {
        let recs = [record(2, 0.9, 0.0, 1), record(5, 0.7, 0.2, 2), record(6, 0.6, 0.2, 2), record(12, 0.4, 0.4, 3)];
        let curve = saturation_curve(&aggregate(&recs, &BTreeMap::new()));
        let p: Vec<(usize, f64)> = curve.iter().map(|c| (c.objects, c.pafl)).collect();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0], (1, 0.9));
        assert!((p[1].1 - 0.65).abs() < 1e-12);
        assert!(p[0].1 > p[1].1 && p[1].1 > p[2].1);
        let flat = saturation_curve(&aggregate(
            &[record(2, 0.5, 0.1, 1), record(5, 0.5, 0.1, 2), record(12, 0.5, 0.1, 3)],
            &BTreeMap::new(),
        ));
        assert!(flat.iter().all(|c| c.pafl == 0.5 && c.safl == 0.1));
    }
}

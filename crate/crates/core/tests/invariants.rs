use proptest::prelude::*;
use smerf_core::metrics::{afl, iou, mafl, BlurParams, RegionPartition};
use smerf_core::reasoning::ReasoningKind;
use smerf_core::saliency::channel_reduce;
use smerf_core::seed::derive_seed;
use smerf_core::tensor::Tensor;
use smerf_core::textbox::{generate_bucket, PixelMask, RenderOptions};

const SIDE: usize = 8;

fn partition() -> impl Strategy<Value = RegionPartition> {
    proptest::collection::vec(0u8..3, SIDE * SIDE).prop_filter_map("primary must be non-empty", |cells| {
        let primary = PixelMask::from_bits(SIDE, SIDE, cells.iter().map(|&c| c == 1).collect()).ok()?;
        let secondary = PixelMask::from_bits(SIDE, SIDE, cells.iter().map(|&c| c == 2).collect()).ok()?;
        if primary.is_empty() {
            return None;
        }
        RegionPartition::new(primary, secondary).ok()
    })
}

fn positive_map() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..10.0, SIDE * SIDE).prop_filter("needs mass", |m| m.iter().sum::<f64>() > 1e-6)
}

fn kind() -> impl Strategy<Value = ReasoningKind> {
    proptest::sample::select(ReasoningKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn afl_is_a_sub_partition_of_unit_mass(map in positive_map(), regions in partition()) {
        let (p, s) = afl(&map, &regions).unwrap();
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&s));
        prop_assert!(p + s <= 1.0 + 1e-12);
    }

    #[test]
    fn metrics_ignore_positive_rescaling(map in positive_map(), regions in partition(), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = map.iter().map(|v| v * c).collect();
        let (p, s) = afl(&map, &regions).unwrap();
        let (q, t) = afl(&scaled, &regions).unwrap();
        prop_assert!((p - q).abs() < 1e-12 && (s - t).abs() < 1e-12);
        let blur = BlurParams::default();
        prop_assert_eq!(iou(&map, &regions, &blur).unwrap(), iou(&scaled, &regions, &blur).unwrap());
    }

    #[test]
    fn mafl_times_area_is_afl(map in positive_map(), regions in partition()) {
        let (p, s) = afl(&map, &regions).unwrap();
        let (pm, sm) = mafl(&map, &regions).unwrap();
        prop_assert!((pm.unwrap() * regions.primary.count() as f64 - p).abs() < 1e-12);
        match sm {
            Some(v) => prop_assert!((v * regions.secondary.count() as f64 - s).abs() < 1e-12),
            None => prop_assert!(regions.secondary.is_empty()),
        }
    }

    #[test]
    fn iou_stays_in_unit_interval(map in positive_map(), regions in partition()) {
        let (pi, si) = iou(&map, &regions, &BlurParams::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&pi) && (0.0..=1.0).contains(&si));
    }

    #[test]
    fn channel_reduce_is_nonnegative(v in proptest::collection::vec(-3.0f64..3.0, 3 * 4 * 4)) {
        let t = Tensor::from_vec(&[3, 4, 4], v).unwrap();
        let r = channel_reduce(&t);
        prop_assert_eq!(r.len(), 16);
        prop_assert!(r.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn scenes_follow_their_bucket(r in kind(), pick in 0usize..12, seed in any::<u64>()) {
        let buckets = r.valid_buckets();
        let b = buckets[pick % buckets.len()];
        let scenes = generate_bucket(r, b, 2, seed, "prop", RenderOptions::default()).unwrap();
        let gt = r.ground_truth(b).unwrap();
        prop_assert!(gt.primary.is_disjoint(&gt.secondary));
        for s in &scenes {
            prop_assert_eq!(s.label, r.label(b).unwrap());
            let img = s.render();
            prop_assert!(img.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let masks: Vec<&PixelMask> = img.region_masks.values().collect();
            prop_assert_eq!(masks.len(), s.scene.placements.len());
            for (i, a) in masks.iter().enumerate() {
                prop_assert!(!a.is_empty());
                for other in &masks[i + 1..] {
                    prop_assert!(!a.intersects(other));
                }
            }
            if gt.has_primary() {
                prop_assert!(RegionPartition::from_ground_truth(&gt, &img.region_masks).is_ok());
            }
        }
    }

    #[test]
    fn generation_is_a_function_of_the_seed(r in kind(), seed in any::<u64>()) {
        let b = r.valid_buckets()[0];
        let a = generate_bucket(r, b, 3, seed, "prop", RenderOptions::default()).unwrap();
        let c = generate_bucket(r, b, 3, seed, "prop", RenderOptions::default()).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn derived_seeds_separate_labels(master in any::<u64>(), x in "[a-z]{1,6}", y in "[a-z]{1,6}") {
        prop_assert_eq!(derive_seed(master, &[&x]), derive_seed(master, &[&x]));
        if x != y {
            prop_assert_ne!(derive_seed(master, &[&x]), derive_seed(master, &[&y]));
        }
    }
}

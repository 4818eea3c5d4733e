use std::collections::BTreeSet;

use proptest::prelude::*;

use ccc_core::dataset::{kfold_split, ClusterLabel, Manifest, MultiChannelRecord, Phenotype};
use ccc_core::eval::{
    classification_metrics, mask_iou, map_range, ConfusionCounts, ImageEval, IouKind,
};
use ccc_core::imaging::{
    mask_to_polygons, morphological_open, rasterize_polygon, rgb_to_hsv, threshold_hsv,
    BinaryMask, HsvRange, ImageRgb,
};
use ccc_core::inference::InstancePrediction;
use ccc_core::phenotype::{assess_channel, extract_stain_region, overlap_percent, ChannelState, Stain};
use ccc_core::preprocess::{augment, pad_to_square, AugmentParams, PAD_GRAY};

fn hsv_reference(rgb: [u8; 3]) -> [u8; 3] {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let d = max - r.min(g).min(b);
    let round = |x: f64| (x + 0.5 + 1e-9).floor();
    let s = if max == 0.0 { 0.0 } else { round(255.0 * d / max) };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    [(round(h / 2.0) % 180.0) as u8, s as u8, max as u8]
}

fn mask_strategy(max_side: u32) -> impl Strategy<Value = BinaryMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), (w * h) as usize)
            .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
    })
}

fn mask_pair(max_side: u32) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)).prop_map(
            move |(a, b)| (BinaryMask::from_bits(w, h, a).unwrap(), BinaryMask::from_bits(w, h, b).unwrap()),
        )
    })
}

fn image_strategy(max_side: u32) -> impl Strategy<Value = ImageRgb> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h * 3) as usize)
            .prop_map(move |data| ImageRgb::new(w, h, data).unwrap())
    })
}

fn rect_mask(w: u32, r: (u32, u32, u32, u32)) -> BinaryMask {
    let (x0, y0, rw, rh) = r;
    BinaryMask::from_fn(w, w, |x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hsv_matches_float_reference(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let p = rgb_to_hsv([r, g, b]);
        prop_assert_eq!([p.h, p.s, p.v], hsv_reference([r, g, b]));
        prop_assert!(p.h < 180);
    }

    #[test]
    fn full_hsv_range_sets_every_bit(img in image_strategy(24)) {
        prop_assert!(threshold_hsv(&img, &HsvRange::FULL).bits().iter().all(|&b| b));
    }

    #[test]
    fn intersection_area_bounded((a, b) in mask_pair(20)) {
        let i = a.intersection(&b).unwrap().area();
        prop_assert!(i <= a.area().min(b.area()));
        prop_assert_eq!(i, a.intersection_area(&b).unwrap());
        prop_assert_eq!(a.union(&b).unwrap().area() + i, a.area() + b.area());
    }

    #[test]
    fn opening_is_idempotent(m in mask_strategy(24), r in 0u32..3) {
        let once = morphological_open(&m, r);
        prop_assert_eq!(morphological_open(&once, r), once.clone());
        prop_assert!(once.difference(&m).unwrap().is_empty());
    }

    #[test]
    fn contour_round_trip(m in mask_strategy(20)) {
        let opened = morphological_open(&m, 1);
        let (w, h) = opened.dims();
        let mut back = BinaryMask::new(w, h);
        for poly in mask_to_polygons(&opened) {
            back = back.union(&rasterize_polygon(&poly, w, h)).unwrap();
        }
        // Holes are filled, so the traced outline covers the mask.
        prop_assert!(opened.difference(&back).unwrap().is_empty());
        let filled_iou = mask_iou(&opened, &back).unwrap();
        let holes = back.area() - opened.area();
        prop_assert!(holes > 0 || filled_iou >= 0.99, "IoU {}", filled_iou);
    }

    #[test]
    fn metrics_match_recount(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
        let c = ConfusionCounts::from_pairs(pairs.iter().copied());
        prop_assert_eq!(c.total(), pairs.len() as u64);
        let tp = pairs.iter().filter(|&&(t, p)| t && p).count() as f64;
        let pp = pairs.iter().filter(|&&(_, p)| p).count() as f64;
        let ap = pairs.iter().filter(|&&(t, _)| t).count() as f64;
        let agree = pairs.iter().filter(|&&(t, p)| t == p).count() as f64;
        match classification_metrics(&c) {
            Ok(m) => {
                let (prec, rec) = (tp / pp, tp / ap);
                prop_assert!((m.accuracy - agree / pairs.len() as f64).abs() <= 1e-12);
                prop_assert!((m.precision - prec).abs() <= 1e-12);
                prop_assert!((m.recall - rec).abs() <= 1e-12);
                prop_assert!((m.f1 - 2.0 * prec * rec / (prec + rec)).abs() <= 1e-12);
            }
            Err(_) => prop_assert!(pp == 0.0 || ap == 0.0 || tp == 0.0),
        }
    }

    #[test]
    fn ap_non_increasing_in_threshold(
        gts in prop::collection::vec((0u32..30, 0u32..30, 3u32..12, 3u32..12), 1..4),
        preds in prop::collection::vec(((0u32..30, 0u32..30, 3u32..12, 3u32..12), 0.0f64..1.0), 0..6),
    ) {
        let images = [ImageEval {
            predictions: preds.iter().filter_map(|&(r, c)| InstancePrediction::from_mask(rect_mask(48, r), c, 0)).collect(),
            ground_truth: gts.iter().map(|&r| rect_mask(48, r)).collect(),
        }];
        let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for kind in [IouKind::Mask, IouKind::Box] {
            let r = map_range(&images, &thresholds, kind).unwrap();
            for w in r.per_threshold.windows(2) {
                prop_assert!(w[1].ap <= w[0].ap, "{:?}: {} then {}", kind, w[0].ap, w[1].ap);
            }
            prop_assert!(r.per_threshold.iter().all(|a| (0.0..=1.0).contains(&a.ap)));
        }
    }

    #[test]
    fn stain_area_non_increasing_in_v_x(img in image_strategy(24), lo in 0u8..=255, hi in 0u8..=255) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        for stain in [Stain::Cd61, Stain::Cd45] {
            let raw_lo = threshold_hsv(&img, &stain.range(lo));
            let raw_hi = threshold_hsv(&img, &stain.range(hi));
            prop_assert!(raw_hi.difference(&raw_lo).unwrap().is_empty());
            // Opening is increasing, so the nesting survives it.
            prop_assert!(extract_stain_region(&img, stain, hi).area() <= extract_stain_region(&img, stain, lo).area());
        }
    }

    #[test]
    fn valid_state_monotone_in_tau((cluster, stain) in mask_pair(16), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        prop_assume!(!cluster.is_empty());
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let at = |t| assess_channel(&cluster, &stain, Stain::Cd61, t, 0).unwrap().state;
        if at(hi) == ChannelState::Valid {
            prop_assert_eq!(at(lo), ChannelState::Valid);
        }
    }

    #[test]
    fn overlap_invariant_under_pixel_permutation(
        (cluster, stain) in mask_pair(12),
        seed in any::<u64>(),
    ) {
        prop_assume!(!cluster.is_empty());
        let (w, h) = cluster.dims();
        let n = (w * h) as usize;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            perm.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let permute = |m: &BinaryMask| {
            BinaryMask::from_bits(w, h, perm.iter().map(|&j| m.bits()[j]).collect()).unwrap()
        };
        let a = overlap_percent(&cluster, &stain).unwrap();
        let b = overlap_percent(&permute(&cluster), &permute(&stain)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn padding_preserves_content(img in image_strategy(40)) {
        let (w, h) = img.dims();
        let sq = pad_to_square(&img, PAD_GRAY);
        let side = w.max(h);
        prop_assert_eq!(sq.dims(), (side, side));
        let (l, t) = ((side - w) / 2, (side - h) / 2);
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(sq.pixel(x + l, y + t), img.pixel(x, y));
            }
        }
        let gray = sq.pixels().filter(|&p| p == PAD_GRAY).count() as u32;
        prop_assert!(gray >= side * side - w * h);
    }

    #[test]
    fn augment_preserves_dims_and_is_seeded(img in image_strategy(32), seed in any::<u64>()) {
        let p = AugmentParams::default().with_seed(seed);
        let a = augment(&img, &p);
        prop_assert_eq!(a.dims(), img.dims());
        prop_assert_eq!(a, augment(&img, &p));
        prop_assert_eq!(augment(&img, &AugmentParams::identity()), img);
    }

    #[test]
    fn kfold_partitions_and_stratifies(n_pos in 5usize..60, n_neg in 5usize..60, k in 2usize..6, seed in any::<u64>()) {
        let records: Vec<MultiChannelRecord> = (0..n_pos + n_neg)
            .map(|i| MultiChannelRecord::conventional(
                &format!("r{i}"),
                if i < n_pos { ClusterLabel::Cluster } else { ClusterLabel::NonCluster },
            ))
            .collect();
        let split = kfold_split(&records, k, seed).unwrap();
        let mut seen = BTreeSet::new();
        for f in 0..k {
            for id in split.validation_ids(f) {
                prop_assert!(seen.insert(id.to_string()), "{} in two folds", id);
            }
            prop_assert_eq!(split.train_ids(f).len() + split.validation_ids(f).len(), records.len());
        }
        prop_assert_eq!(seen.len(), records.len());
        let sizes = split.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for label in [ClusterLabel::Cluster, ClusterLabel::NonCluster] {
            let mut per = vec![0usize; k];
            for r in records.iter().filter(|r| r.cluster_label == label) {
                per[split.fold_of(&r.id).unwrap()] += 1;
            }
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(kfold_split(&records, k, seed).unwrap(), split);
    }

    #[test]
    fn manifest_round_trips(n in 1usize..20, seed in any::<u64>()) {
        let records: Vec<MultiChannelRecord> = (0..n)
            .map(|i| {
                let mut r = MultiChannelRecord::conventional(
                    &format!("m{seed:x}_{i}"),
                    if (seed >> i) & 1 == 1 { ClusterLabel::Cluster } else { ClusterLabel::NonCluster },
                );
                if r.cluster_label == ClusterLabel::Cluster {
                    r.phenotype_label = Some(Phenotype::ALL[i % 4]);
                }
                r.attributes.insert("seed".into(), serde_json::json!(seed));
                r
            })
            .collect();
        let m = Manifest::new("/data", records);
        let back = Manifest::parse("/data", &m.to_jsonl()).unwrap();
        prop_assert_eq!(back.records, m.records);
    }
}

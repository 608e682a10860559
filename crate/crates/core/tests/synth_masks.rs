use std::collections::{BTreeMap, BTreeSet};

use cgc_core::raster::{rasterize, RenderOptions};
use cgc_core::scene::SegmentMask;
use cgc_core::synth::{corrupt_masks, CorruptionConfig, SceneSpec, SyntheticData};
use proptest::prelude::*;

/// GT labels recomputed from a second render in which every Gaussian
/// carries the one-hot code of its instance, so the rendered feature at a
/// pixel is the per-instance blending weight.
#[test]
fn gt_masks_match_a_one_hot_reblend() {
    let data = SyntheticData::build(&SceneSpec::standard(), &CorruptionConfig::default()).unwrap();
    let ids = &data.scene.instance_id;
    let k = *ids.iter().max().unwrap() as usize + 1;
    let mut coded = cgc_core::GaussianCloud::new(k).with_background(data.scene.cloud.background());
    for (g, &id) in data.scene.cloud.gaussians().iter().zip(ids) {
        let mut g = g.clone();
        g.feature = (0..k).map(|c| (c == id as usize) as u8 as f64).collect();
        coded.push(g).unwrap();
    }
    let mut ambiguous = 0;
    for (cam, gt) in data.cameras.iter().zip(&data.gt_masks) {
        let fm = rasterize(&coded, cam, &RenderOptions::default()).unwrap().features;
        for p in 0..fm.pixel_count() {
            let w = &fm.data[p * k..(p + 1) * k];
            let (mut best, mut bw) = (0, 0.0);
            for (c, &x) in w.iter().enumerate().skip(1) {
                if x > bw {
                    (best, bw) = (c, x);
                }
            }
            if (bw - 0.5).abs() < 1e-9 {
                ambiguous += 1;
                continue;
            }
            let expected = if bw > 0.5 { best as u16 } else { 0 };
            assert_eq!(gt.labels[p], expected, "pixel {p}: weights {w:?}");
        }
    }
    assert!(ambiguous < 5);
    // every object is visible somewhere in the training views
    for id in data.object_ids() {
        assert!(data.train.iter().any(|&i| data.gt_masks[i].binary(id).count() > 20));
    }
}

/// The GT label under each corrupted segment; panics if a segment spans
/// several GT labels.
fn parent_labels(gt: &SegmentMask, noisy: &SegmentMask) -> BTreeMap<u16, u16> {
    let mut parent = BTreeMap::new();
    for (&g, &n) in gt.labels.iter().zip(&noisy.labels) {
        if n == 0 {
            continue;
        }
        assert_ne!(g, 0, "segment {n} covers background");
        let prev = *parent.entry(n).or_insert(g);
        assert_eq!(prev, g, "segment {n} spans GT {prev} and {g}");
    }
    parent
}

#[test]
fn corrupted_masks_refine_gt_and_rename_ids() {
    let data = SyntheticData::build(&SceneSpec::standard(), &CorruptionConfig::default()).unwrap();
    let mut names_for_object_1 = BTreeSet::new();
    let mut splits = 0;
    for (gt, noisy) in data.gt_masks.iter().zip(&data.masks) {
        let parent = parent_labels(gt, noisy);
        let children: BTreeSet<u16> = parent.values().copied().collect();
        splits += parent.len() - children.len();
        for (&n, &g) in &parent {
            if g == 1 {
                names_for_object_1.insert(n);
            }
        }
        // nothing was dropped: every GT pixel is still labeled
        for (&g, &n) in gt.labels.iter().zip(&noisy.labels) {
            assert_eq!(g == 0, n == 0);
        }
    }
    assert!(splits > 0);
    assert!(names_for_object_1.len() > 3, "{names_for_object_1:?}");
}

fn random_mask() -> impl Strategy<Value = SegmentMask> {
    (4usize..12, 4usize..12, prop::collection::vec(0u16..4, 144)).prop_map(|(w, h, cells)| {
        // blocky regions so segments are larger than single pixels
        let labels = (0..w * h).map(|p| cells[(p % w) / 2 + ((p / w) / 2) * 6]).collect();
        SegmentMask {
            width: w,
            height: h,
            labels,
        }
    })
}

proptest! {
    #[test]
    fn corruption_without_merges_is_a_refinement(
        masks in prop::collection::vec(random_mask(), 1..4),
        split in 0.0..=1.0f64,
        drop in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let cfg = CorruptionConfig { split_prob: split, drop_prob: drop, merge_prob: 0.0 };
        let out = corrupt_masks(&masks, &cfg, seed).unwrap();
        prop_assert_eq!(out.len(), masks.len());
        for (gt, noisy) in masks.iter().zip(&out) {
            prop_assert_eq!((gt.width, gt.height), (noisy.width, noisy.height));
            parent_labels(gt, noisy);
        }
    }

    #[test]
    fn renaming_alone_keeps_the_partition(mask in random_mask(), seed in any::<u64>()) {
        let cfg = CorruptionConfig { split_prob: 0.0, drop_prob: 0.0, merge_prob: 0.0 };
        let out = corrupt_masks(std::slice::from_ref(&mask), &cfg, seed).unwrap().remove(0);
        let forward = parent_labels(&mask, &out);
        let backward: BTreeSet<u16> = forward.values().copied().collect();
        prop_assert_eq!(forward.len(), backward.len());
    }
}

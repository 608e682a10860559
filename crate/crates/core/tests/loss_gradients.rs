mod common;

use cgc_core::losses::{
    clusters_from_mask, contrastive_clustering_loss, l2_normalize_map, rendering_loss, spatial_regularization, ssim,
    RegularizationConfig,
};
use cgc_core::scene::{FeatureMap, Image, SegmentMask};
use common::gradients::*;
use common::*;
use rand::Rng as _;

// ---------------------------------------------------------------- rendering loss

#[test]
fn rendering_loss_gradient_8x8() {
    let fails: Vec<String> = (0..20).flat_map(|s| check_rendering(s, 8, 8)).collect();
    assert!(fails.is_empty(), "{}", fails.join("\n"));
}

#[test]
fn rendering_loss_gradient_16x16() {
    let fails: Vec<String> = (100..103).flat_map(|s| check_rendering(s, 16, 16)).collect();
    assert!(fails.is_empty(), "{}", fails.join("\n"));
}

#[test]
fn constant_images_closed_form() {
    let a = Image::filled(8, 8, [0.5; 3]);
    let b = Image::filled(8, 8, [0.6; 3]);
    let rep = rendering_loss(&a, &b, 0.2).unwrap();
    assert!((0.8 * rep.term_breakdown["l1"] - 0.08).abs() < 1e-12);
    // zero variances: only the luminance factor survives
    let s = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
    assert!((rep.term_breakdown["ssim"] - s).abs() < 1e-12);
    assert!((ssim(&a.data, &b.data, 8, 8, 3) - s).abs() < 1e-12);
    assert!((rep.value - (0.08 + 0.2 * (1.0 - s))).abs() < 1e-12);
}

// ---------------------------------------------------------------- contrastive

#[test]
fn contrastive_gradient_with_frozen_statistics() {
    let fails: Vec<String> = (0..20).flat_map(check_contrastive).collect();
    assert!(fails.is_empty(), "{}", fails.join("\n"));
}

#[test]
fn contrastive_two_by_two_brute_force() {
    let fm = feature_map(2, 2, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let mask = SegmentMask {
        width: 2,
        height: 2,
        labels: vec![1, 1, 2, 2],
    };
    let rep = contrastive_clustering_loss(&fm, &mask, 0).unwrap();
    // centroids (1,0) and (0,1), both temperatures at the floor
    // each of the four terms is −log(e^100 / (e^100 + e^0)) = log(1 + e^−100)
    let term = (-100.0f64).exp().ln_1p();
    let expected = 4.0 * term / 2.0;
    assert!(expected > 0.0);
    assert!((rep.value - expected).abs() <= 1e-12 * expected);
}

#[test]
fn contrastive_single_cluster_is_zero() {
    let mut r = rng(5);
    let nf = l2_normalize_map(&feature_map(6, 6, 3, random_vec(&mut r, 108)));
    let mut mask = SegmentMask::new(6, 6);
    mask.labels.iter_mut().for_each(|l| *l = 9);
    let rep = contrastive_clustering_loss(&nf.map, &mask, 0).unwrap();
    assert_eq!(rep.value, 0.0);
    assert!(rep.degenerate);
}

/// Mean within-cluster cosine to own centroid direction and mean cosine
/// between the two centroids.
fn cluster_similarity(fm: &FeatureMap, mask: &SegmentMask) -> (f64, f64) {
    let dim = fm.dim;
    let clusters = clusters_from_mask(mask, 0);
    let mut within = 0.0;
    let mut count = 0.0;
    let mut centroids = Vec::new();
    for c in &clusters {
        let fs: Vec<Vec<f64>> = c
            .pixels
            .iter()
            .map(|&p| normalize(&fm.data[p * dim..(p + 1) * dim]))
            .collect();
        for a in 0..fs.len() {
            for b in a + 1..fs.len() {
                within += fs[a].iter().zip(&fs[b]).map(|(x, y)| x * y).sum::<f64>();
                count += 1.0;
            }
        }
        let cen: Vec<f64> = (0..dim).map(|k| fs.iter().map(|f| f[k]).sum::<f64>()).collect();
        centroids.push(normalize(&cen));
    }
    let cross = centroids[0].iter().zip(&centroids[1]).map(|(x, y)| x * y).sum();
    (within / count, cross)
}

#[test]
fn fifty_steps_tighten_clusters_and_separate_centroids() {
    let (w, h, dim) = (8, 4, 4);
    let mut mask = SegmentMask::new(w, h);
    for p in 0..w * h {
        mask.labels[p] = if p % w < w / 2 { 1 } else { 2 };
    }
    for seed in 0..5 {
        let mut r = rng(seed);
        let mut raw = random_vec(&mut r, w * h * dim);
        let (w0, c0) = cluster_similarity(&feature_map(w, h, dim, raw.clone()), &mask);
        for _ in 0..50 {
            let nf = l2_normalize_map(&feature_map(w, h, dim, raw.clone()));
            let rep = contrastive_clustering_loss(&nf.map, &mask, 0).unwrap();
            let g = nf.backward(rep.grad_feature_map.as_ref().unwrap()).unwrap();
            raw.iter_mut().zip(&g).for_each(|(x, d)| *x -= 0.05 * d);
        }
        let (w1, c1) = cluster_similarity(&feature_map(w, h, dim, raw), &mask);
        assert!(w1 > w0, "seed {seed}: within {w0} -> {w1}");
        assert!(c1 < c0, "seed {seed}: cross {c0} -> {c1}");
    }
}

// ---------------------------------------------------------------- regularization

#[test]
fn regularization_matches_pair_enumeration() {
    let fails: Vec<String> = (0..20).flat_map(check_regularization).collect();
    assert!(fails.is_empty(), "{}", fails.join("\n"));
}

// ---------------------------------------------------------------- full composition

#[test]
fn total_loss_gradient_through_full_composition() {
    let fails: Vec<String> = (0..5).flat_map(check_composition).collect();
    assert!(fails.is_empty(), "{}", fails.join("\n"));
}

// ---------------------------------------------------------------- properties

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn relabeling_leaves_clustering_unchanged(seed in 0u64..10_000, perm_seed in 0u64..10_000) {
            let mut r = rng(seed);
            let (w, h, dim) = (6, 5, 3);
            let nf = l2_normalize_map(&feature_map(w, h, dim, random_vec(&mut r, w * h * dim)));
            let mask = SegmentMask {
                width: w,
                height: h,
                labels: (0..w * h).map(|_| r.random_range(0..5u16)).collect(),
            };
            let mut pr = rng(perm_seed);
            let mut fresh: Vec<u16> = (1..1000).collect();
            rand::seq::SliceRandom::shuffle(&mut fresh[..], &mut pr);
            let relabeled = SegmentMask {
                labels: mask.labels.iter().map(|&l| if l == 0 { 0 } else { fresh[l as usize] }).collect(),
                ..mask.clone()
            };
            let a = contrastive_clustering_loss(&nf.map, &mask, 2).unwrap();
            let b = contrastive_clustering_loss(&nf.map, &relabeled, 2).unwrap();
            prop_assert!((a.value - b.value).abs() <= 1e-12);
            prop_assert_eq!(a.grad_feature_map, b.grad_feature_map);
            prop_assert!(a.value >= 0.0);
        }

        #[test]
        fn regularization_stays_in_range(seed in 0u64..10_000, ln in 0.0f64..1.0, lf in 0.0f64..1.0) {
            let mut r = rng(seed);
            let cloud = random_cloud(&mut r, 15, 3);
            let cfg = RegularizationConfig { samples: Some(6), lambda_near: ln, lambda_far: lf, ..Default::default() };
            let v = spatial_regularization(&cloud, &cfg, seed).unwrap().value;
            prop_assert!(v >= 0.0 && v <= ln + lf);
        }
    }
}

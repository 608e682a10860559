//! Finite-difference checks shared by the gradient tests and the
//! acceptance suite. Each `check_*` returns one message per mismatch.

use cgc_core::losses::{
    contrastive_clustering_loss, l2_normalize_map, neighbor_pairs, rendering_loss, sample_indices,
    spatial_regularization, total_loss, LossTerms, RegularizationConfig, TEMPERATURE_EPSILON, TEMPERATURE_FLOOR,
};
use cgc_core::raster::{rasterize, rasterize_backward, RenderOptions};
use cgc_core::scene::{FeatureMap, GaussianCloud, Image, SegmentMask};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Direct 2D SSIM: every pixel's window is evaluated in full, truncated at
/// the image border and renormalized.
pub fn ssim_oracle(x: &[f64], y: &[f64], w: usize, h: usize, ch: usize) -> f64 {
    let g: Vec<f64> = (-5i64..=5).map(|d| (-(d * d) as f64 / 4.5).exp()).collect();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            for c in 0..ch {
                let (mut m, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dv in -5i64..=5 {
                    for du in -5i64..=5 {
                        let (uu, vv) = (u + du, v + dv);
                        if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                            continue;
                        }
                        let wt = g[(du + 5) as usize] * g[(dv + 5) as usize];
                        let i = (vv as usize * w + uu as usize) * ch + c;
                        m += wt;
                        sx += wt * x[i];
                        sy += wt * y[i];
                        sxx += wt * x[i] * x[i];
                        syy += wt * y[i] * y[i];
                        sxy += wt * x[i] * y[i];
                    }
                }
                let (mx, my) = (sx / m, sy / m);
                let vx = sxx / m - mx * mx;
                let vy = syy / m - my * my;
                let cxy = sxy / m - mx * my;
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    total / (w * h * ch) as f64
}

pub fn rendering_oracle(x: &[f64], y: &[f64], w: usize, h: usize, lambda: f64) -> f64 {
    let l1 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    (1.0 - lambda) * l1 + lambda * (1.0 - ssim_oracle(x, y, w, h, 3))
}

pub struct FrozenStats {
    pub members: Vec<Vec<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub temperatures: Vec<f64>,
}

pub fn normalize(f: &[f64]) -> Vec<f64> {
    let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        vec![0.0; f.len()]
    } else {
        f.iter().map(|v| v / n).collect()
    }
}

/// Groups pixels by label with a plain map, computes centroids and
/// temperatures from the normalized features.
pub fn freeze_stats(raw: &[f64], labels: &[u16], dim: usize, min_size: usize) -> FrozenStats {
    let mut ids: Vec<u16> = labels.iter().copied().filter(|&l| l != 0).collect();
    ids.sort();
    ids.dedup();
    let mut members: Vec<Vec<usize>> = ids
        .iter()
        .map(|&id| (0..labels.len()).filter(|&p| labels[p] == id).collect())
        .collect();
    members.retain(|m: &Vec<usize>| m.len() > min_size);
    let mut centroids = Vec::new();
    let mut temperatures = Vec::new();
    for m in &members {
        let feats: Vec<Vec<f64>> = m.iter().map(|&p| normalize(&raw[p * dim..(p + 1) * dim])).collect();
        let c: Vec<f64> = (0..dim)
            .map(|k| feats.iter().map(|f| f[k]).sum::<f64>() / feats.len() as f64)
            .collect();
        let spread: f64 = feats
            .iter()
            .map(|f| f.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .sum();
        let n = feats.len() as f64;
        temperatures.push((spread / (n * (n + TEMPERATURE_EPSILON).ln())).max(TEMPERATURE_FLOOR));
        centroids.push(c);
    }
    FrozenStats {
        members,
        centroids,
        temperatures,
    }
}

/// The clustering objective with centroids and temperatures held fixed.
pub fn contrastive_oracle(raw: &[f64], dim: usize, st: &FrozenStats) -> f64 {
    let k = st.members.len();
    let mut total = 0.0;
    for (p, m) in st.members.iter().enumerate() {
        for &q in m {
            let f = normalize(&raw[q * dim..(q + 1) * dim]);
            let logit = |s: usize| f.iter().zip(&st.centroids[s]).map(|(a, b)| a * b).sum::<f64>() / st.temperatures[s];
            let denom: f64 = (0..k).map(|s| logit(s).exp()).sum();
            total -= (logit(p).exp() / denom).ln();
        }
    }
    total / k as f64
}

/// Enumerates the regularization pairs from a full sort of all distances.
pub fn regularization_pairs(
    cloud: &GaussianCloud,
    samples: &[usize],
    near: usize,
    far: usize,
) -> Vec<(usize, usize, bool)> {
    let gs = cloud.gaussians();
    let mut pairs = Vec::new();
    for &j in samples {
        let mut d: Vec<(f64, usize)> = (0..gs.len())
            .filter(|&i| i != j)
            .map(|i| ((gs[i].position - gs[j].position).norm_squared(), i))
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        pairs.extend(d.iter().take(near).map(|&(_, i)| (j, i, true)));
        let mut r = d.clone();
        r.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        pairs.extend(r.iter().take(far).map(|&(_, i)| (j, i, false)));
    }
    pairs
}

pub fn regularization_oracle(
    features: &[f64],
    dim: usize,
    pairs: &[(usize, usize, bool)],
    m: usize,
    cfg: &RegularizationConfig,
) -> f64 {
    let h = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut total = 0.0;
    for &(j, i, is_near) in pairs {
        let a = normalize(&features[j * dim..(j + 1) * dim]);
        let b = normalize(&features[i * dim..(i + 1) * dim]);
        let c: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        if is_near {
            total += cfg.lambda_near / (m * cfg.near) as f64 * h(1.0 - c);
        } else {
            total += cfg.lambda_far / (m * cfg.far) as f64 * h(c);
        }
    }
    total
}

pub fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image {
        width: w,
        height: h,
        data: (0..w * h * 3).map(|_| r.random_range(0.2..0.8)).collect(),
    }
}

/// A reference image whose every channel is at least 0.05 from `img`, so
/// the L1 term stays smooth under finite-difference probes.
pub fn offset_image(r: &mut ChaCha8Rng, img: &Image) -> Image {
    let data = img
        .data
        .iter()
        .map(|&x| {
            let d = r.random_range(0.05..0.2);
            if x > 0.5 {
                x - d
            } else {
                x + d
            }
        })
        .collect();
    Image { data, ..img.clone() }
}

/// Three vertical bands with an unlabeled column between two of them.
pub fn banded_mask(w: usize, h: usize, ids: [u16; 3]) -> SegmentMask {
    let mut m = SegmentMask::new(w, h);
    for v in 0..h {
        for u in 0..w {
            m.labels[v * w + u] = match u * 3 / w {
                _ if u == w / 3 => 0,
                b => ids[b],
            };
        }
    }
    m
}

pub fn feature_map(w: usize, h: usize, dim: usize, data: Vec<f64>) -> FeatureMap {
    FeatureMap {
        width: w,
        height: h,
        dim,
        data,
        alpha: vec![1.0; w * h],
    }
}

pub fn check_rendering(seed: u64, w: usize, h: usize) -> Vec<String> {
    let mut r = rng(seed);
    let x = random_image(&mut r, w, h);
    let y = offset_image(&mut r, &x);
    let rep = rendering_loss(&x, &y, 0.2).unwrap();
    let mut fails = Vec::new();
    let oracle = rendering_oracle(&x.data, &y.data, w, h, 0.2);
    if (rep.value - oracle).abs() > 1e-12 {
        fails.push(format!("seed {seed}: value {} vs oracle {oracle}", rep.value));
    }
    let g = rep.grad_image.unwrap();
    for k in 0..x.data.len() {
        let numeric = central_difference(
            |t| {
                let mut xx = x.data.clone();
                xx[k] = t;
                rendering_oracle(&xx, &y.data, w, h, 0.2)
            },
            x.data[k],
        );
        let ok = if numeric.abs() < 1e-3 {
            (g[k] - numeric).abs() < 1e-7
        } else {
            (g[k] - numeric).abs() / numeric.abs() < 1e-5
        };
        if !ok {
            fails.push(format!("seed {seed} [{k}]: analytic {} numeric {numeric}", g[k]));
        }
    }
    fails
}

pub fn check_contrastive(seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let (w, h, dim) = (6, 6, 4);
    let raw = random_vec(&mut r, w * h * dim);
    let mask = banded_mask(w, h, [3, 11, 7]);
    let min_size = 3;
    let stats = freeze_stats(&raw, &mask.labels, dim, min_size);
    let nf = l2_normalize_map(&feature_map(w, h, dim, raw.clone()));
    let rep = contrastive_clustering_loss(&nf.map, &mask, min_size).unwrap();
    let g = nf.backward(rep.grad_feature_map.as_ref().unwrap()).unwrap();
    let mut fails = Vec::new();
    let oracle = contrastive_oracle(&raw, dim, &stats);
    if (rep.value - oracle).abs() > 1e-10 * oracle.abs().max(1.0) {
        fails.push(format!("seed {seed}: value {} vs oracle {oracle}", rep.value));
    }
    for k in 0..raw.len() {
        let numeric = central_difference(
            |t| {
                let mut x = raw.clone();
                x[k] = t;
                contrastive_oracle(&x, dim, &stats)
            },
            raw[k],
        );
        if !grad_close(g[k], numeric) {
            fails.push(format!("seed {seed} [{k}]: analytic {} numeric {numeric}", g[k]));
        }
    }
    fails
}

pub fn check_regularization(seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let dim = 4;
    let cloud = random_cloud(&mut r, 20, dim);
    let cfg = RegularizationConfig {
        samples: Some(5),
        ..Default::default()
    };
    let rseed = r.random();
    let rep = spatial_regularization(&cloud, &cfg, rseed).unwrap();
    let samples = sample_indices(20, 5, rseed);
    let pairs = regularization_pairs(&cloud, &samples, cfg.near, cfg.far);
    for &j in &samples {
        let (n, f) = neighbor_pairs(&cloud, j, cfg.near, cfg.far);
        let expect: Vec<usize> = pairs.iter().filter(|p| p.0 == j && p.2).map(|p| p.1).collect();
        assert_eq!(n, expect);
        let expect: Vec<usize> = pairs.iter().filter(|p| p.0 == j && !p.2).map(|p| p.1).collect();
        assert_eq!(f, expect);
    }
    let features: Vec<f64> = cloud.gaussians().iter().flat_map(|g| g.feature.clone()).collect();
    let mut fails = Vec::new();
    let oracle = regularization_oracle(&features, dim, &pairs, 5, &cfg);
    if (rep.value - oracle).abs() > 1e-13 {
        fails.push(format!("seed {seed}: value {} vs oracle {oracle}", rep.value));
    }
    let g = rep.grad_cloud_features.unwrap();
    for k in 0..features.len() {
        let numeric = central_difference(
            |t| {
                let mut f = features.clone();
                f[k] = t;
                regularization_oracle(&f, dim, &pairs, 5, &cfg)
            },
            features[k],
        );
        if !grad_close(g[k], numeric) {
            fails.push(format!("seed {seed} [{k}]: analytic {} numeric {numeric}", g[k]));
        }
    }
    fails
}

/// Rendering + clustering (frozen statistics) + regularization through the
/// rasterizer, differentiated with respect to every Gaussian parameter.
pub fn check_composition(seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let dim = 4;
    let cam = small_camera(&mut r);
    let cloud = random_cloud(&mut r, 8, dim);
    let opts = RenderOptions::exhaustive();
    let base = rasterize(&cloud, &cam, &opts).unwrap();
    let truth = offset_image(&mut r, &base.color);
    let mask = banded_mask(16, 16, [2, 5, 4]);
    let (lambda, min_size) = (0.5, 20);
    let cfg = RegularizationConfig {
        samples: Some(5),
        ..Default::default()
    };
    let rseed = 17;

    let nf = l2_normalize_map(&base.features);
    let rend = rendering_loss(&base.color, &truth, 0.2).unwrap();
    let cc = contrastive_clustering_loss(&nf.map, &mask, min_size).unwrap();
    let reg = spatial_regularization(&cloud, &cfg, rseed).unwrap();
    let tot = total_loss(
        LossTerms {
            rendering: Some(&rend),
            clustering: Some(&cc),
            regularization: Some(&reg),
        },
        lambda,
        true,
        true,
    );
    let gfm = nf.backward(tot.grad_feature_map.as_ref().unwrap()).unwrap();
    let mut grads = rasterize_backward(&base, &cloud, &cam, tot.grad_image.as_deref(), Some(&gfm)).unwrap();
    for (a, b) in grads.feature.iter_mut().zip(tot.grad_cloud_features.as_ref().unwrap()) {
        *a += b;
    }

    let stats = freeze_stats(&base.features.data, &mask.labels, dim, min_size);
    let samples = sample_indices(cloud.len(), 5, rseed);
    let objective = |c: &GaussianCloud| -> f64 {
        let out = rasterize(c, &cam, &opts).unwrap();
        let pairs = regularization_pairs(c, &samples, cfg.near, cfg.far);
        let features: Vec<f64> = c.gaussians().iter().flat_map(|g| g.feature.clone()).collect();
        rendering_oracle(&out.color.data, &truth.data, 16, 16, 0.2)
            + lambda * contrastive_oracle(&out.features.data, dim, &stats)
            + regularization_oracle(&features, dim, &pairs, 5, &cfg)
    };
    let mut fails = Vec::new();
    if (objective(&cloud) - tot.value).abs() > 1e-10 {
        fails.push(format!(
            "seed {seed}: value {} vs oracle {}",
            tot.value,
            objective(&cloud)
        ));
    }
    for i in 0..cloud.len() {
        for k in 0..params_per_gaussian(dim) {
            let x0 = *param_mut(&mut cloud.clone().gaussians_mut()[i], k);
            let numeric = central_difference(
                |t| {
                    let mut c = cloud.clone();
                    *param_mut(&mut c.gaussians_mut()[i], k) = t;
                    objective(&c)
                },
                x0,
            );
            let analytic = analytic_param(&grads, i, k);
            if !grad_close(analytic, numeric) {
                fails.push(format!(
                    "seed {seed} gaussian {i} {}[{k}]: analytic {analytic:.9e} numeric {numeric:.9e}",
                    param_name(k)
                ));
            }
        }
    }
    fails
}

pub fn raster_objective(cloud: &cgc_core::GaussianCloud, cam: &cgc_core::Camera, gc: &[f64], gf: &[f64]) -> f64 {
    let out = rasterize(cloud, cam, &RenderOptions::exhaustive()).unwrap();
    let c: f64 = out.color.data.iter().zip(gc).map(|(a, b)| a * b).sum();
    let f: f64 = out.features.data.iter().zip(gf).map(|(a, b)| a * b).sum();
    c + f
}

/// Returns (checked, failures) for one seed.
pub fn check_raster(seed: u64) -> (usize, Vec<String>) {
    let mut r = rng(seed);
    let dim = 4;
    let cam = small_camera(&mut r);
    let cloud = random_cloud(&mut r, 8, dim);
    let gc = random_vec(&mut r, 16 * 16 * 3);
    let gf = random_vec(&mut r, 16 * 16 * dim);
    let out = rasterize(&cloud, &cam, &RenderOptions::exhaustive()).unwrap();
    let grads = rasterize_backward(&out, &cloud, &cam, Some(&gc), Some(&gf)).unwrap();
    let mut failures = Vec::new();
    let mut checked = 0;
    for i in 0..cloud.len() {
        for k in 0..params_per_gaussian(dim) {
            let numeric = central_difference(
                |x| {
                    let mut c = cloud.clone();
                    *param_mut(&mut c.gaussians_mut()[i], k) = x;
                    raster_objective(&c, &cam, &gc, &gf)
                },
                *param_mut(&mut cloud.clone().gaussians_mut()[i], k),
            );
            let analytic = analytic_param(&grads, i, k);
            checked += 1;
            if !grad_close(analytic, numeric) {
                failures.push(format!(
                    "seed {seed} gaussian {i} {} [{k}]: analytic {analytic:.9e} numeric {numeric:.9e}",
                    param_name(k)
                ));
            }
        }
    }
    (checked, failures)
}

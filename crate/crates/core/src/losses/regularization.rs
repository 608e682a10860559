//! Spatial-similarity regularization on stored Gaussian features: nearby
//! Gaussians should agree, far-apart ones should not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LossReport, TERM_REGULARIZATION};
use crate::error::{Error, Result};
use crate::par;
use crate::scene::{sigmoid, GaussianCloud};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RegularizationConfig {
    /// Sampled Gaussians per evaluation; `None` means `min(1000, N)`.
    pub samples: Option<usize>,
    pub near: usize,
    pub far: usize,
    pub lambda_near: f64,
    pub lambda_far: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            samples: None,
            near: 2,
            far: 5,
            lambda_near: 0.05,
            lambda_far: 0.15,
        }
    }
}

impl RegularizationConfig {
    pub fn sample_count(&self, n: usize) -> usize {
        self.samples.unwrap_or(1000).min(n)
    }
}

/// `m` distinct indices out of `0..n`, deterministic in `seed`.
pub fn sample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, m.min(n)).into_vec()
}

/// The `near` closest and `far` farthest Gaussians from Gaussian `j`
/// (self excluded), by Euclidean distance between positions with ties broken
/// by index.
pub fn neighbor_pairs(cloud: &GaussianCloud, j: usize, near: usize, far: usize) -> (Vec<usize>, Vec<usize>) {
    let gs = cloud.gaussians();
    let pj = gs[j].position;
    let mut d: Vec<(f64, usize)> = gs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(i, g)| ((g.position - pj).norm_squared(), i))
        .collect();
    let by_near = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let by_far = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    type Order = dyn Fn(&(f64, usize), &(f64, usize)) -> std::cmp::Ordering;
    let pick = |d: &mut Vec<(f64, usize)>, k: usize, cmp: &Order| {
        let k = k.min(d.len());
        if k == 0 {
            return Vec::new();
        }
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        let mut head: Vec<(f64, usize)> = d[..k].to_vec();
        head.sort_by(cmp);
        head.into_iter().map(|(_, i)| i).collect()
    };
    let nearest = pick(&mut d, near, &by_near);
    let farthest = pick(&mut d, far, &by_far);
    (nearest, farthest)
}

fn unit_features(cloud: &GaussianCloud) -> (Vec<f64>, Vec<f64>) {
    let dim = cloud.feature_dim();
    let mut unit = Vec::with_capacity(cloud.len() * dim);
    let mut norms = Vec::with_capacity(cloud.len());
    for g in cloud.gaussians() {
        let n = g.feature.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < super::NORM_EPS {
            unit.extend(std::iter::repeat_n(0.0, dim));
            norms.push(0.0);
        } else {
            unit.extend(g.feature.iter().map(|v| v / n));
            norms.push(n);
        }
    }
    (unit, norms)
}

/// Regularization value and its gradient with respect to the stored
/// (unnormalized) features of every Gaussian.
pub fn spatial_regularization(cloud: &GaussianCloud, cfg: &RegularizationConfig, seed: u64) -> Result<LossReport> {
    let n = cloud.len();
    if n <= cfg.near + cfg.far {
        return Err(Error::CloudTooSmall {
            len: n,
            needed: cfg.near + cfg.far,
        });
    }
    let dim = cloud.feature_dim();
    let m = cfg.sample_count(n);
    let samples = sample_indices(n, m, seed);
    let pairs: Vec<(Vec<usize>, Vec<usize>)> =
        par::map_range(samples.len(), |s| neighbor_pairs(cloud, samples[s], cfg.near, cfg.far));

    let (unit, norms) = unit_features(cloud);
    let dot = |a: usize, b: usize| -> f64 {
        unit[a * dim..(a + 1) * dim]
            .iter()
            .zip(&unit[b * dim..(b + 1) * dim])
            .map(|(x, y)| x * y)
            .sum()
    };
    let coef_near = if cfg.near > 0 {
        cfg.lambda_near / (m * cfg.near) as f64
    } else {
        0.0
    };
    let coef_far = if cfg.far > 0 {
        cfg.lambda_far / (m * cfg.far) as f64
    } else {
        0.0
    };

    let mut near_sum = 0.0;
    let mut far_sum = 0.0;
    // gradient with respect to the unit features
    let mut g_unit = vec![0.0; n * dim];
    let push = |g_unit: &mut Vec<f64>, a: usize, b: usize, d_c: f64| {
        for k in 0..dim {
            let (ua, ub) = (unit[a * dim + k], unit[b * dim + k]);
            g_unit[a * dim + k] += d_c * ub;
            g_unit[b * dim + k] += d_c * ua;
        }
    };
    for (&j, (nearest, farthest)) in samples.iter().zip(&pairs) {
        for &i in nearest {
            let h = sigmoid(1.0 - dot(j, i));
            near_sum += h;
            push(&mut g_unit, j, i, -coef_near * h * (1.0 - h));
        }
        for &i in farthest {
            let h = sigmoid(dot(j, i));
            far_sum += h;
            push(&mut g_unit, j, i, coef_far * h * (1.0 - h));
        }
    }

    let mut grad = vec![0.0; n * dim];
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let u = &unit[i * dim..(i + 1) * dim];
        let g = &g_unit[i * dim..(i + 1) * dim];
        let d: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..dim {
            grad[i * dim + k] = (g[k] - u[k] * d) / norm;
        }
    }

    let near_term = coef_near * near_sum;
    let far_term = coef_far * far_sum;
    let mut report = LossReport::named(TERM_REGULARIZATION, near_term + far_term);
    report.term_breakdown.insert("regularization_near".into(), near_term);
    report.term_breakdown.insert("regularization_far".into(), far_term);
    report.grad_cloud_features = Some(grad);
    Ok(report)
}

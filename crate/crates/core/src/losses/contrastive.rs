//! Contrastive clustering of rendered features against a 2D segment mask.
//!
//! Each segment of the mask defines a cluster of (normalized) rendered
//! features. Every feature is pulled toward its own cluster centroid and
//! pushed from the other centroids through a softmax whose logits are
//! scaled by per-cluster temperatures. Centroids and temperatures are held
//! constant in the gradient.

use std::collections::HashMap;

use super::{LossReport, TERM_CLUSTERING};
use crate::error::{Error, Result};
use crate::par;
use crate::scene::{FeatureMap, SegmentMask};

pub const TEMPERATURE_EPSILON: f64 = 100.0;
/// Keeps collapsed clusters (zero spread) from dividing by zero.
pub const TEMPERATURE_FLOOR: f64 = 1e-2;
/// Clusters must have strictly more pixels than this to take part.
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 100;

/// `Σ‖f_q − f̄‖ / (N·ln(N + ε))`, floored.
pub fn cluster_temperature<'a, I>(features: I, centroid: &[f64], epsilon: f64, floor: f64) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut spread = 0.0;
    let mut n = 0usize;
    for f in features {
        spread += f
            .iter()
            .zip(centroid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        n += 1;
    }
    if n == 0 {
        return floor;
    }
    let n = n as f64;
    (spread / (n * (n + epsilon).ln())).max(floor)
}

/// Pixels of one mask segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub segment_id: u16,
    pub pixels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterStats {
    pub segment_id: u16,
    pub size: usize,
    pub centroid: Vec<f64>,
    pub temperature: f64,
}

/// Segments of `mask` with more than `min_size` pixels, label 0 excluded,
/// ordered by their first pixel in row-major order. The order depends only
/// on the partition, never on the label values.
pub fn clusters_from_mask(mask: &SegmentMask, min_size: usize) -> Vec<Cluster> {
    let mut slot: HashMap<u16, usize> = HashMap::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    for (p, &label) in mask.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let i = *slot.entry(label).or_insert_with(|| {
            clusters.push(Cluster {
                segment_id: label,
                pixels: Vec::new(),
            });
            clusters.len() - 1
        });
        clusters[i].pixels.push(p);
    }
    clusters.retain(|c| c.pixels.len() > min_size);
    clusters
}

fn cluster_stats(fm: &FeatureMap, cluster: &Cluster) -> ClusterStats {
    let dim = fm.dim;
    let mut centroid = vec![0.0; dim];
    for &p in &cluster.pixels {
        for (c, v) in centroid.iter_mut().zip(&fm.data[p * dim..(p + 1) * dim]) {
            *c += v;
        }
    }
    let n = cluster.pixels.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    let temperature = cluster_temperature(
        cluster.pixels.iter().map(|&p| &fm.data[p * dim..(p + 1) * dim]),
        &centroid,
        TEMPERATURE_EPSILON,
        TEMPERATURE_FLOOR,
    );
    ClusterStats {
        segment_id: cluster.segment_id,
        size: cluster.pixels.len(),
        centroid,
        temperature,
    }
}

/// Contrastive clustering loss of an ℓ2-normalized feature map, with its
/// gradient with respect to that normalized map.
pub fn contrastive_clustering_loss(
    fm_normalized: &FeatureMap,
    mask: &SegmentMask,
    min_cluster_size: usize,
) -> Result<LossReport> {
    if mask.width != fm_normalized.width || mask.height != fm_normalized.height {
        return Err(Error::shape(
            format!("{}x{}", fm_normalized.width, fm_normalized.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let dim = fm_normalized.dim;
    let clusters = clusters_from_mask(mask, min_cluster_size);
    let mut report = LossReport::named(TERM_CLUSTERING, 0.0);
    report.term_breakdown.insert("clusters".into(), clusters.len() as f64);
    if clusters.len() < 2 {
        report.degenerate = true;
        report.grad_feature_map = Some(vec![0.0; fm_normalized.data.len()]);
        return Ok(report);
    }

    let stats: Vec<ClusterStats> = clusters.iter().map(|c| cluster_stats(fm_normalized, c)).collect();
    // centroid / temperature, the per-cluster logit direction
    let scaled: Vec<Vec<f64>> = stats
        .iter()
        .map(|s| s.centroid.iter().map(|c| c / s.temperature).collect())
        .collect();
    let nk = clusters.len() as f64;

    let per_cluster: Vec<(f64, Vec<f64>)> = par::map_range(clusters.len(), |ci| {
        let mut loss = 0.0;
        let mut grads = vec![0.0; clusters[ci].pixels.len() * dim];
        let mut logits = vec![0.0; scaled.len()];
        for (k, &p) in clusters[ci].pixels.iter().enumerate() {
            let f = &fm_normalized.data[p * dim..(p + 1) * dim];
            for (z, c) in logits.iter_mut().zip(&scaled) {
                *z = f.iter().zip(c).map(|(a, b)| a * b).sum();
            }
            let top = (0..logits.len()).fold(0, |best, s| if logits[s] > logits[best] { s } else { best });
            let zmax = logits[top];
            // ln_1p keeps −log p accurate when the own cluster dominates
            let rest: f64 = (0..logits.len())
                .filter(|&s| s != top)
                .map(|s| (logits[s] - zmax).exp())
                .sum();
            let log_denom = zmax + rest.ln_1p();
            loss += (zmax - logits[ci]) + rest.ln_1p();
            let g = &mut grads[k * dim..(k + 1) * dim];
            for (s, c) in scaled.iter().enumerate() {
                let prob = (logits[s] - log_denom).exp();
                let coef = if s == ci { prob - 1.0 } else { prob };
                for (gj, cj) in g.iter_mut().zip(c) {
                    *gj += coef * cj / nk;
                }
            }
        }
        (loss, grads)
    });

    let mut grad = vec![0.0; fm_normalized.data.len()];
    let mut total = 0.0;
    for (cluster, (loss, g)) in clusters.iter().zip(per_cluster) {
        total += loss;
        for (k, &p) in cluster.pixels.iter().enumerate() {
            grad[p * dim..(p + 1) * dim].copy_from_slice(&g[k * dim..(k + 1) * dim]);
        }
    }
    report.value = total / nk;
    report.term_breakdown.insert(TERM_CLUSTERING.into(), report.value);
    report.grad_feature_map = Some(grad);
    Ok(report)
}

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::CloudAdam;
use crate::scene::{Gaussian, GaussianCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    /// Gaussians less opaque than this are removed.
    pub prune_opacity: f64,
    /// Mean positional-gradient norm above which a Gaussian is densified.
    pub grad_threshold: f64,
    /// Split instead of clone above this fraction of the scene extent.
    pub split_scale: f64,
    /// Remove Gaussians whose largest scale exceeds this fraction of the
    /// scene extent.
    pub max_scale: f64,
    pub split_factor: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 500,
            stop: 15_000,
            prune_opacity: 0.005,
            grad_threshold: 2e-4,
            split_scale: 0.01,
            max_scale: 0.1,
            split_factor: 1.6,
        }
    }
}

impl DensifyConfig {
    pub fn is_due(&self, iteration: usize) -> bool {
        iteration > self.start && iteration < self.stop && iteration.is_multiple_of(self.interval)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensifyKind {
    Clone,
    Split,
}

/// One parent and where its children landed in the new cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub kind: DensifyKind,
    pub parent: usize,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub before: usize,
    pub after: usize,
    pub pruned: usize,
    /// Old index of every surviving Gaussian, in new order.
    pub kept: Vec<usize>,
    pub events: Vec<DensifyEvent>,
}

/// Prunes, clones and splits in one pass over the current cloud.
///
/// Survivors keep their relative order and are followed by all children.
/// A cloned parent survives next to its copy; a split parent is replaced by
/// its two children. Statistics are reset and the optimizer rows follow the
/// Gaussians, with fresh zero rows for children.
pub fn densify_and_prune<R: Rng>(
    cloud: &mut GaussianCloud,
    adam: Option<&mut CloudAdam>,
    cfg: &DensifyConfig,
    scene_extent: f64,
    rng: &mut R,
) -> DensifyReport {
    let before = cloud.len();
    let mut kept = Vec::with_capacity(before);
    let mut children: Vec<Gaussian> = Vec::new();
    let mut pending: Vec<(DensifyKind, usize, usize)> = Vec::new();
    let mut pruned = 0;

    for (i, (g, stat)) in cloud.gaussians().iter().zip(cloud.grad_accum()).enumerate() {
        let largest = g.scale().max();
        if g.opacity() < cfg.prune_opacity || largest > cfg.max_scale * scene_extent {
            pruned += 1;
            continue;
        }
        if stat.mean() <= cfg.grad_threshold {
            kept.push(i);
            continue;
        }
        if largest > cfg.split_scale * scene_extent {
            let r = g.rotation_matrix();
            let s = g.scale();
            for _ in 0..2 {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal) * s.x,
                    rng.sample::<f64, _>(StandardNormal) * s.y,
                    rng.sample::<f64, _>(StandardNormal) * s.z,
                );
                let mut child = g.clone();
                child.position = g.position + r * z;
                child.log_scale = g.log_scale.map(|v| v - cfg.split_factor.ln());
                children.push(child);
            }
            pending.push((DensifyKind::Split, i, 2));
        } else {
            kept.push(i);
            children.push(g.clone());
            pending.push((DensifyKind::Clone, i, 1));
        }
    }

    let mut next = kept.len();
    let position_of: std::collections::HashMap<usize, usize> =
        kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let events = pending
        .into_iter()
        .map(|(kind, parent, count)| {
            let mut ids: Vec<usize> = (next..next + count).collect();
            next += count;
            if kind == DensifyKind::Clone {
                // the surviving parent is listed first
                ids.insert(0, position_of[&parent]);
            }
            DensifyEvent {
                kind,
                parent,
                children: ids,
            }
        })
        .collect();

    let gs = cloud.gaussians();
    let mut population: Vec<Gaussian> = kept.iter().map(|&i| gs[i].clone()).collect();
    let fresh = children.len();
    population.extend(children);
    cloud.replace_gaussians(population);
    if let Some(adam) = adam {
        adam.reorder(&kept, fresh);
    }
    DensifyReport {
        before,
        after: cloud.len(),
        pruned,
        kept,
        events,
    }
}

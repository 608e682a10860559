//! The optimization loop: view sampling, loss cadence, Adam steps and
//! feature-preserving densification.

mod adam;
mod densify;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{CloudAdam, Group, GROUPS};
pub use densify::{densify_and_prune, DensifyConfig, DensifyEvent, DensifyKind, DensifyReport};

use crate::error::{Error, Result};
use crate::losses::{
    contrastive_clustering_loss, l2_normalize_map, rendering_loss, spatial_regularization, total_loss, LossTerms,
    RegularizationConfig, DEFAULT_LAMBDA_CLUSTERING, DEFAULT_MIN_CLUSTER_SIZE,
};
use crate::optim::AdamConfig;
use crate::raster::{rasterize, rasterize_backward, CloudGradients, RenderOptions};
use crate::scene::{Camera, GaussianCloud, Image, SegmentMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Position rate at the first iteration, in units of the scene extent.
    pub position_init: f64,
    /// Position rate reached at the last iteration, in units of the scene extent.
    pub position_final: f64,
    pub feature: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            feature: 2.5e-3,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            color: 2.5e-3,
        }
    }
}

impl LearningRates {
    /// Log-linear interpolation between the initial and final position rates.
    pub fn position(&self, iteration: usize, total: usize, extent: f64) -> f64 {
        let t = if total <= 1 {
            0.0
        } else {
            ((iteration.saturating_sub(1)) as f64 / (total - 1) as f64).clamp(0.0, 1.0)
        };
        let log = self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t;
        log.exp() * extent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub clustering_every: usize,
    pub regularization_every: usize,
    pub lambda_clustering: f64,
    pub lambda_dssim: f64,
    pub min_cluster_size: usize,
    pub regularization: RegularizationConfig,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub densify: DensifyConfig,
    /// Disables densification entirely when false.
    pub densify_enabled: bool,
    /// Disables the spatial regularization term when false.
    pub regularization_enabled: bool,
    pub freeze_geometry: bool,
    pub seed: u64,
    pub render: RenderOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            clustering_every: 50,
            regularization_every: 100,
            lambda_clustering: DEFAULT_LAMBDA_CLUSTERING,
            lambda_dssim: 0.2,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            regularization: RegularizationConfig::default(),
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            densify: DensifyConfig::default(),
            densify_enabled: true,
            regularization_enabled: true,
            freeze_geometry: false,
            seed: 0,
            render: RenderOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.clustering_every == 0 || self.regularization_every == 0 || self.densify.interval == 0 {
            return bad("intervals must be at least 1");
        }
        let d = &self.densify;
        if !(d.prune_opacity > 0.0 && d.grad_threshold > 0.0 && d.split_scale > 0.0 && d.max_scale > 0.0) {
            return bad("densification thresholds must be positive");
        }
        if d.split_factor <= 1.0 {
            return bad("split factor must exceed 1");
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) || !self.lambda_clustering.is_finite() {
            return bad("loss weights out of range");
        }
        Ok(())
    }
}

/// One training view: camera, reference image and its (view-local) mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
    pub mask: SegmentMask,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub views: Vec<TrainView>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidConfig("dataset has no views".into()));
        }
        for v in &self.views {
            if !v.mask.matches_camera(&v.camera) || v.image.width != v.camera.width || v.image.height != v.camera.height
            {
                return Err(Error::shape(
                    format!("{}x{}", v.camera.width, v.camera.height),
                    format!("{}x{}", v.mask.width, v.mask.height),
                ));
            }
        }
        Ok(())
    }

    /// 1.1 × the largest distance of a camera center from their mean.
    pub fn scene_extent(&self) -> f64 {
        let centers: Vec<Vector3<f64>> = self.views.iter().map(|v| v.camera.center()).collect();
        let mean = centers.iter().fold(Vector3::zeros(), |a, c| a + c) / centers.len().max(1) as f64;
        let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        1.1 * radius.max(1e-6)
    }
}

/// Per-iteration training record, one JSON line each in the log file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub view: usize,
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
    pub gaussians: usize,
    /// Wall time of the iteration; varies between runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
}

pub struct TrainResult {
    pub cloud: GaussianCloud,
    pub log: Vec<LogRecord>,
    pub adam: CloudAdam,
}

/// Hooks into the loop; every method has an empty default.
pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &LogRecord, _cloud: &GaussianCloud) {}

    fn on_densify(
        &mut self,
        _before: &GaussianCloud,
        _after: &GaussianCloud,
        _report: &DensifyReport,
        _adam: &CloudAdam,
    ) {
    }
}

impl TrainObserver for () {}

/// Seeded view order that reshuffles at every epoch.
struct ViewSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    n: usize,
}

impl ViewSampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            n,
        }
    }

    fn next(&mut self) -> usize {
        if self.order.is_empty() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.order.reverse();
        }
        self.order.pop().expect("refilled above")
    }
}

pub fn train(cloud_init: &GaussianCloud, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with_observer(cloud_init, data, cfg, &mut ())
}

pub fn train_with_observer(
    cloud_init: &GaussianCloud,
    data: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainResult> {
    cfg.validate()?;
    data.validate()?;
    cloud_init.validate()?;
    let mut cloud = cloud_init.clone();
    let mut adam = CloudAdam::new(cloud.len(), cloud.feature_dim(), cfg.adam);
    let mut log = Vec::with_capacity(cfg.iterations);
    let extent = data.scene_extent();
    let mut sampler = ViewSampler::new(data.views.len(), cfg.seed);
    let mut densify_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d3a5);

    for iteration in 1..=cfg.iterations {
        let started = Instant::now();
        let view_index = sampler.next();
        let view = &data.views[view_index];
        let ctx = |e: Error| Error::Training {
            iteration,
            source: Box::new(e),
        };
        let step = Step {
            cloud: &cloud,
            view,
            cfg,
            iteration,
        };
        let (report, grads) = step.run().map_err(ctx)?;
        if !report.value.is_finite() {
            return Err(ctx(Error::NonFiniteGradient { index: 0 }));
        }

        let lrs = learning_rates(cfg, iteration, extent);
        adam.step(&mut cloud, &grads.grads, &lrs).map_err(ctx)?;

        if !cfg.freeze_geometry && cfg.densify_enabled {
            for (i, stat) in cloud.grad_accum_mut().iter_mut().enumerate() {
                if grads.visible[i] {
                    stat.norm_sum += grads.grads.position_of(i).norm();
                    stat.count += 1;
                }
            }
            if cfg.densify.is_due(iteration) {
                let before = cloud.clone();
                let rep = densify_and_prune(&mut cloud, Some(&mut adam), &cfg.densify, extent, &mut densify_rng);
                observer.on_densify(&before, &cloud, &rep, &adam);
            }
        }

        let record = LogRecord {
            iteration,
            view: view_index,
            total: report.value,
            terms: report.term_breakdown,
            gaussians: cloud.len(),
            ms: Some(started.elapsed().as_secs_f64() * 1e3),
        };
        observer.on_iteration(&record, &cloud);
        log.push(record);
    }
    Ok(TrainResult { cloud, log, adam })
}

fn learning_rates(cfg: &TrainConfig, iteration: usize, extent: f64) -> Vec<(Group, f64)> {
    if cfg.freeze_geometry {
        return vec![(Group::Feature, cfg.lr.feature)];
    }
    vec![
        (Group::Position, cfg.lr.position(iteration, cfg.iterations, extent)),
        (Group::LogScale, cfg.lr.scale),
        (Group::Rotation, cfg.lr.rotation),
        (Group::Opacity, cfg.lr.opacity),
        (Group::Color, cfg.lr.color),
        (Group::Feature, cfg.lr.feature),
    ]
}

struct StepGradients {
    grads: CloudGradients,
    visible: Vec<bool>,
}

/// Forward and backward pass of one iteration.
struct Step<'a> {
    cloud: &'a GaussianCloud,
    view: &'a TrainView,
    cfg: &'a TrainConfig,
    iteration: usize,
}

impl Step<'_> {
    fn run(&self) -> Result<(crate::losses::LossReport, StepGradients)> {
        let cfg = self.cfg;
        let out = rasterize(self.cloud, &self.view.camera, &cfg.render)?;
        let rendering = rendering_loss(&out.color, &self.view.image, cfg.lambda_dssim)?;

        let apply_clustering = self.iteration.is_multiple_of(cfg.clustering_every);
        let apply_regularization =
            cfg.regularization_enabled && self.iteration.is_multiple_of(cfg.regularization_every);

        let mut normalized = None;
        let clustering = if apply_clustering {
            let nf = l2_normalize_map(&out.features);
            let rep = contrastive_clustering_loss(&nf.map, &self.view.mask, cfg.min_cluster_size)?;
            normalized = Some(nf);
            Some(rep)
        } else {
            None
        };
        let regularization = if apply_regularization {
            let seed = self.cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ self.iteration as u64;
            Some(spatial_regularization(self.cloud, &cfg.regularization, seed)?)
        } else {
            None
        };
        let total = total_loss(
            LossTerms {
                rendering: Some(&rendering),
                clustering: clustering.as_ref(),
                regularization: regularization.as_ref(),
            },
            cfg.lambda_clustering,
            apply_clustering,
            apply_regularization,
        );

        // Color gradients only reach frozen parameters in feature-only mode.
        let grad_color = if cfg.freeze_geometry {
            None
        } else {
            total.grad_image.as_deref()
        };
        let grad_features = match (&normalized, &total.grad_feature_map) {
            (Some(nf), Some(g)) => Some(nf.backward(g)?),
            _ => None,
        };
        let mut grads = if grad_color.is_some() || grad_features.is_some() {
            rasterize_backward(
                &out,
                self.cloud,
                &self.view.camera,
                grad_color,
                grad_features.as_deref(),
            )?
        } else {
            CloudGradients::zeros(self.cloud.len(), self.cloud.feature_dim())
        };
        if let Some(g) = &total.grad_cloud_features {
            grads.add_feature_grad(g)?;
        }
        let visible = (0..self.cloud.len()).map(|i| out.is_visible(i)).collect();
        Ok((total, StepGradients { grads, visible }))
    }
}

/// Writes records as line-delimited JSON.
pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_visits_every_view_each_epoch() {
        let mut s = ViewSampler::new(5, 3);
        for _ in 0..4 {
            let mut epoch: Vec<usize> = (0..5).map(|_| s.next()).collect();
            epoch.sort();
            assert_eq!(epoch, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn position_rate_decays_between_endpoints() {
        let lr = LearningRates::default();
        assert!((lr.position(1, 100, 2.0) - 3.2e-4).abs() < 1e-15);
        assert!((lr.position(100, 100, 2.0) - 3.2e-6).abs() < 1e-15);
        assert!(lr.position(50, 100, 2.0) < lr.position(49, 100, 2.0));
    }

    #[test]
    fn zero_intervals_are_rejected() {
        let cfg = TrainConfig {
            clustering_every: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}

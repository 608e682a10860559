//! Seeded synthetic scenes with ground-truth instances, plus a corruption
//! pass that makes per-view masks inconsistent the way automatic 2D
//! segmenters are.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{rasterize, RenderOptions};
use crate::scene::{normalize_quat, Camera, Gaussian, GaussianCloud, Image, SegmentMask, DEFAULT_FEATURE_DIM};
use crate::trainer::{Dataset, TrainView};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub count: usize,
    pub color: [f64; 3],
}

/// A flat layer of Gaussians at height `y`, covering `[-half, half]²` in x/z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub y: f64,
    pub half_size: f64,
    /// Gaussians per side of the square grid.
    pub grid: usize,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    /// Elevation above the horizontal plane, degrees.
    pub elevation: f64,
    pub focal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub plane: Option<PlaneSpec>,
    pub cameras: CameraRing,
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    /// Every `test_every`-th camera (offset by half a period) is held out.
    pub test_every: usize,
    pub background: [f64; 3],
    pub seed: u64,
}

impl SceneSpec {
    /// Three blobs on a floor that fills every view, 850 Gaussians, 20
    /// training and 5 held-out 64×64 views.
    pub fn standard() -> Self {
        Self {
            name: "standard".into(),
            objects: vec![
                ObjectSpec {
                    center: [-0.75, 0.45, 0.2],
                    radius: 0.5,
                    count: 150,
                    color: [0.85, 0.25, 0.2],
                },
                ObjectSpec {
                    center: [0.7, 0.45, 0.45],
                    radius: 0.45,
                    count: 150,
                    color: [0.2, 0.7, 0.3],
                },
                ObjectSpec {
                    center: [0.05, 0.5, -0.7],
                    radius: 0.5,
                    count: 150,
                    color: [0.25, 0.35, 0.9],
                },
            ],
            plane: Some(PlaneSpec {
                y: 0.0,
                half_size: 3.2,
                grid: 20,
                color: [0.6, 0.55, 0.45],
            }),
            cameras: CameraRing {
                count: 25,
                radius: 3.6,
                elevation: 55.0,
                focal: 72.0,
            },
            width: 64,
            height: 64,
            feature_dim: DEFAULT_FEATURE_DIM,
            test_every: 5,
            background: [0.05, 0.05, 0.08],
            seed: 7,
        }
    }

    /// Two blobs, no floor.
    pub fn two_objects() -> Self {
        let mut s = Self::standard();
        s.name = "two_objects".into();
        s.objects.truncate(2);
        s.objects[0].center = [-0.6, 0.45, 0.0];
        s.objects[1].center = [0.6, 0.45, 0.0];
        s.plane = None;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.objects.is_empty() {
            return bad("scene needs at least one object");
        }
        if self.cameras.count < 2 {
            return bad("scene needs at least two cameras");
        }
        if self.width < 16 || self.height < 16 {
            return bad("images must be at least 16×16");
        }
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive");
        }
        if self.objects.len() + 1 >= u16::MAX as usize {
            return bad("too many objects");
        }
        if self.objects.iter().any(|o| !(o.radius > 0.0)) || !(self.cameras.radius > 0.0 && self.cameras.focal > 0.0) {
            return bad("radii and focal length must be positive");
        }
        Ok(())
    }

    /// Mean of the object centers; every camera looks here.
    pub fn centroid(&self) -> Vector3<f64> {
        let sum = self
            .objects
            .iter()
            .fold(Vector3::zeros(), |a, o| a + Vector3::from(o.center));
        sum / self.objects.len() as f64
    }

    /// Instance label carried by the floor Gaussians.
    pub fn plane_id(&self) -> Option<u16> {
        self.plane.as_ref().map(|_| self.objects.len() as u16 + 1)
    }

    pub fn is_test_view(&self, i: usize) -> bool {
        self.test_every > 0 && i % self.test_every == self.test_every / 2
    }
}

/// A cloud with the ground-truth instance of every Gaussian (0 = none).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub cloud: GaussianCloud,
    pub instance_id: Vec<u16>,
}

impl LabeledCloud {
    pub fn indices_of(&self, id: u16) -> Vec<usize> {
        (0..self.instance_id.len())
            .filter(|&i| self.instance_id[i] == id)
            .collect()
    }

    /// Axis-aligned bounds of an instance's Gaussian centers, grown by
    /// `dilate` times the box size on every side.
    pub fn bounding_box(&self, id: u16, dilate: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let idx = self.indices_of(id);
        let first = self.cloud.gaussians().get(*idx.first()?)?.position;
        let (mut lo, mut hi) = (first, first);
        for &i in &idx {
            let p = self.cloud.gaussians()[i].position;
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let pad = (hi - lo) * dilate;
        Some((lo - pad, hi + pad))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    normalize_quat(&[
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ])
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> Vector3<f64> {
    Vector3::from(c).map(|v| (v + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

pub fn generate_cameras(spec: &SceneSpec) -> Result<Vec<Camera>> {
    let ring = &spec.cameras;
    let target = spec.centroid();
    let el = ring.elevation.to_radians();
    (0..ring.count)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / ring.count as f64;
            let eye = target + ring.radius * Vector3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
            Camera::look_at(
                eye,
                target,
                Vector3::new(0.0, 1.0, 0.0),
                ring.focal,
                spec.width,
                spec.height,
            )
        })
        .collect()
}

/// Samples the labeled cloud and the camera ring; fully determined by the
/// spec (including its seed).
pub fn generate_scene(spec: &SceneSpec) -> Result<(LabeledCloud, Vec<Camera>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.feature_dim;
    let mut cloud = GaussianCloud::new(dim).with_background(Vector3::from(spec.background));
    let mut instance_id = Vec::new();

    for (k, obj) in spec.objects.iter().enumerate() {
        let center = Vector3::from(obj.center);
        for _ in 0..obj.count {
            // radial spread of 0.4·radius, resampled past the radius
            let offset = loop {
                let d = Vector3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ) * (0.4 * obj.radius);
                if d.norm() <= obj.radius {
                    break d;
                }
            };
            let scale = Vector3::new(
                rng.random_range(-0.3f64..0.3).exp(),
                rng.random_range(-0.3f64..0.3).exp(),
                rng.random_range(-0.3f64..0.3).exp(),
            ) * (0.16 * obj.radius);
            let g = Gaussian::new(
                center + offset,
                scale,
                random_rotation(&mut rng),
                rng.random_range(0.85..0.95),
                jitter(&mut rng, obj.color, 0.05),
                random_unit(&mut rng, dim),
            );
            cloud.push(g)?;
            instance_id.push(k as u16 + 1);
        }
    }
    if let (Some(plane), Some(id)) = (&spec.plane, spec.plane_id()) {
        let step = 2.0 * plane.half_size / plane.grid as f64;
        for a in 0..plane.grid {
            for b in 0..plane.grid {
                let x = -plane.half_size + (a as f64 + 0.5) * step;
                let z = -plane.half_size + (b as f64 + 0.5) * step;
                let g = Gaussian::new(
                    Vector3::new(x, plane.y, z),
                    Vector3::new(0.6 * step, 0.02 * step, 0.6 * step),
                    [1.0, 0.0, 0.0, 0.0],
                    0.95,
                    jitter(&mut rng, plane.color, 0.03),
                    random_unit(&mut rng, dim),
                );
                cloud.push(g)?;
                instance_id.push(id);
            }
        }
    }
    let cameras = generate_cameras(spec)?;
    Ok((LabeledCloud { cloud, instance_id }, cameras))
}

/// Ground-truth instance labels from the same contribution log that
/// produces the color image: each pixel takes the instance with the
/// largest accumulated blending weight if that weight exceeds 0.5.
pub fn render_gt_masks(lc: &LabeledCloud, cam: &Camera) -> Result<SegmentMask> {
    if lc.instance_id.len() != lc.cloud.len() {
        return Err(Error::shape(lc.cloud.len(), lc.instance_id.len()));
    }
    let out = rasterize(&lc.cloud, cam, &RenderOptions::default())?;
    Ok(labels_from_log(
        &out.contribution_log,
        &lc.instance_id,
        cam.width,
        cam.height,
    ))
}

pub(crate) fn labels_from_log(
    log: &crate::raster::ContributionLog,
    instance_id: &[u16],
    width: usize,
    height: usize,
) -> SegmentMask {
    let mut mask = SegmentMask::new(width, height);
    let mut acc: BTreeMap<u16, f64> = BTreeMap::new();
    for (p, label) in mask.labels.iter_mut().enumerate() {
        acc.clear();
        for (g, w) in log.weights(p) {
            *acc.entry(instance_id[g as usize]).or_insert(0.0) += w;
        }
        // ascending ids, so strict comparison keeps the smaller id on ties
        let mut best: Option<(u16, f64)> = None;
        for (&id, &w) in &acc {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((id, w));
            }
        }
        if let Some((id, w)) = best {
            if w > 0.5 {
                *label = id;
            }
        }
    }
    mask
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub split_prob: f64,
    pub drop_prob: f64,
    /// Merging two segments breaks the refinement property; off by default.
    pub merge_prob: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            split_prob: 0.3,
            drop_prob: 0.0,
            merge_prob: 0.0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for p in [self.split_prob, self.drop_prob, self.merge_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn segment_ids(mask: &SegmentMask) -> Vec<u16> {
    let mut ids: Vec<u16> = mask.labels.iter().copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Splits segment `id` by a random line through its centroid; the far side
/// gets `new_id`. Returns false if the segment cannot be split.
fn split_segment(mask: &mut SegmentMask, id: u16, new_id: u16, rng: &mut ChaCha8Rng) -> bool {
    let w = mask.width;
    let pixels: Vec<usize> = (0..mask.labels.len()).filter(|&p| mask.labels[p] == id).collect();
    if pixels.len() < 2 {
        return false;
    }
    let n = pixels.len() as f64;
    let cu = pixels.iter().map(|&p| (p % w) as f64).sum::<f64>() / n;
    let cv = pixels.iter().map(|&p| (p / w) as f64).sum::<f64>() / n;
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    for theta in [angle, angle + std::f64::consts::FRAC_PI_2] {
        let (dx, dy) = (theta.cos(), theta.sin());
        let far: Vec<usize> = pixels
            .iter()
            .copied()
            .filter(|&p| ((p % w) as f64 - cu) * dx + ((p / w) as f64 - cv) * dy > 0.0)
            .collect();
        if !far.is_empty() && far.len() < pixels.len() {
            far.into_iter().for_each(|p| mask.labels[p] = new_id);
            return true;
        }
    }
    false
}

fn corrupt_one(mask: &SegmentMask, cfg: &CorruptionConfig, rng: &mut ChaCha8Rng) -> SegmentMask {
    let mut out = mask.clone();
    let unused = |m: &SegmentMask| segment_ids(m).last().copied().unwrap_or(0).checked_add(1);
    if rng.random_bool(cfg.split_prob) {
        let ids = segment_ids(&out);
        if let (Some(&id), Some(new_id)) = (ids.choose(rng), unused(&out)) {
            split_segment(&mut out, id, new_id, rng);
        }
    }
    if rng.random_bool(cfg.drop_prob) {
        if let Some(&id) = segment_ids(&out).choose(rng) {
            out.labels.iter_mut().filter(|l| **l == id).for_each(|l| *l = 0);
        }
    }
    if rng.random_bool(cfg.merge_prob) {
        let ids = segment_ids(&out);
        if ids.len() >= 2 {
            let pair: Vec<u16> = ids.choose_multiple(rng, 2).copied().collect();
            out.labels
                .iter_mut()
                .filter(|l| **l == pair[1])
                .for_each(|l| *l = pair[0]);
        }
    }
    // fresh random ids for every segment
    let ids = segment_ids(&out);
    let fresh = rand::seq::index::sample(rng, u16::MAX as usize, ids.len());
    let rename: BTreeMap<u16, u16> = ids.iter().zip(fresh.iter()).map(|(&a, b)| (a, b as u16 + 1)).collect();
    out.labels.iter_mut().filter(|l| **l != 0).for_each(|l| *l = rename[l]);
    out
}

/// Per view, independently: an optional split of one segment, an optional
/// drop of one segment, an optional merge of two, then a random renaming of
/// all segment ids. View `i` draws from `seed ^ i`.
pub fn corrupt_masks(masks: &[SegmentMask], cfg: &CorruptionConfig, seed: u64) -> Result<Vec<SegmentMask>> {
    cfg.validate()?;
    Ok(crate::par::map_range(masks.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        corrupt_one(&masks[i], cfg, &mut rng)
    }))
}

/// A pixel prompt for one ground-truth object in a reference view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub object: u16,
    /// Camera index of the reference view.
    pub view: usize,
    pub pixel: (usize, usize),
}

/// The pixel of `mask == label` farthest (4-neighbour steps) from any other
/// pixel or the image edge; ties go to the first in row-major order.
pub fn most_interior_pixel(mask: &SegmentMask, label: u16) -> Option<(usize, usize)> {
    let (w, h) = (mask.width, mask.height);
    let inside = |p: usize| mask.labels[p] == label;
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = std::collections::VecDeque::new();
    for p in 0..w * h {
        let (u, v) = (p % w, p / w);
        if !inside(p) {
            dist[p] = 0;
        } else if u == 0 || v == 0 || u + 1 == w || v + 1 == h {
            dist[p] = 1;
            queue.push_back(p);
        }
    }
    for p in 0..w * h {
        if dist[p] == 0 {
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let (u, v) = (p % w, p / w);
        let mut visit = |q: usize| {
            if dist[q] == usize::MAX {
                dist[q] = dist[p] + 1;
                queue.push_back(q);
            }
        };
        if u > 0 {
            visit(p - 1);
        }
        if u + 1 < w {
            visit(p + 1);
        }
        if v > 0 {
            visit(p - w);
        }
        if v + 1 < h {
            visit(p + w);
        }
    }
    (0..w * h)
        .filter(|&p| inside(p))
        .max_by(|&a, &b| dist[a].cmp(&dist[b]).then(b.cmp(&a)))
        .map(|p| (p % w, p / w))
}

/// A complete synthetic dataset: scene, renders, GT and corrupted masks.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SceneSpec,
    pub scene: LabeledCloud,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub gt_masks: Vec<SegmentMask>,
    pub masks: Vec<SegmentMask>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SyntheticData {
    pub fn build(spec: &SceneSpec, corruption: &CorruptionConfig) -> Result<Self> {
        let (scene, cameras) = generate_scene(spec)?;
        let renders: Vec<Result<(Image, SegmentMask)>> = cameras
            .iter()
            .map(|cam| {
                let out = rasterize(&scene.cloud, cam, &RenderOptions::default())?;
                let mask = labels_from_log(&out.contribution_log, &scene.instance_id, cam.width, cam.height);
                Ok((out.color, mask))
            })
            .collect();
        let (images, gt_masks): (Vec<Image>, Vec<SegmentMask>) =
            renders.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        let masks = corrupt_masks(&gt_masks, corruption, spec.seed.wrapping_add(1))?;
        let (test, train): (Vec<usize>, Vec<usize>) = (0..cameras.len()).partition(|&i| spec.is_test_view(i));
        Ok(Self {
            spec: spec.clone(),
            scene,
            cameras,
            images,
            gt_masks,
            masks,
            train,
            test,
        })
    }

    /// Training views with the corrupted masks.
    pub fn training_set(&self) -> Dataset {
        Dataset {
            views: self
                .train
                .iter()
                .map(|&i| TrainView {
                    camera: self.cameras[i].clone(),
                    image: self.images[i].clone(),
                    mask: self.masks[i].clone(),
                })
                .collect(),
        }
    }

    /// Object ids, excluding the floor.
    pub fn object_ids(&self) -> Vec<u16> {
        (1..=self.spec.objects.len() as u16).collect()
    }

    /// One query per object, prompted at its most interior pixel in the
    /// training view where it covers the most pixels.
    pub fn default_queries(&self) -> Vec<Query> {
        self.object_ids()
            .into_iter()
            .filter_map(|object| {
                let view = *self
                    .train
                    .iter()
                    .max_by_key(|&&i| (self.gt_masks[i].binary(object).count(), std::cmp::Reverse(i)))?;
                let pixel = most_interior_pixel(&self.gt_masks[view], object)?;
                Some(Query { object, view, pixel })
            })
            .collect()
    }
}

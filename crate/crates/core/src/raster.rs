//! CPU splatting rasterizer.
//!
//! Gaussians are projected with the EWA linearization, globally depth-sorted
//! and α-blended front to back. Colors and segmentation features share one
//! blending pass, and every accepted contribution is written to a
//! [`ContributionLog`] so the backward pass (and ground-truth mask labeling)
//! can replay exactly the same compositing.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::par;
use crate::scene::{
    normalize_quat, quat_norm, quat_to_matrix, sigmoid, Camera, FeatureMap, Gaussian, GaussianCloud, Image,
};

const TILE: usize = 16;
/// Upper bound on row chunks used for gradient accumulation; fixed so the
/// reduction order does not depend on the thread count.
const BACKWARD_CHUNKS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RenderOptions {
    /// Added to the diagonal of every projected covariance (px²).
    pub lowpass: f64,
    /// Screen extent cut in standard deviations of the largest 2D axis.
    pub extent_sigma: f64,
    /// Contributions with α' below this are skipped.
    pub min_alpha: f64,
    /// Blending stops once transmittance falls below this.
    pub transmittance_floor: f64,
    pub alpha_clamp: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            lowpass: 0.3,
            extent_sigma: 3.0,
            min_alpha: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            alpha_clamp: 0.99,
        }
    }
}

impl RenderOptions {
    /// No extent cut, α cutoff or early termination: every Gaussian in front
    /// of the camera contributes to every pixel. The blend is then a smooth
    /// function of the parameters (away from the α' clamp).
    pub fn exhaustive() -> Self {
        Self {
            extent_sigma: f64::INFINITY,
            min_alpha: 0.0,
            transmittance_floor: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub gaussian_index: usize,
}

impl Splat2D {
    /// Inverse covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    fn conic(&self) -> Option<[f64; 3]> {
        let (p, q, r) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let det = p * r - q * q;
        if !(det > 0.0) {
            return None;
        }
        Some([r / det, -q / det, p / det])
    }

    fn max_std(&self) -> f64 {
        let (p, q, r) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let mid = 0.5 * (p + r);
        let lambda = mid + (mid * mid - (p * r - q * q)).max(0.0).sqrt();
        lambda.max(0.0).sqrt()
    }
}

/// Perspective Jacobian of `(fx x/z + cx, fy y/z + cy)` at camera point `t`.
fn perspective_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz2,
    )
}

/// EWA projection of one Gaussian. Returns `None` when the center is not in
/// front of the near plane.
pub fn project_gaussian(g: &Gaussian, cam: &Camera, lowpass: f64) -> Option<Splat2D> {
    project_indexed(g, 0, cam, lowpass)
}

fn project_indexed(g: &Gaussian, index: usize, cam: &Camera, lowpass: f64) -> Option<Splat2D> {
    let w = cam.rotation_matrix();
    let t = w * g.position + cam.translation();
    if t.z <= cam.near {
        return None;
    }
    let j = perspective_jacobian(cam, &t);
    let m = w * g.covariance() * w.transpose();
    let mut cov2d = j * m * j.transpose();
    cov2d[(0, 0)] += lowpass;
    cov2d[(1, 1)] += lowpass;
    // exact symmetry regardless of rounding in the sandwich product
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    Some(Splat2D {
        mean2d: Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy),
        cov2d,
        depth: t.z,
        gaussian_index: index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    /// Final opacity α' used in the blend.
    pub alpha: f64,
}

/// Per-pixel, front-to-back list of accepted contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionLog {
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
    final_transmittance: Vec<f64>,
    gaussian_count: usize,
}

impl ContributionLog {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn final_transmittance(&self, p: usize) -> f64 {
        self.final_transmittance[p]
    }

    pub fn pixel_count(&self) -> usize {
        self.final_transmittance.len()
    }

    pub fn gaussian_count(&self) -> usize {
        self.gaussian_count
    }

    pub fn total_contributions(&self) -> usize {
        self.entries.len()
    }

    /// Blend weights `α'_i ∏_{j<i} (1 − α'_j)` of pixel `p`, in log order.
    pub fn weights(&self, p: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let mut t = 1.0;
        self.pixel(p).iter().map(move |c| {
            let w = c.alpha * t;
            t *= 1.0 - c.alpha;
            (c.gaussian, w)
        })
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    pub features: FeatureMap,
    pub contribution_log: ContributionLog,
    splats: Vec<Option<Splat2D>>,
    options: RenderOptions,
}

impl RenderOutput {
    pub fn splat(&self, gaussian: usize) -> Option<&Splat2D> {
        self.splats.get(gaussian).and_then(Option::as_ref)
    }

    pub fn is_visible(&self, gaussian: usize) -> bool {
        self.splat(gaussian).is_some()
    }

    pub fn options(&self) -> &RenderOptions {
        &self.options
    }
}

/// Screen-space data for the blend loop, in depth order.
struct Packed {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    radius: f64,
    index: u32,
}

struct RowOut {
    color: Vec<f64>,
    features: Vec<f64>,
    alpha: Vec<f64>,
    counts: Vec<usize>,
    entries: Vec<Contribution>,
    final_t: Vec<f64>,
}

pub fn rasterize(cloud: &GaussianCloud, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    cam.validate()?;
    cloud.validate()?;
    let (width, height, dim) = (cam.width, cam.height, cloud.feature_dim());
    let gaussians = cloud.gaussians();

    let splats: Vec<Option<Splat2D>> = par::map_range(gaussians.len(), |i| {
        project_indexed(&gaussians[i], i, cam, opts.lowpass)
    });

    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| splats[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (splats[a].as_ref().unwrap().depth, splats[b].as_ref().unwrap().depth);
        da.total_cmp(&db).then(a.cmp(&b))
    });

    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut packed = Vec::with_capacity(order.len());
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let s = splats[i].as_ref().unwrap();
        let Some(conic) = s.conic() else { continue };
        let radius = opts.extent_sigma * s.max_std();
        let (mx, my) = (s.mean2d.x, s.mean2d.y);
        // pixel range touched by the square extent
        let lo_x = (mx - radius).ceil().max(0.0);
        let hi_x = (mx + radius).floor().min(width as f64 - 1.0);
        let lo_y = (my - radius).ceil().max(0.0);
        let hi_y = (my + radius).floor().min(height as f64 - 1.0);
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            continue;
        }
        let slot = packed.len() as u32;
        packed.push(Packed {
            mean: [mx, my],
            conic,
            opacity: gaussians[i].opacity(),
            radius,
            index: i as u32,
        });
        let (tx0, tx1) = (lo_x as usize / TILE, hi_x as usize / TILE);
        let (ty0, ty1) = (lo_y as usize / TILE, hi_y as usize / TILE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(slot);
            }
        }
    }

    let bg = cloud.background();
    let rows: Vec<RowOut> = par::map_range(height, |v| {
        let mut row = RowOut {
            color: vec![0.0; width * 3],
            features: vec![0.0; width * dim],
            alpha: vec![0.0; width],
            counts: vec![0; width],
            entries: Vec::new(),
            final_t: vec![1.0; width],
        };
        let py = v as f64;
        let tile_row = &tiles[(v / TILE) * tiles_x..(v / TILE + 1) * tiles_x];
        for u in 0..width {
            let px = u as f64;
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            let feat = &mut row.features[u * dim..(u + 1) * dim];
            let start = row.entries.len();
            for &slot in &tile_row[u / TILE] {
                let s = &packed[slot as usize];
                let dx = px - s.mean[0];
                let dy = py - s.mean[1];
                if dx.abs() > s.radius || dy.abs() > s.radius {
                    continue;
                }
                let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
                let a = (s.opacity * power.exp()).min(opts.alpha_clamp);
                if a < opts.min_alpha || a <= 0.0 {
                    continue;
                }
                let w = a * t;
                let g = &gaussians[s.index as usize];
                for k in 0..3 {
                    rgb[k] += w * g.color[k];
                }
                for (fk, gk) in feat.iter_mut().zip(&g.feature) {
                    *fk += w * gk;
                }
                row.entries.push(Contribution {
                    gaussian: s.index,
                    alpha: a,
                });
                t *= 1.0 - a;
                if t < opts.transmittance_floor {
                    break;
                }
            }
            for k in 0..3 {
                row.color[u * 3 + k] = rgb[k] + t * bg[k];
            }
            row.alpha[u] = 1.0 - t;
            row.final_t[u] = t;
            row.counts[u] = row.entries.len() - start;
        }
        row
    });

    let mut color = Image::new(width, height);
    let mut features = FeatureMap::zeros(width, height, dim);
    let total: usize = rows.iter().map(|r| r.entries.len()).sum();
    let mut offsets = Vec::with_capacity(width * height + 1);
    let mut entries = Vec::with_capacity(total);
    let mut final_transmittance = Vec::with_capacity(width * height);
    offsets.push(0);
    for (v, row) in rows.into_iter().enumerate() {
        color.data[v * width * 3..(v + 1) * width * 3].copy_from_slice(&row.color);
        features.data[v * width * dim..(v + 1) * width * dim].copy_from_slice(&row.features);
        features.alpha[v * width..(v + 1) * width].copy_from_slice(&row.alpha);
        for c in row.counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        entries.extend(row.entries);
        final_transmittance.extend(row.final_t);
    }

    Ok(RenderOutput {
        color,
        features,
        contribution_log: ContributionLog {
            offsets,
            entries,
            final_transmittance,
            gaussian_count: gaussians.len(),
        },
        splats,
        options: *opts,
    })
}

/// Recomputes color and features from the contribution log alone.
pub fn replay(
    log: &ContributionLog,
    cloud: &GaussianCloud,
    width: usize,
    height: usize,
) -> Result<(Image, FeatureMap)> {
    if log.gaussian_count() != cloud.len() {
        return Err(Error::MismatchedLog {
            recorded: log.gaussian_count(),
            actual: cloud.len(),
        });
    }
    if log.pixel_count() != width * height {
        return Err(Error::shape(format!("{} pixels", width * height), log.pixel_count()));
    }
    let dim = cloud.feature_dim();
    let bg = cloud.background();
    let mut color = Image::new(width, height);
    let mut features = FeatureMap::zeros(width, height, dim);
    for p in 0..width * height {
        let mut t = 1.0;
        let mut rgb = [0.0; 3];
        let feat = &mut features.data[p * dim..(p + 1) * dim];
        for c in log.pixel(p) {
            let g = &cloud.gaussians()[c.gaussian as usize];
            let w = c.alpha * t;
            for k in 0..3 {
                rgb[k] += w * g.color[k];
            }
            for (fk, gk) in feat.iter_mut().zip(&g.feature) {
                *fk += w * gk;
            }
            t *= 1.0 - c.alpha;
        }
        for k in 0..3 {
            color.data[p * 3 + k] = rgb[k] + t * bg[k];
        }
        features.alpha[p] = 1.0 - t;
    }
    Ok((color, features))
}

/// Gradients for every Gaussian parameter group, flattened row-major
/// (one row per Gaussian).
#[derive(Clone, Debug, PartialEq)]
pub struct CloudGradients {
    pub feature_dim: usize,
    pub position: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub rotation: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
}

impl CloudGradients {
    pub fn zeros(n: usize, feature_dim: usize) -> Self {
        Self {
            feature_dim,
            position: vec![0.0; 3 * n],
            log_scale: vec![0.0; 3 * n],
            rotation: vec![0.0; 4 * n],
            opacity_logit: vec![0.0; n],
            color: vec![0.0; 3 * n],
            feature: vec![0.0; feature_dim * n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logit.is_empty()
    }

    pub fn position_of(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.position[3 * i], self.position[3 * i + 1], self.position[3 * i + 2])
    }

    /// Adds per-Gaussian feature gradients (n × D, row-major).
    pub fn add_feature_grad(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.feature.len() {
            return Err(Error::shape(self.feature.len(), grad.len()));
        }
        for (a, b) in self.feature.iter_mut().zip(grad) {
            *a += b;
        }
        Ok(())
    }

    pub fn groups(&self) -> [&[f64]; 6] {
        [
            &self.position,
            &self.log_scale,
            &self.rotation,
            &self.opacity_logit,
            &self.color,
            &self.feature,
        ]
    }
}

/// Screen-space gradient row layout: mean(2) conic(3) opacity(1) color(3) feature(D).
const SG_MEAN: usize = 0;
const SG_CONIC: usize = 2;
const SG_OPACITY: usize = 5;
const SG_COLOR: usize = 6;
const SG_FEATURE: usize = 9;

/// Exact gradients of `Σ grad_color·C + Σ grad_features·F` with respect to
/// every Gaussian parameter, under the contributions recorded in `out`.
/// Either upstream gradient may be omitted (treated as zero).
pub fn rasterize_backward(
    out: &RenderOutput,
    cloud: &GaussianCloud,
    cam: &Camera,
    grad_color: Option<&[f64]>,
    grad_features: Option<&[f64]>,
) -> Result<CloudGradients> {
    let log = &out.contribution_log;
    if log.gaussian_count() != cloud.len() || out.splats.len() != cloud.len() {
        return Err(Error::MismatchedLog {
            recorded: log.gaussian_count(),
            actual: cloud.len(),
        });
    }
    let (width, height, dim) = (cam.width, cam.height, cloud.feature_dim());
    if out.color.width != width || out.color.height != height {
        return Err(Error::shape(
            format!("{}x{}", out.color.width, out.color.height),
            format!("{width}x{height}"),
        ));
    }
    let npix = width * height;
    if let Some(g) = grad_color {
        if g.len() != npix * 3 {
            return Err(Error::shape(npix * 3, g.len()));
        }
    }
    if let Some(g) = grad_features {
        if g.len() != npix * dim {
            return Err(Error::shape(npix * dim, g.len()));
        }
    }

    let n = cloud.len();
    let stride = SG_FEATURE + dim;
    let gaussians = cloud.gaussians();
    let opacities: Vec<f64> = gaussians.iter().map(Gaussian::opacity).collect();
    let conics: Vec<Option<[f64; 3]>> = out.splats.iter().map(|s| s.as_ref().and_then(Splat2D::conic)).collect();
    let bg = cloud.background();
    let clamp = out.options.alpha_clamp;

    let chunks = BACKWARD_CHUNKS.min(height.max(1));
    let rows_per_chunk = height.div_ceil(chunks.max(1)).max(1);
    let nchunks = height.div_ceil(rows_per_chunk);
    let partials: Vec<Vec<f64>> = par::map_range(nchunks, |ci| {
        let mut acc = vec![0.0; n * stride];
        let mut trans = Vec::new();
        let v0 = ci * rows_per_chunk;
        let v1 = (v0 + rows_per_chunk).min(height);
        for v in v0..v1 {
            for u in 0..width {
                let p = v * width + u;
                let gc = grad_color.map(|g| &g[p * 3..p * 3 + 3]);
                let gf = grad_features.map(|g| &g[p * dim..(p + 1) * dim]);
                let entries = log.pixel(p);
                if entries.is_empty() {
                    continue;
                }
                trans.clear();
                let mut t = 1.0;
                for c in entries {
                    trans.push(t);
                    t *= 1.0 - c.alpha;
                }
                let t_final = log.final_transmittance(p);
                // contributions behind the current entry
                let mut behind_c = [0.0; 3];
                if let Some(gc) = gc {
                    for k in 0..3 {
                        behind_c[k] = t_final * bg[k] * gc[k];
                    }
                }
                let mut behind_c_dot: f64 = behind_c.iter().sum();
                let mut behind_f_dot = 0.0;
                for (k, c) in entries.iter().enumerate().rev() {
                    let gi = c.gaussian as usize;
                    let g = &gaussians[gi];
                    let a = c.alpha;
                    let ti = trans[k];
                    let w = a * ti;
                    let row = &mut acc[gi * stride..(gi + 1) * stride];
                    let mut d_alpha = 0.0;
                    if let Some(gc) = gc {
                        let mut dot = 0.0;
                        for ch in 0..3 {
                            row[SG_COLOR + ch] += w * gc[ch];
                            dot += g.color[ch] * gc[ch];
                        }
                        d_alpha += ti * dot - behind_c_dot / (1.0 - a);
                        behind_c_dot += w * dot;
                    }
                    if let Some(gf) = gf {
                        let mut dot = 0.0;
                        for (j, (&fj, &gj)) in g.feature.iter().zip(gf).enumerate() {
                            row[SG_FEATURE + j] += w * gj;
                            dot += fj * gj;
                        }
                        d_alpha += ti * dot - behind_f_dot / (1.0 - a);
                        behind_f_dot += w * dot;
                    }
                    let (Some(s), Some(conic)) = (out.splats[gi].as_ref(), conics[gi]) else {
                        continue;
                    };
                    let dx = u as f64 - s.mean2d.x;
                    let dy = v as f64 - s.mean2d.y;
                    let power = -0.5 * (conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy);
                    let gauss = power.exp();
                    let raw = opacities[gi] * gauss;
                    if raw >= clamp {
                        continue;
                    }
                    row[SG_OPACITY] += d_alpha * gauss;
                    let d_power = d_alpha * raw;
                    // ∂power/∂mean = conic · d
                    row[SG_MEAN] += d_power * (conic[0] * dx + conic[1] * dy);
                    row[SG_MEAN + 1] += d_power * (conic[1] * dx + conic[2] * dy);
                    row[SG_CONIC] += d_power * (-0.5 * dx * dx);
                    row[SG_CONIC + 1] += d_power * (-dx * dy);
                    row[SG_CONIC + 2] += d_power * (-0.5 * dy * dy);
                }
            }
        }
        acc
    });

    let mut screen = vec![0.0; n * stride];
    for part in &partials {
        for (a, b) in screen.iter_mut().zip(part) {
            *a += b;
        }
    }

    let w = cam.rotation_matrix();
    let cam_t = cam.translation();
    let rows: Vec<Option<GaussianGrad>> = par::map_range(n, |i| {
        let s = out.splats[i].as_ref()?;
        conics[i]?;
        Some(chain_to_gaussian(
            &gaussians[i],
            &screen[i * stride..(i + 1) * stride],
            s,
            cam,
            &w,
            &cam_t,
        ))
    });

    let mut grads = CloudGradients::zeros(n, dim);
    for (i, row) in rows.into_iter().enumerate() {
        let sg = &screen[i * stride..(i + 1) * stride];
        grads.color[3 * i..3 * i + 3].copy_from_slice(&sg[SG_COLOR..SG_COLOR + 3]);
        grads.feature[i * dim..(i + 1) * dim].copy_from_slice(&sg[SG_FEATURE..]);
        if let Some(r) = row {
            grads.position[3 * i..3 * i + 3].copy_from_slice(r.position.as_slice());
            grads.log_scale[3 * i..3 * i + 3].copy_from_slice(r.log_scale.as_slice());
            grads.rotation[4 * i..4 * i + 4].copy_from_slice(&r.rotation);
            grads.opacity_logit[i] = r.opacity_logit;
        }
    }
    Ok(grads)
}

struct GaussianGrad {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: [f64; 4],
    opacity_logit: f64,
}

/// Partial derivatives of the rotation matrix with respect to w, x, y, z.
fn rotation_partials(q: &[f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

fn chain_to_gaussian(
    g: &Gaussian,
    sg: &[f64],
    splat: &Splat2D,
    cam: &Camera,
    w: &Matrix3<f64>,
    cam_t: &Vector3<f64>,
) -> GaussianGrad {
    let t = w * g.position + cam_t;
    let (x, y, z) = (t.x, t.y, t.z);
    let j = perspective_jacobian(cam, &t);
    let qn = normalize_quat(&g.rotation);
    let r = quat_to_matrix(&qn);
    let s = g.scale();
    let msig = r * Matrix3::from_diagonal(&s);
    let sigma = msig * msig.transpose();
    let m = w * sigma * w.transpose();

    // conic gradient -> covariance gradient: dCov = -A dA A
    let a_inv = splat.conic().expect("conic checked by caller");
    let a = Matrix2::new(a_inv[0], a_inv[1], a_inv[1], a_inv[2]);
    let ga = Matrix2::new(
        sg[SG_CONIC],
        0.5 * sg[SG_CONIC + 1],
        0.5 * sg[SG_CONIC + 1],
        sg[SG_CONIC + 2],
    );
    let gcov = -(a * ga * a);

    let gm = j.transpose() * gcov * j;
    let gj = 2.0 * gcov * j * m;

    let gmean = Vector2::new(sg[SG_MEAN], sg[SG_MEAN + 1]);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut gt = Vector3::new(
        gmean.x * fx * iz,
        gmean.y * fy * iz,
        -gmean.x * fx * x * iz2 - gmean.y * fy * y * iz2,
    );
    gt.x += gj[(0, 2)] * (-fx * iz2);
    gt.y += gj[(1, 2)] * (-fy * iz2);
    gt.z += gj[(0, 0)] * (-fx * iz2)
        + gj[(0, 2)] * (2.0 * fx * x * iz3)
        + gj[(1, 1)] * (-fy * iz2)
        + gj[(1, 2)] * (2.0 * fy * y * iz3);
    let position = w.transpose() * gt;

    let gsigma = w.transpose() * gm * w;
    let gmsig = 2.0 * gsigma * msig;
    let mut log_scale = Vector3::zeros();
    let mut gr = Matrix3::zeros();
    for k in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += gmsig[(i, k)] * r[(i, k)];
            gr[(i, k)] = gmsig[(i, k)] * s[k];
        }
        log_scale[k] = ds * s[k];
    }
    let partials = rotation_partials(&qn);
    let gqn: [f64; 4] = std::array::from_fn(|c| gr.component_mul(&partials[c]).sum());
    let norm = quat_norm(&g.rotation);
    let dot: f64 = (0..4).map(|c| gqn[c] * qn[c]).sum();
    let rotation = std::array::from_fn(|c| (gqn[c] - qn[c] * dot) / norm);

    let op = sigmoid(g.opacity_logit);
    GaussianGrad {
        position,
        log_scale,
        rotation,
        opacity_logit: sg[SG_OPACITY] * op * (1.0 - op),
    }
}

//! Scene primitives: Gaussians, clouds, cameras and the image-shaped buffers
//! that flow between rendering, losses and evaluation.
//!
//! Gaussians store their constrained parameters in unconstrained form
//! (log-scale, pre-sigmoid opacity) so optimizer steps cannot break the
//! invariants. Activations are applied on read.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 16;

/// Quaternion stored as `[w, x, y, z]`.
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Unit quaternion in the direction of `q`; the zero quaternion maps to identity.
pub fn normalize_quat(q: &Quat) -> Quat {
    let n = quat_norm(q);
    if n == 0.0 || !n.is_finite() {
        return IDENTITY_QUAT;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn matrix_to_quat(r: &Matrix3<f64>) -> Quat {
    let uq = UnitQuaternion::from_matrix(r);
    let q = uq.quaternion();
    let out = [q.w, q.i, q.j, q.k];
    // canonical hemisphere
    if out[0] < 0.0 {
        [-out[0], -out[1], -out[2], -out[3]]
    } else {
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian {
    /// Builds a Gaussian from activated values. `scale` must be positive and
    /// `opacity` strictly inside (0, 1).
    pub fn new(
        position: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: Quat,
        opacity: f64,
        color: Vector3<f64>,
        feature: Vec<f64>,
    ) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation: normalize_quat(&rotation),
            opacity_logit: logit(opacity),
            color,
            feature,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&normalize_quat(&self.rotation))
    }

    /// Σ = R diag(s)² Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scale();
        let m = r * Matrix3::from_diagonal(&s);
        m * m.transpose()
    }

    pub fn renormalize_rotation(&mut self) {
        self.rotation = normalize_quat(&self.rotation);
    }

    pub(crate) fn check_finite(&self, index: usize) -> Result<()> {
        let bad = |field| Err(Error::NonFiniteParameter { index, field });
        if !self.position.iter().all(|v| v.is_finite()) {
            return bad("position");
        }
        if !self.log_scale.iter().all(|v| v.is_finite()) {
            return bad("scale");
        }
        if !self.rotation.iter().all(|v| v.is_finite()) || quat_norm(&self.rotation) == 0.0 {
            return bad("rotation");
        }
        if !self.opacity_logit.is_finite() {
            return bad("opacity");
        }
        if !self.color.iter().all(|v| v.is_finite()) {
            return bad("color");
        }
        if !self.feature.iter().all(|v| v.is_finite()) {
            return bad("feature");
        }
        Ok(())
    }
}

pub fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    g.covariance()
}

/// Accumulated positional-gradient magnitude since the last densification.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradStat {
    pub norm_sum: f64,
    pub count: u32,
}

impl GradStat {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.norm_sum / self.count as f64
        }
    }
}

/// Ordered Gaussians sharing one feature dimension, with per-Gaussian
/// densification statistics kept in lockstep.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian>,
    grad_accum: Vec<GradStat>,
    background: Vector3<f64>,
    feature_dim: usize,
}

impl GaussianCloud {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            gaussians: Vec::new(),
            grad_accum: Vec::new(),
            background: Vector3::zeros(),
            feature_dim,
        }
    }

    pub fn from_gaussians(feature_dim: usize, gaussians: Vec<Gaussian>) -> Result<Self> {
        if let Some(g) = gaussians.iter().find(|g| g.feature.len() != feature_dim) {
            return Err(Error::FeatureDim {
                expected: feature_dim,
                found: g.feature.len(),
            });
        }
        let n = gaussians.len();
        Ok(Self {
            gaussians,
            grad_accum: vec![GradStat::default(); n],
            background: Vector3::zeros(),
            feature_dim,
        })
    }

    pub fn with_background(mut self, background: Vector3<f64>) -> Self {
        self.background = background;
        self
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn background(&self) -> Vector3<f64> {
        self.background
    }

    pub fn set_background(&mut self, background: Vector3<f64>) {
        self.background = background;
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    /// Mutable access to parameters; the count cannot change through this.
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn grad_accum(&self) -> &[GradStat] {
        &self.grad_accum
    }

    pub fn grad_accum_mut(&mut self) -> &mut [GradStat] {
        &mut self.grad_accum
    }

    pub fn reset_grad_accum(&mut self) {
        self.grad_accum.iter_mut().for_each(|s| *s = GradStat::default());
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        if g.feature.len() != self.feature_dim {
            return Err(Error::FeatureDim {
                expected: self.feature_dim,
                found: g.feature.len(),
            });
        }
        self.gaussians.push(g);
        self.grad_accum.push(GradStat::default());
        Ok(())
    }

    /// Replaces the whole population, resetting statistics.
    pub(crate) fn replace_gaussians(&mut self, gaussians: Vec<Gaussian>) {
        debug_assert!(gaussians.iter().all(|g| g.feature.len() == self.feature_dim));
        self.grad_accum = vec![GradStat::default(); gaussians.len()];
        self.gaussians = gaussians;
    }

    /// Sub-cloud holding the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let gaussians: Vec<_> = indices.iter().map(|&i| self.gaussians[i].clone()).collect();
        Self {
            grad_accum: vec![GradStat::default(); gaussians.len()],
            gaussians,
            background: self.background,
            feature_dim: self.feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.feature.len() != self.feature_dim {
                return Err(Error::FeatureDim {
                    expected: self.feature_dim,
                    found: g.feature.len(),
                });
            }
            g.check_finite(i)?;
        }
        Ok(())
    }
}

/// Pinhole camera with a world-to-camera pose. Camera axes: x right, y down,
/// z forward. Pixel (u, v) sits at image coordinates (u, v).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, `[w, x, y, z]`.
    pub rotation: Quat,
    pub translation: [f64; 3],
    pub near: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Quat,
        translation: [f64; 3],
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation: normalize_quat(&rotation),
            translation,
            near: DEFAULT_NEAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            matrix_to_quat(&r),
            [t.x, t.y, t.z],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidCamera(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return err("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return err("image size must be nonzero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return err("principal point outside the image");
        }
        if !(self.near > 0.0) {
            return err("near plane must be positive");
        }
        if (quat_norm(&self.rotation) - 1.0).abs() > 1e-6 {
            return err("rotation is not a unit quaternion");
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation())
    }

    /// Optical axis (camera +z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation_matrix().row(2).transpose()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// H×W×3 color image, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let o = (v * self.width + u) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.data.len() == other.data.len()
    }
}

/// H×W×D rendered feature image with its accumulated opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        Self {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
            alpha: vec![0.0; width * height],
        }
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let o = (v * self.width + u) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Per-view integer segment labels; 0 means unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl SegmentMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> u16 {
        self.labels[v * self.width + u]
    }

    pub fn binary(&self, label: u16) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    pub fn matches_camera(&self, cam: &Camera) -> bool {
        self.width == cam.width && self.height == cam.height
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }
}

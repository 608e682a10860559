#![allow(dead_code)]

pub mod gradients;

use cgc_core::scene::{Camera, Gaussian, GaussianCloud};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-4;

/// Relative error below 1e-4, or absolute below 1e-7 where the reference
/// magnitude is under 1e-3.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    if numeric.abs() < 1e-3 {
        (analytic - numeric).abs() < 1e-7
    } else {
        (analytic - numeric).abs() / numeric.abs() < 1e-4
    }
}

/// Central differences at `FD_STEP` and `FD_STEP / 2`, combined by one
/// Richardson step. Plain central differences at 1e-4 carry a relative
/// truncation error near 4e-4 on a few stiff entries.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    let mut d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let (coarse, fine) = (d(FD_STEP), d(FD_STEP / 2.0));
    (4.0 * fine - coarse) / 3.0
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// 16x16 camera looking at the origin from an oblique pose.
pub fn small_camera(rng: &mut ChaCha8Rng) -> Camera {
    let eye = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -4.0);
    Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 20.0, 16, 16).unwrap()
}

/// Gaussians scattered around the origin with moderate footprints and
/// opacities well below the α' clamp.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(dim).with_background(Vector3::new(
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ));
    for _ in 0..n {
        let pos = Vector3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.5..0.5),
        );
        let scale = Vector3::new(
            rng.random_range(-2.3f64..-1.2).exp(),
            rng.random_range(-2.3f64..-1.2).exp(),
            rng.random_range(-2.3f64..-1.2).exp(),
        );
        let rot = [normal(rng), normal(rng), normal(rng), normal(rng)];
        let color = Vector3::new(rng.random(), rng.random(), rng.random());
        let feature = (0..dim).map(|_| normal(rng)).collect();
        cloud
            .push(Gaussian::new(
                pos,
                scale,
                rot,
                rng.random_range(0.2..0.85),
                color,
                feature,
            ))
            .unwrap();
    }
    cloud
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Number of scalar parameters per Gaussian: position, log-scale, rotation,
/// opacity, color, feature.
pub fn params_per_gaussian(dim: usize) -> usize {
    3 + 3 + 4 + 1 + 3 + dim
}

/// Mutable reference to the `k`-th scalar parameter of a Gaussian, in the
/// order of [`params_per_gaussian`].
pub fn param_mut(g: &mut Gaussian, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.position[k],
        3..=5 => &mut g.log_scale[k - 3],
        6..=9 => &mut g.rotation[k - 6],
        10 => &mut g.opacity_logit,
        11..=13 => &mut g.color[k - 11],
        _ => &mut g.feature[k - 14],
    }
}

pub fn param_name(k: usize) -> &'static str {
    match k {
        0..=2 => "position",
        3..=5 => "log_scale",
        6..=9 => "rotation",
        10 => "opacity",
        11..=13 => "color",
        _ => "feature",
    }
}

pub fn analytic_param(grads: &cgc_core::CloudGradients, i: usize, k: usize) -> f64 {
    let d = grads.feature_dim;
    match k {
        0..=2 => grads.position[3 * i + k],
        3..=5 => grads.log_scale[3 * i + k - 3],
        6..=9 => grads.rotation[4 * i + k - 6],
        10 => grads.opacity_logit[i],
        11..=13 => grads.color[3 * i + k - 11],
        _ => grads.feature[d * i + k - 14],
    }
}

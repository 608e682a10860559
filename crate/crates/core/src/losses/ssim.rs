//! Structural similarity with an 11×11 Gaussian window (σ = 1.5) and its
//! exact gradient.
//!
//! Near the border the window is truncated to the image and renormalized
//! to unit mass, so constant images have constant local statistics.

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

/// Normalized 1D window; the 2D window is its outer product.
pub fn gaussian_window() -> [f64; 2 * RADIUS + 1] {
    let mut w = [0.0; 2 * RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

struct Blur {
    width: usize,
    height: usize,
    window: [f64; 2 * RADIUS + 1],
    mass_x: Vec<f64>,
    mass_y: Vec<f64>,
}

fn in_bounds_mass(window: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            (0..window.len())
                .filter(|&k| {
                    let j = i as isize + k as isize - RADIUS as isize;
                    j >= 0 && (j as usize) < len
                })
                .map(|k| window[k])
                .sum()
        })
        .collect()
}

impl Blur {
    fn new(width: usize, height: usize) -> Self {
        let window = gaussian_window();
        Self {
            width,
            height,
            mass_x: in_bounds_mass(&window, width),
            mass_y: in_bounds_mass(&window, height),
            window,
        }
    }

    /// Normalized separable filter of one plane.
    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in self.window.iter().enumerate() {
                    let j = x as isize + k as isize - RADIUS as isize;
                    if j >= 0 && (j as usize) < w {
                        acc += wk * src[y * w + j as usize];
                    }
                }
                tmp[y * w + x] = acc / self.mass_x[x];
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in self.window.iter().enumerate() {
                    let j = y as isize + k as isize - RADIUS as isize;
                    if j >= 0 && (j as usize) < h {
                        acc += wk * tmp[j as usize * w + x];
                    }
                }
                out[y * w + x] = acc / self.mass_y[y];
            }
        }
        out
    }

    /// Adjoint of [`Blur::apply`].
    fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let gy = 1.0 / self.mass_y[y];
            for x in 0..w {
                let g = grad[y * w + x] * gy;
                for (k, wk) in self.window.iter().enumerate() {
                    let j = y as isize + k as isize - RADIUS as isize;
                    if j >= 0 && (j as usize) < h {
                        tmp[j as usize * w + x] += wk * g;
                    }
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let g = tmp[y * w + x] / self.mass_x[x];
                for (k, wk) in self.window.iter().enumerate() {
                    let j = x as isize + k as isize - RADIUS as isize;
                    if j >= 0 && (j as usize) < w {
                        out[y * w + j as usize] += wk * g;
                    }
                }
            }
        }
        out
    }
}

fn plane(data: &[f64], channels: usize, c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(channels).copied().collect()
}

/// Mean SSIM over all pixels and channels of two interleaved images.
pub fn ssim(x: &[f64], y: &[f64], width: usize, height: usize, channels: usize) -> f64 {
    ssim_impl(x, y, width, height, channels, false).0
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &[f64], y: &[f64], width: usize, height: usize, channels: usize) -> (f64, Vec<f64>) {
    let (v, g) = ssim_impl(x, y, width, height, channels, true);
    (v, g.unwrap())
}

fn ssim_impl(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    assert_eq!(x.len(), width * height * channels);
    assert_eq!(y.len(), x.len());
    let blur = Blur::new(width, height);
    let n = (width * height * channels) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; x.len()]);
    for c in 0..channels {
        let xp = plane(x, channels, c);
        let yp = plane(y, channels, c);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = blur.apply(&xp);
        let mu_y = blur.apply(&yp);
        let exx = blur.apply(&sq(&xp, &xp));
        let eyy = blur.apply(&sq(&yp, &yp));
        let exy = blur.apply(&sq(&xp, &yp));
        let npx = xp.len();
        let mut g_mu = vec![0.0; npx];
        let mut g_xx = vec![0.0; npx];
        let mut g_xy = vec![0.0; npx];
        for i in 0..npx {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = exx[i] - mx * mx;
            let syy = eyy[i] - my * my;
            let sxy = exy[i] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let d_sxx = -s / b2;
                let d_sxy = 2.0 * a1 / (b1 * b2);
                g_mu[i] = (d_mu - 2.0 * mx * d_sxx - my * d_sxy) / n;
                g_xx[i] = d_sxx / n;
                g_xy[i] = d_sxy / n;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let a = blur.adjoint(&g_mu);
            let b = blur.adjoint(&g_xx);
            let d = blur.adjoint(&g_xy);
            for i in 0..npx {
                grad[i * channels + c] = a[i] + 2.0 * xp[i] * b[i] + yp[i] * d[i];
            }
        }
    }
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..RADIUS {
            assert_eq!(w[k], w[2 * RADIUS - k]);
        }
    }

    #[test]
    fn identical_images_score_one() {
        let x: Vec<f64> = (0..7 * 5 * 3).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        assert!((ssim(&x, &x, 7, 5, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        // <B a, b> == <a, Bᵀ b>
        let blur = Blur::new(9, 6);
        let a: Vec<f64> = (0..54).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let b: Vec<f64> = (0..54).map(|i| ((i * 5 % 13) as f64) * 0.1).collect();
        let lhs: f64 = blur.apply(&a).iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.iter().zip(blur.adjoint(&b)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

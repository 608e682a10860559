use super::ssim::ssim_with_grad;
use super::{LossReport, TERM_RENDERING};
use crate::error::{Error, Result};
use crate::scene::Image;

/// `(1 − λ)·L1 + λ·(1 − SSIM)` between a rendered and a reference image,
/// with the gradient with respect to the rendered image.
pub fn rendering_loss(rendered: &Image, truth: &Image, lambda_dssim: f64) -> Result<LossReport> {
    if !rendered.same_shape(truth) {
        return Err(Error::shape(
            format!("{}x{}", truth.width, truth.height),
            format!("{}x{}", rendered.width, rendered.height),
        ));
    }
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = Vec::with_capacity(rendered.data.len());
    for (&x, &y) in rendered.data.iter().zip(&truth.data) {
        let d = x - y;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.push((1.0 - lambda_dssim) * sign / n);
    }
    l1 /= n;
    let (s, gs) = ssim_with_grad(&rendered.data, &truth.data, rendered.width, rendered.height, 3);
    for (g, d) in grad.iter_mut().zip(gs) {
        *g -= lambda_dssim * d;
    }
    let value = (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s);
    let mut report = LossReport::named(TERM_RENDERING, value);
    report.term_breakdown.insert("l1".into(), l1);
    report.term_breakdown.insert("ssim".into(), s);
    report.grad_image = Some(grad);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_have_zero_loss_and_gradient() {
        let img = Image {
            width: 6,
            height: 4,
            data: (0..72).map(|i| i as f64 / 72.0).collect(),
        };
        let r = rendering_loss(&img, &img, 0.2).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(r.grad_image.unwrap().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(rendering_loss(&Image::new(4, 4), &Image::new(4, 5), 0.2).is_err());
    }
}

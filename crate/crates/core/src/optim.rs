//! Adam with bias correction, kept per parameter group so rows can follow
//! Gaussians through densification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Moments for a flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::shape(param.len(), grad.len()));
    }
    if state.len() != param.len() {
        return Err(Error::shape(param.len(), state.len()));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// Row-structured state: `width` moments per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupState {
    pub width: usize,
    pub state: AdamState,
}

impl GroupState {
    pub fn new(width: usize, rows: usize) -> Self {
        Self {
            width,
            state: AdamState::zeros(width * rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.state.len().checked_div(self.width).unwrap_or(0)
    }

    /// Keeps the listed rows in order and appends `fresh` zero rows.
    pub fn reorder(&mut self, keep: &[usize], fresh: usize) {
        let w = self.width;
        let pick = |src: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity((keep.len() + fresh) * w);
            for &r in keep {
                out.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
            out.resize((keep.len() + fresh) * w, 0.0);
            out
        };
        self.state.first_moment = pick(&self.state.first_moment);
        self.state.second_moment = pick(&self.state.second_moment);
    }
}

use crate::error::{Error, Result};
use crate::scene::FeatureMap;

/// Pixels whose feature norm is below this are treated as empty.
pub const NORM_EPS: f64 = 1e-12;

/// A per-pixel ℓ2-normalized feature map and what its backward pass needs.
#[derive(Clone, Debug)]
pub struct NormalizedFeatures {
    pub map: FeatureMap,
    norms: Vec<f64>,
}

pub fn l2_normalize_map(fm: &FeatureMap) -> NormalizedFeatures {
    let dim = fm.dim;
    let mut map = fm.clone();
    let mut norms = Vec::with_capacity(fm.pixel_count());
    for px in map.data.chunks_mut(dim.max(1)).take(fm.pixel_count()) {
        let n = px.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < NORM_EPS {
            px.iter_mut().for_each(|v| *v = 0.0);
            norms.push(0.0);
        } else {
            px.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
    }
    NormalizedFeatures { map, norms }
}

impl NormalizedFeatures {
    /// Maps a gradient with respect to the normalized map back onto the raw
    /// map: `(I − f̂ f̂ᵀ) g / ‖f‖` per pixel, zero for empty pixels.
    pub fn backward(&self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.map.data.len() {
            return Err(Error::shape(self.map.data.len(), grad.len()));
        }
        let dim = self.map.dim;
        let mut out = vec![0.0; grad.len()];
        for (p, &n) in self.norms.iter().enumerate() {
            if n == 0.0 {
                continue;
            }
            let f = &self.map.data[p * dim..(p + 1) * dim];
            let g = &grad[p * dim..(p + 1) * dim];
            let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
            for k in 0..dim {
                out[p * dim + k] = (g[k] - f[k] * dot) / n;
            }
        }
        Ok(out)
    }
}

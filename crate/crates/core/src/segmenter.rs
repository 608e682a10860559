//! Prompted selection: discriminative features, similarity maps, 2D object
//! masks, 3D Gaussian selection and hull completion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::ConvexHull;
use crate::losses::NORM_EPS;
use crate::par;
use crate::raster::{rasterize, RenderOptions};
use crate::scene::{BinaryMask, Camera, FeatureMap, GaussianCloud};
use crate::synth::most_interior_pixel;

pub const DEFAULT_THRESHOLD: f64 = 0.7;
/// Halfspace slack for hull membership.
pub const HULL_TOLERANCE: f64 = 1e-9;

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n >= NORM_EPS).then(|| v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminativeFeature {
    pub vector: Vec<f64>,
    /// The rendered feature was zero; `vector` is zero too.
    pub degenerate: bool,
}

/// Normalized rendered feature at pixel `(u, v)`.
pub fn pick_discriminative_feature(fm: &FeatureMap, pixel: (usize, usize)) -> Result<DiscriminativeFeature> {
    let (u, v) = pixel;
    if u >= fm.width || v >= fm.height {
        return Err(Error::PixelOutOfBounds {
            u,
            v,
            width: fm.width,
            height: fm.height,
        });
    }
    Ok(match unit(fm.pixel(u, v)) {
        Some(vector) => DiscriminativeFeature {
            vector,
            degenerate: false,
        },
        None => DiscriminativeFeature {
            vector: vec![0.0; fm.dim],
            degenerate: true,
        },
    })
}

/// Per-pixel cosine similarity to a query, in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SimilarityMap {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }
}

pub fn similarity_map(fm: &FeatureMap, query: &[f64]) -> Result<SimilarityMap> {
    if query.len() != fm.dim {
        return Err(Error::shape(fm.dim, query.len()));
    }
    let q = unit(query).ok_or(Error::ZeroQuery)?;
    let values = (0..fm.pixel_count())
        .map(|p| {
            let f = &fm.data[p * fm.dim..(p + 1) * fm.dim];
            unit(f).map_or(0.0, |f| dot(&f, &q).clamp(-1.0, 1.0))
        })
        .collect();
    Ok(SimilarityMap {
        width: fm.width,
        height: fm.height,
        values,
    })
}

/// Pixels whose similarity reaches `t`.
pub fn object_mask(sc: &SimilarityMap, t: f64) -> BinaryMask {
    BinaryMask {
        width: sc.width,
        height: sc.height,
        data: sc.values.iter().map(|&s| s >= t).collect(),
    }
}

/// Gaussians whose normalized feature has cosine similarity at least `t`
/// with the query.
pub fn select_gaussians_3d(cloud: &GaussianCloud, query: &[f64], t: f64) -> Result<Vec<usize>> {
    if query.len() != cloud.feature_dim() {
        return Err(Error::shape(cloud.feature_dim(), query.len()));
    }
    let q = unit(query).ok_or(Error::ZeroQuery)?;
    Ok(cloud
        .gaussians()
        .iter()
        .enumerate()
        .filter(|(_, g)| unit(&g.feature).is_some_and(|f| dot(&f, &q) >= t))
        .map(|(i, _)| i)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSelection3D {
    pub seed_indices: Vec<usize>,
    pub hull_indices: Vec<usize>,
    /// Seeds spanned no volume, so no hull was built.
    pub degenerate: bool,
}

/// Every Gaussian whose center lies inside the convex hull of the seed
/// centers, plus the seeds themselves. Output is sorted.
pub fn convex_hull_extract(cloud: &GaussianCloud, seeds: &[usize]) -> ObjectSelection3D {
    let mut seed_indices = seeds.to_vec();
    seed_indices.sort_unstable();
    seed_indices.dedup();
    let gs = cloud.gaussians();
    let points: Vec<Vector3<f64>> = seed_indices.iter().map(|&i| gs[i].position).collect();
    match ConvexHull::build(&points) {
        None => ObjectSelection3D {
            hull_indices: seed_indices.clone(),
            seed_indices,
            degenerate: true,
        },
        Some(hull) => {
            let inside = par::map_range(gs.len(), |i| hull.contains(&gs[i].position, HULL_TOLERANCE));
            let mut hull_indices: Vec<usize> = (0..gs.len()).filter(|&i| inside[i]).collect();
            hull_indices.extend(&seed_indices);
            hull_indices.sort_unstable();
            hull_indices.dedup();
            ObjectSelection3D {
                seed_indices,
                hull_indices,
                degenerate: false,
            }
        }
    }
}

/// Where a query's discriminative feature comes from, in the reference view.
#[derive(Clone, Debug, PartialEq)]
pub enum Prompt {
    Pixel(usize, usize),
    /// The most interior pixel of a (ground-truth) mask.
    MaskSeed(BinaryMask),
}

impl Prompt {
    pub fn resolve(&self) -> Result<(usize, usize)> {
        match self {
            Prompt::Pixel(u, v) => Ok((*u, *v)),
            Prompt::MaskSeed(mask) => {
                let labels = crate::scene::SegmentMask {
                    width: mask.width,
                    height: mask.height,
                    labels: mask.data.iter().map(|&b| b as u16).collect(),
                };
                most_interior_pixel(&labels, 1).ok_or_else(|| Error::InvalidConfig("empty seed mask".into()))
            }
        }
    }
}

pub fn render_features(cloud: &GaussianCloud, cam: &Camera) -> Result<FeatureMap> {
    Ok(rasterize(cloud, cam, &RenderOptions::default())?.features)
}

/// The discriminative feature for a prompt in a reference view; a zero
/// rendered feature is an error naming the pixel.
pub fn query_feature(cloud: &GaussianCloud, reference: &Camera, prompt: &Prompt) -> Result<Vec<f64>> {
    let pixel = prompt.resolve()?;
    let fm = render_features(cloud, reference)?;
    let d = pick_discriminative_feature(&fm, pixel)?;
    if d.degenerate {
        return Err(Error::DegenerateFeature { u: pixel.0, v: pixel.1 });
    }
    Ok(d.vector)
}

/// Prompt in `reference`, mask in `target`.
pub fn segment_query(
    cloud: &GaussianCloud,
    reference: &Camera,
    prompt: &Prompt,
    target: &Camera,
    t: f64,
) -> Result<BinaryMask> {
    let q = query_feature(cloud, reference, prompt)?;
    let fm = render_features(cloud, target)?;
    Ok(object_mask(&similarity_map(&fm, &q)?, t))
}

/// One mask per query on a shared target feature map; a pixel claimed by
/// several queries goes to the one with the highest similarity (first
/// query on exact ties).
pub fn segment_many(fm: &FeatureMap, queries: &[Vec<f64>], t: f64) -> Result<Vec<BinaryMask>> {
    let maps: Vec<SimilarityMap> = queries.iter().map(|q| similarity_map(fm, q)).collect::<Result<_>>()?;
    let mut masks: Vec<BinaryMask> = maps.iter().map(|m| object_mask(m, t)).collect();
    for p in 0..fm.pixel_count() {
        let winner = (0..maps.len())
            .filter(|&k| masks[k].data[p])
            .fold(None, |best: Option<usize>, k| match best {
                Some(b) if maps[b].values[p] >= maps[k].values[p] => Some(b),
                _ => Some(k),
            });
        if let Some(w) = winner {
            for (k, m) in masks.iter_mut().enumerate() {
                m.data[p] = k == w;
            }
        }
    }
    Ok(masks)
}

//! Training objectives: photometric rendering loss, contrastive clustering
//! of rendered features, and the 3D spatial-similarity regularizer.

use std::collections::BTreeMap;

mod contrastive;
mod normalize;
mod regularization;
mod rendering;
mod ssim;
mod total;

pub use contrastive::{
    cluster_temperature, clusters_from_mask, contrastive_clustering_loss, Cluster, ClusterStats,
    DEFAULT_MIN_CLUSTER_SIZE, TEMPERATURE_EPSILON, TEMPERATURE_FLOOR,
};
pub use normalize::{l2_normalize_map, NormalizedFeatures, NORM_EPS};
pub use regularization::{neighbor_pairs, sample_indices, spatial_regularization, RegularizationConfig};
pub use rendering::rendering_loss;
pub use ssim::{gaussian_window, ssim, ssim_with_grad, SSIM_C1, SSIM_C2};
pub use total::{total_loss, LossTerms, DEFAULT_LAMBDA_CLUSTERING};

pub const TERM_RENDERING: &str = "rendering";
pub const TERM_CLUSTERING: &str = "clustering";
pub const TERM_REGULARIZATION: &str = "regularization";
pub const TERM_TOTAL: &str = "total";

/// Value of a loss plus the gradients for whatever it touches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Gradient with respect to the rendered color image (H×W×3).
    pub grad_image: Option<Vec<f64>>,
    /// Gradient with respect to the rendered feature map (H×W×D).
    pub grad_feature_map: Option<Vec<f64>>,
    /// Gradient with respect to stored Gaussian features (N×D).
    pub grad_cloud_features: Option<Vec<f64>>,
    pub term_breakdown: BTreeMap<String, f64>,
    /// Set when the loss could not be formed and was reported as zero.
    pub degenerate: bool,
}

impl LossReport {
    pub(crate) fn named(name: &str, value: f64) -> Self {
        let mut term_breakdown = BTreeMap::new();
        term_breakdown.insert(name.to_string(), value);
        Self {
            value,
            term_breakdown,
            ..Self::default()
        }
    }
}

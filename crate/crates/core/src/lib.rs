//! Gaussian splatting with per-Gaussian segmentation features trained by
//! contrastive clustering on view-inconsistent 2D instance masks.
//!
//! The crate covers the whole pipeline: differentiable rasterization of
//! colors and features, the training losses, the optimization loop with
//! feature-aware densification, pixel-prompted 2D/3D selection, synthetic
//! datasets with controllable mask inconsistency, evaluation metrics, and
//! the on-disk formats used by the `cgc` command-line tool.

// `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod hull;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod raster;
pub mod scene;
pub mod segmenter;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use raster::{rasterize, rasterize_backward, CloudGradients, RenderOptions, RenderOutput};
pub use scene::{BinaryMask, Camera, FeatureMap, Gaussian, GaussianCloud, Image, SegmentMask};

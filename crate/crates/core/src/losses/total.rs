use super::{LossReport, TERM_CLUSTERING, TERM_REGULARIZATION, TERM_RENDERING, TERM_TOTAL};

pub const DEFAULT_LAMBDA_CLUSTERING: f64 = 1e-6;

/// Individual loss evaluations for one iteration; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms<'a> {
    pub rendering: Option<&'a LossReport>,
    pub clustering: Option<&'a LossReport>,
    pub regularization: Option<&'a LossReport>,
}

/// `rendering + λ·clustering + regularization`, restricted to the active terms.
pub fn total_loss(
    terms: LossTerms<'_>,
    lambda_clustering: f64,
    apply_clustering: bool,
    apply_regularization: bool,
) -> LossReport {
    let mut out = LossReport::default();
    if let Some(r) = terms.rendering {
        out.value += r.value;
        out.grad_image = r.grad_image.clone();
        out.term_breakdown.insert(TERM_RENDERING.into(), r.value);
    }
    if let (true, Some(c)) = (apply_clustering, terms.clustering) {
        out.value += lambda_clustering * c.value;
        out.grad_feature_map = c
            .grad_feature_map
            .as_ref()
            .map(|g| g.iter().map(|v| v * lambda_clustering).collect());
        out.degenerate |= c.degenerate;
        out.term_breakdown.insert(TERM_CLUSTERING.into(), c.value);
    }
    if let (true, Some(r)) = (apply_regularization, terms.regularization) {
        out.value += r.value;
        out.grad_cloud_features = r.grad_cloud_features.clone();
        out.term_breakdown.insert(TERM_REGULARIZATION.into(), r.value);
    }
    out.term_breakdown.insert(TERM_TOTAL.into(), out.value);
    out
}

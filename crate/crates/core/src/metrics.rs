//! Mask scores and the end-to-end evaluation protocol.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{rasterize, RenderOptions};
use crate::scene::{BinaryMask, Camera, FeatureMap, GaussianCloud, SegmentMask};
use crate::segmenter::{object_mask, pick_discriminative_feature, similarity_map};
use crate::synth::Query;

fn check_shape(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    Ok(())
}

fn ratio(inter: usize, union: usize, a_empty: bool, b_empty: bool) -> f64 {
    match (a_empty, b_empty) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => inter as f64 / union as f64,
    }
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shape(pred, gt)?;
    let (mut inter, mut union) = (0, 0);
    for (&a, &b) in pred.data.iter().zip(&gt.data) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(ratio(inter, union, pred.count() == 0, gt.count() == 0))
}

/// Band radius used when none is given: 2% of the image diagonal, at
/// least one pixel.
pub fn default_band(width: usize, height: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    ((0.02 * diag).round() as usize).max(1)
}

/// Mask pixels within Chebyshev distance `d` of the mask's boundary. A
/// boundary pixel is a mask pixel 4-adjacent to a non-mask pixel or to the
/// image edge.
pub fn boundary_band(mask: &BinaryMask, d: usize) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let at = |u: usize, v: usize| mask.data[v * w + u];
    let mut boundary = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            if at(u, v)
                && (u == 0
                    || v == 0
                    || u + 1 == w
                    || v + 1 == h
                    || !at(u - 1, v)
                    || !at(u + 1, v)
                    || !at(u, v - 1)
                    || !at(u, v + 1))
            {
                boundary[v * w + u] = true;
            }
        }
    }
    // square dilation, separable
    let mut rows = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let (lo, hi) = (u.saturating_sub(d), (u + d).min(w - 1));
            rows[v * w + u] = (lo..=hi).any(|x| boundary[v * w + x]);
        }
    }
    let mut data = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let (lo, hi) = (v.saturating_sub(d), (v + d).min(h - 1));
            data[v * w + u] = mask.data[v * w + u] && (lo..=hi).any(|y| rows[y * w + u]);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        data,
    }
}

/// IoU of the two masks' boundary bands of radius `d`.
pub fn boundary_iou(pred: &BinaryMask, gt: &BinaryMask, d: usize) -> Result<f64> {
    check_shape(pred, gt)?;
    if d == 0 {
        return Err(Error::InvalidConfig("band radius must be at least 1".into()));
    }
    let (bp, bg) = (boundary_band(pred, d), boundary_band(gt, d));
    let (mut inter, mut union) = (0, 0);
    for (&a, &b) in bp.data.iter().zip(&bg.data) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(ratio(inter, union, pred.count() == 0, gt.count() == 0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: usize,
    pub iou: f64,
    pub biou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query: Query,
    /// Mean over the evaluated views.
    pub iou: f64,
    pub biou: f64,
    pub views: Vec<ViewScore>,
    /// Why the query scored zero, if it failed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: Vec<QueryScore>,
    pub miou: f64,
    pub mbiou: f64,
    /// Wall time to render each evaluated view's feature map and masks.
    pub render_ms: BTreeMap<usize, f64>,
}

impl EvalReport {
    pub fn from_scores(queries: Vec<QueryScore>, render_ms: BTreeMap<usize, f64>) -> Self {
        let n = queries.len().max(1) as f64;
        let miou = queries.iter().map(|q| q.iou).sum::<f64>() / n;
        let mbiou = queries.iter().map(|q| q.biou).sum::<f64>() / n;
        Self {
            queries,
            miou,
            mbiou,
            render_ms,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>5} {:>9} {:>7} {:>7}  note",
            "object", "view", "pixel", "IoU", "BIoU"
        );
        for q in &self.queries {
            let _ = writeln!(
                s,
                "{:>6} {:>5} {:>9} {:>7.4} {:>7.4}  {}",
                q.query.object,
                q.query.view,
                format!("{},{}", q.query.pixel.0, q.query.pixel.1),
                q.iou,
                q.biou,
                q.error.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(s, "mIoU {:.4}  mBIoU {:.4}", self.miou, self.mbiou);
        for (view, ms) in &self.render_ms {
            let _ = writeln!(s, "view {view}: {ms:.2} ms");
        }
        s
    }

    /// One JSON record per query, then a summary record.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for q in &self.queries {
            s.push_str(&serde_json::to_string(q)?);
            s.push('\n');
        }
        let summary = serde_json::json!({ "miou": self.miou, "mbiou": self.mbiou, "render_ms": self.render_ms });
        s.push_str(&summary.to_string());
        s.push('\n');
        Ok(s)
    }
}

/// Scores pixel-prompted masks for every query on every evaluation view.
///
/// `cameras` and `gt_masks` are indexed by view; queries name their
/// reference view by the same index. A query whose prompt cannot be
/// resolved scores 0 everywhere. Queries are reported in sorted order, so
/// the result does not depend on the order they were given in.
pub fn evaluate(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    gt_masks: &[SegmentMask],
    eval_views: &[usize],
    queries: &[Query],
    t: f64,
    band: Option<usize>,
) -> Result<EvalReport> {
    if cameras.len() != gt_masks.len() {
        return Err(Error::shape(cameras.len(), gt_masks.len()));
    }
    let mut queries = queries.to_vec();
    queries.sort_by_key(|a| (a.object, a.view, a.pixel));
    let opts = RenderOptions::default();
    let render = |i: usize| -> Result<FeatureMap> {
        let cam = cameras
            .get(i)
            .ok_or_else(|| Error::InvalidConfig(format!("no view {i}")))?;
        Ok(rasterize(cloud, cam, &opts)?.features)
    };

    let mut render_ms = BTreeMap::new();
    let mut targets = Vec::with_capacity(eval_views.len());
    for &i in eval_views {
        let started = Instant::now();
        targets.push(render(i)?);
        render_ms.insert(i, started.elapsed().as_secs_f64() * 1e3);
    }

    let mut references: BTreeMap<usize, FeatureMap> = BTreeMap::new();
    let mut scores = Vec::with_capacity(queries.len());
    for q in queries {
        if let std::collections::btree_map::Entry::Vacant(e) = references.entry(q.view) {
            e.insert(render(q.view)?);
        }
        let feature = pick_discriminative_feature(&references[&q.view], q.pixel).and_then(|d| {
            if d.degenerate {
                Err(Error::DegenerateFeature {
                    u: q.pixel.0,
                    v: q.pixel.1,
                })
            } else {
                Ok(d.vector)
            }
        });
        let feature = match feature {
            Ok(f) => f,
            Err(e) => {
                let views = eval_views
                    .iter()
                    .map(|&view| ViewScore {
                        view,
                        iou: 0.0,
                        biou: 0.0,
                    })
                    .collect();
                scores.push(QueryScore {
                    query: q,
                    iou: 0.0,
                    biou: 0.0,
                    views,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut views = Vec::with_capacity(eval_views.len());
        for (&view, fm) in eval_views.iter().zip(&targets) {
            let pred = object_mask(&similarity_map(fm, &feature)?, t);
            let gt = gt_masks[view].binary(q.object);
            let d = band.unwrap_or_else(|| default_band(gt.width, gt.height));
            views.push(ViewScore {
                view,
                iou: iou(&pred, &gt)?,
                biou: boundary_iou(&pred, &gt, d)?,
            });
        }
        let n = views.len().max(1) as f64;
        scores.push(QueryScore {
            query: q,
            iou: views.iter().map(|v| v.iou).sum::<f64>() / n,
            biou: views.iter().map(|v| v.biou).sum::<f64>() / n,
            views,
            error: None,
        });
    }
    Ok(EvalReport::from_scores(scores, render_ms))
}

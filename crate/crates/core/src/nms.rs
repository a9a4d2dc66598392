//! Greedy duplicate suppression over rotated detections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_oriented, OrientedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub obb: OrientedBox,
    pub score: f64,
    pub class_id: usize,
}

impl Detection {
    pub fn new(obb: OrientedBox, score: f64, class_id: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            obb,
            score,
            class_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsOptions {
    pub iou_thresh: f64,
    /// Suppress across classes instead of within each class.
    pub class_agnostic: bool,
}

impl NmsOptions {
    pub fn new(iou_thresh: f64) -> Self {
        Self {
            iou_thresh,
            class_agnostic: false,
        }
    }
}

/// Indices (into `dets`) ordered by descending score, ties by lower index.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Per-class greedy NMS with rotated IoU. Returns the kept indices in
/// descending score order.
pub fn rotated_nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<usize>> {
    rotated_nms_with(dets, NmsOptions::new(iou_thresh))
}

/// A detection is kept iff its IoU with every higher-ranked kept detection
/// (of the same class, unless class-agnostic) is at most the threshold.
pub fn rotated_nms_with(dets: &[Detection], opts: NmsOptions) -> Result<Vec<usize>> {
    if !(opts.iou_thresh > 0.0 && opts.iou_thresh <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "NMS IoU threshold must lie in (0, 1], got {}",
            opts.iou_thresh
        )));
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&j| {
            let k = &dets[j];
            (opts.class_agnostic || k.class_id == d.class_id)
                && iou_oriented(&k.obb, &d.obb) > opts.iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Keeps detections scoring at least `min_score`, preserving order.
pub fn score_filter(dets: &[Detection], min_score: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.score >= min_score)
        .copied()
        .collect()
}

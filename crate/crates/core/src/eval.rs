//! Average precision over rotated boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_oriented, OrientedBox};
use crate::nms::{score_order, Detection};

pub const DEFAULT_EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub obb: OrientedBox,
    pub class_id: usize,
    /// Difficult objects neither count toward recall nor produce false
    /// positives when detected.
    #[serde(default)]
    pub difficult: bool,
}

impl GroundTruth {
    pub fn new(obb: OrientedBox, class_id: usize) -> Self {
        Self {
            obb,
            class_id,
            difficult: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOutcome {
    TruePositive {
        gt: usize,
    },
    FalsePositive,
    /// Overlaps only a difficult ground truth.
    Ignored,
}

/// Greedy matching in score order (ties by index). A detection is a true
/// positive iff the highest-IoU ground truth among the same-class,
/// non-difficult, still-unmatched ones has IoU above `iou_thresh`; that
/// ground truth is then consumed. Otherwise it is ignored if some
/// same-class difficult ground truth clears the threshold, and a false
/// positive if not. Outcomes are returned in input order.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresh: f64,
) -> Vec<MatchOutcome> {
    let mut matched = vec![false; gts.len()];
    let mut out = vec![MatchOutcome::FalsePositive; dets.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        let mut hits_difficult = false;
        for (g, gt) in gts.iter().enumerate() {
            if gt.class_id != d.class_id {
                continue;
            }
            let iou = iou_oriented(&d.obb, &gt.obb);
            if gt.difficult {
                hits_difficult |= iou > iou_thresh;
            } else if !matched[g] && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        out[i] = match best {
            Some((g, iou)) if iou > iou_thresh => {
                matched[g] = true;
                MatchOutcome::TruePositive { gt: g }
            }
            _ if hits_difficult => MatchOutcome::Ignored,
            _ => MatchOutcome::FalsePositive,
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
    /// No ground truth: AP is reported as 0 and left out of the mean.
    pub absent: bool,
}

/// PR curve from true/false positive flags listed in descending score order.
pub fn average_precision(flags: &[bool], n_gt: usize, method: ApMethod) -> PrCurve {
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        recall.push(if n_gt == 0 {
            0.0
        } else {
            tp as f64 / n_gt as f64
        });
        precision.push(tp as f64 / (i + 1) as f64);
    }
    if n_gt == 0 {
        return PrCurve {
            recall,
            precision,
            ap: 0.0,
            absent: true,
        };
    }
    let ap = match method {
        ApMethod::AllPoints => {
            let mut envelope = precision.clone();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut prev = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&envelope) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    PrCurve {
        recall,
        precision,
        ap: ap.clamp(0.0, 1.0),
        absent: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub n_gt: usize,
    pub n_det: usize,
    pub ap: f64,
    pub absent: bool,
}

/// Unweighted mean AP over classes that have ground truth.
pub fn mean_ap(classes: &[ClassReport]) -> Result<f64> {
    let present: Vec<f64> = classes.iter().filter(|c| !c.absent).map(|c| c.ap).collect();
    if present.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: DEFAULT_EVAL_IOU,
            method: ApMethod::AllPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresh: f64,
    pub method: ApMethod,
    pub classes: Vec<ClassReport>,
    pub map: f64,
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageResult {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Matches every image independently, then ranks each class's detections
/// across images by score (ties by image, then detection index).
pub fn evaluate(
    images: &[ImageResult],
    class_names: &[String],
    config: &EvalConfig,
) -> Result<EvalReport> {
    for img in images {
        if let Some(d) = img
            .detections
            .iter()
            .find(|d| d.class_id >= class_names.len())
        {
            return Err(Error::UnknownClass(d.class_id));
        }
        if let Some(g) = img
            .ground_truth
            .iter()
            .find(|g| g.class_id >= class_names.len())
        {
            return Err(Error::UnknownClass(g.class_id));
        }
    }
    let outcomes: Vec<Vec<MatchOutcome>> = images
        .par_iter()
        .map(|img| match_detections(&img.detections, &img.ground_truth, config.iou_thresh))
        .collect();

    let mut ranked: Vec<Vec<(f64, usize, usize, bool)>> = vec![Vec::new(); class_names.len()];
    let mut n_gt = vec![0usize; class_names.len()];
    for (ii, (img, out)) in images.iter().zip(&outcomes).enumerate() {
        for g in img.ground_truth.iter().filter(|g| !g.difficult) {
            n_gt[g.class_id] += 1;
        }
        for (di, (d, o)) in img.detections.iter().zip(out).enumerate() {
            match o {
                MatchOutcome::TruePositive { .. } => {
                    ranked[d.class_id].push((d.score, ii, di, true))
                }
                MatchOutcome::FalsePositive => ranked[d.class_id].push((d.score, ii, di, false)),
                MatchOutcome::Ignored => {}
            }
        }
    }

    let classes: Vec<ClassReport> = ranked
        .into_iter()
        .enumerate()
        .map(|(c, mut list)| {
            list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
            let curve = average_precision(&flags, n_gt[c], config.method);
            ClassReport {
                class_id: c,
                name: class_names[c].clone(),
                n_gt: n_gt[c],
                n_det: flags.len(),
                ap: curve.ap,
                absent: curve.absent,
            }
        })
        .collect();
    let map = mean_ap(&classes)?;
    Ok(EvalReport {
        iou_thresh: config.iou_thresh,
        method: config.method,
        classes,
        map,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "{:<width$}  {:>6}  {:>6}  {:>8}\n",
            "class", "n_gt", "n_det", "AP"
        );
        for c in &self.classes {
            let ap = if c.absent {
                "-".to_string()
            } else {
                format!("{:.4}", c.ap)
            };
            s.push_str(&format!(
                "{:<width$}  {:>6}  {:>6}  {:>8}\n",
                c.name, c.n_gt, c.n_det, ap
            ));
        }
        let method = match self.method {
            ApMethod::AllPoints => "all-points",
            ApMethod::ElevenPoint => "11-point",
        };
        s.push_str(&format!(
            "mAP@{} ({method}): {:.4}\n",
            self.iou_thresh, self.map
        ));
        s
    }
}

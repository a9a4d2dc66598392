//! Proposal-to-ground-truth matching and regression targets.

use serde::{Deserialize, Serialize};

use crate::encoding::{encode, OffsetVector};
use crate::error::{Error, Result};
use crate::geometry::{aligned_hull, iou_aligned, iou_oriented, AlignedBox, OrientedBox};

pub const DEFAULT_POS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub proposal_index: usize,
    /// Matched ground truth; present exactly for positives.
    pub gt_index: Option<usize>,
    pub label: Label,
    /// Best IoU over all ground truths (0 when there are none).
    pub matched_iou: f64,
}

impl Assignment {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// Matches each rotated proposal to its highest-IoU ground truth.
///
/// A proposal is positive when that IoU is strictly above `pos_thresh`. Ties
/// go to the lowest ground-truth index.
pub fn assign_rotated(
    proposals: &[OrientedBox],
    gts: &[OrientedBox],
    pos_thresh: f64,
) -> Result<Vec<Assignment>> {
    assign_with(proposals.len(), gts.len(), pos_thresh, |p, g| {
        iou_oriented(&proposals[p], &gts[g])
    })
}

/// Matches horizontal proposals against the axis-aligned hulls of rotated
/// ground truths. The returned `gt_index` still refers to the rotated box, so
/// targets built from it regress toward the rotated ground truth.
pub fn assign_horizontal(
    proposals: &[AlignedBox],
    gts: &[OrientedBox],
    pos_thresh: f64,
) -> Result<Vec<Assignment>> {
    let hulls: Vec<AlignedBox> = gts.iter().map(aligned_hull).collect();
    assign_with(proposals.len(), gts.len(), pos_thresh, |p, g| {
        iou_aligned(&proposals[p], &hulls[g])
    })
}

fn assign_with(
    n_proposals: usize,
    n_gts: usize,
    pos_thresh: f64,
    iou: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Assignment>> {
    if !(pos_thresh > 0.0 && pos_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "positive IoU threshold must lie in (0, 1), got {pos_thresh}"
        )));
    }
    Ok((0..n_proposals)
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for g in 0..n_gts {
                let v = iou(p, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v > pos_thresh => Assignment {
                    proposal_index: p,
                    gt_index: Some(g),
                    label: Label::Positive,
                    matched_iou: v,
                },
                other => Assignment {
                    proposal_index: p,
                    gt_index: None,
                    label: Label::Negative,
                    matched_iou: other.map_or(0.0, |(_, v)| v),
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    /// `(proposal index, offsets)` for every positive, in proposal order.
    pub regression: Vec<(usize, OffsetVector)>,
    /// One label per proposal.
    pub labels: Vec<Label>,
}

/// Regression targets for the positives of `assignments`.
///
/// Horizontal proposals should be passed through
/// [`AlignedBox::to_oriented`] first.
pub fn build_targets(
    proposals: &[OrientedBox],
    assignments: &[Assignment],
    gts: &[OrientedBox],
) -> Result<Targets> {
    if assignments.len() != proposals.len() {
        return Err(Error::Contract(format!(
            "{} assignments for {} proposals",
            assignments.len(),
            proposals.len()
        )));
    }
    let mut regression = Vec::new();
    let mut labels = Vec::with_capacity(assignments.len());
    for (i, a) in assignments.iter().enumerate() {
        if a.proposal_index != i {
            return Err(Error::Contract(format!(
                "assignment {i} refers to proposal {}",
                a.proposal_index
            )));
        }
        match (a.label, a.gt_index) {
            (Label::Positive, Some(g)) => {
                let gt = gts.get(g).ok_or_else(|| {
                    Error::Contract(format!(
                        "ground truth {g} out of range ({} given)",
                        gts.len()
                    ))
                })?;
                regression.push((i, encode(&proposals[i], gt)));
            }
            (Label::Negative, None) => {}
            _ => {
                return Err(Error::Contract(format!(
                    "assignment {i} has label {:?} with gt {:?}",
                    a.label, a.gt_index
                )))
            }
        }
        labels.push(a.label);
    }
    Ok(Targets { regression, labels })
}

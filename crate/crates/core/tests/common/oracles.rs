//! Slow, obviously-correct reference implementations.

use rroi_core::eval::{GroundTruth, MatchOutcome};
use rroi_core::geometry::{iou_oriented, OrientedBox};
use rroi_core::nms::Detection;

/// Order by descending score, ties by index, via repeated selection.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for p in 1..left.len() {
            if scores[left[p]] > scores[left[best]] {
                best = p;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// The kept set of greedy NMS is the unique subset S in which a box belongs
/// to S exactly when no higher-ranked member of S overlaps it too much. Try
/// every subset and return the one that satisfies that condition.
pub fn nms_by_enumeration(dets: &[Detection], thresh: f64, agnostic: bool) -> Vec<usize> {
    let n = dets.len();
    assert!(n <= 12);
    let order = rank(&dets.iter().map(|d| d.score).collect::<Vec<_>>());
    let pos: Vec<usize> = {
        let mut p = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            p[i] = r;
        }
        p
    };
    let conflicts = |i: usize, j: usize| {
        (agnostic || dets[i].class_id == dets[j].class_id)
            && iou_oriented(&dets[i].obb, &dets[j].obb) > thresh
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let blocked = (0..n).any(|j| member(j) && pos[j] < pos[i] && conflicts(i, j));
            member(i) == !blocked
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "greedy fixed point must be unique");
    let mut kept: Vec<usize> = (0..n).filter(|&i| found[0] & (1 << i) != 0).collect();
    kept.sort_by_key(|&i| pos[i]);
    kept
}

/// (gt index or None, best IoU) per proposal from the full IoU matrix.
pub fn assign_by_matrix(
    props: &[OrientedBox],
    gts: &[OrientedBox],
    thresh: f64,
) -> Vec<(Option<usize>, f64)> {
    props
        .iter()
        .map(|p| {
            let ious: Vec<f64> = gts.iter().map(|g| iou_oriented(p, g)).collect();
            let best = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if ious.is_empty() {
                return (None, 0.0);
            }
            let first = ious.iter().position(|&v| v == best).unwrap();
            (if best > thresh { Some(first) } else { None }, best)
        })
        .collect()
}

/// Step-by-step replay of the matching rule.
pub fn match_by_replay(dets: &[Detection], gts: &[GroundTruth], thresh: f64) -> Vec<MatchOutcome> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![MatchOutcome::FalsePositive; dets.len()];
    for i in rank(&dets.iter().map(|d| d.score).collect::<Vec<_>>()) {
        let candidates: Vec<(usize, f64)> = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| gt.class_id == dets[i].class_id && !gt.difficult && !taken[*g])
            .map(|(g, gt)| (g, iou_oriented(&dets[i].obb, &gt.obb)))
            .collect();
        let best = candidates
            .iter()
            .map(|c| c.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let pick = candidates.iter().find(|c| c.1 == best);
        let difficult_hit = gts.iter().any(|gt| {
            gt.class_id == dets[i].class_id
                && gt.difficult
                && iou_oriented(&dets[i].obb, &gt.obb) > thresh
        });
        out[i] = match pick {
            Some(&(g, v)) if v > thresh => {
                taken[g] = true;
                MatchOutcome::TruePositive { gt: g }
            }
            _ if difficult_hit => MatchOutcome::Ignored,
            _ => MatchOutcome::FalsePositive,
        };
    }
    out
}

/// Exact area under the precision envelope, integrating over the recall
/// steps of each true positive.
pub fn ap_by_steps(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let prec: Vec<f64> = (0..flags.len())
        .map(|i| flags[..=i].iter().filter(|&&f| f).count() as f64 / (i + 1) as f64)
        .collect();
    let mut ap = 0.0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            let envelope = prec[i..].iter().cloned().fold(0.0, f64::max);
            ap += envelope / n_gt as f64;
        }
    }
    ap
}

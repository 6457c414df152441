//! Brute-force reference implementations used to cross-check the sweep-style
//! metric code. Everything here is written as straight-line enumeration and
//! shares no helper with the production path.

use super::{iou, Detection, GroundTruth, MatchLabel, Matching};
use crate::geometry::discretize;

/// Greedy matcher written as plain nested loops over the score order.
pub fn greedy_match(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Selection sort on (score desc, index asc) — deliberately naive.
    for i in 0..order.len() {
        let mut best = i;
        for j in i + 1..order.len() {
            let (a, b) = (order[j], order[best]);
            if dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b) {
                best = j;
            }
        }
        order.swap(i, best);
    }
    let mut matched = vec![false; gts.len()];
    let mut labels = Vec::new();
    for &di in &order {
        let mut best_gi = usize::MAX;
        let mut best_iou = -1.0;
        for gi in 0..gts.len() {
            if gts[gi].image_id != dets[di].image_id || gts[gi].class_id != dets[di].class_id {
                continue;
            }
            if matched[gi] && !gts[gi].difficult {
                continue;
            }
            let o = iou(&dets[di].bbox, &gts[gi].bbox);
            if o >= iou_threshold && o > best_iou {
                best_iou = o;
                best_gi = gi;
            }
        }
        if best_gi == usize::MAX {
            labels.push(MatchLabel::FalsePositive);
        } else if gts[best_gi].difficult {
            labels.push(MatchLabel::Ignored);
        } else {
            matched[best_gi] = true;
            labels.push(MatchLabel::TruePositive {
                ground_truth: best_gi,
            });
        }
    }
    let n_positives = gts.iter().filter(|g| !g.difficult).count();
    Matching {
        order,
        labels,
        n_positives,
    }
}

/// All-points AP by direct enumeration: for the m-th recall level, the
/// interpolated precision is the maximum precision over every prefix that
/// already contains at least m true positives. Quadratic on purpose.
pub fn ap_threshold_enumeration(labels: &[MatchLabel], n_positives: usize) -> f64 {
    if n_positives == 0 {
        return 0.0;
    }
    let kept: Vec<bool> = labels
        .iter()
        .filter_map(|l| match l {
            MatchLabel::Ignored => None,
            MatchLabel::TruePositive { .. } => Some(true),
            MatchLabel::FalsePositive => Some(false),
        })
        .collect();
    let total_tp = kept.iter().filter(|&&t| t).count();
    let mut sum = 0.0;
    for m in 1..=total_tp {
        let mut best = 0.0f64;
        for prefix in 1..=kept.len() {
            let tp = kept[..prefix].iter().filter(|&&t| t).count();
            if tp >= m {
                let p = tp as f64 / prefix as f64;
                if p > best {
                    best = p;
                }
            }
        }
        sum += best;
    }
    sum / n_positives as f64
}

/// AVP by recomputation: rerun the oracle matcher, then independently
/// relabel each true positive by comparing view bins, then apply the
/// enumeration AP.
pub fn avp_recomputed(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
    views: usize,
) -> f64 {
    let m = greedy_match(dets, gts, iou_threshold);
    let mut labels = Vec::new();
    for (slot, &di) in m.order.iter().enumerate() {
        labels.push(match m.labels[slot] {
            MatchLabel::TruePositive { ground_truth } => {
                let a = discretize(dets[di].azimuth, views).expect("views >= 2");
                let b = discretize(gts[ground_truth].azimuth, views).expect("views >= 2");
                if a == b {
                    MatchLabel::TruePositive { ground_truth }
                } else {
                    MatchLabel::FalsePositive
                }
            }
            other => other,
        });
    }
    ap_threshold_enumeration(&labels, m.n_positives)
}

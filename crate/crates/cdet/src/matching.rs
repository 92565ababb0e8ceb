//! Ground-truth assignment to anchors, confidence-based negative filtering,
//! and hard negative mining.

use crate::geometry::{encode, iou, Box, BoxDelta};

/// Per-image labels: boxes plus class ids in [1, c-1] (0 is background).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub boxes: Vec<Box>,
    pub labels: Vec<usize>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorStatus {
    Positive,
    Negative,
    /// Removed from second-stage training and inference by confidence
    /// filtering; never produced by the overlap rules themselves.
    Filtered,
}

/// The result of matching one anchor set against one image's ground truth.
#[derive(Clone, Debug)]
pub struct MatchAssignment {
    pub status: Vec<AnchorStatus>,
    pub matched_gt: Vec<Option<usize>>,
    /// Class id per anchor; 0 for negatives.
    pub l_star: Vec<usize>,
    /// Regression target per anchor; meaningful only for positives.
    pub g_star: Vec<BoxDelta>,
}

impl MatchAssignment {
    pub fn num_positives(&self) -> usize {
        self.status.iter().filter(|s| **s == AnchorStatus::Positive).count()
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.status.len())
            .filter(|&i| self.status[i] == AnchorStatus::Positive)
            .collect()
    }
}

/// Two-step assignment. Step 1 is bipartite: every ground-truth box claims
/// one anchor greedily by descending overlap (ties broken by lower anchor
/// index, then lower ground-truth index), so each GT gets a positive anchor
/// even below the threshold whenever anchors remain. Step 2 marks every
/// still-unclaimed anchor whose best overlap exceeds `pos_threshold` as
/// positive for its best GT. Everything else is negative.
pub fn match_anchors(
    anchors: &[Box],
    gt: &GroundTruth,
    pos_threshold: f64,
    variances: &[f64; 4],
) -> MatchAssignment {
    let n = anchors.len();
    let mut assignment = MatchAssignment {
        status: vec![AnchorStatus::Negative; n],
        matched_gt: vec![None; n],
        l_star: vec![0; n],
        g_star: vec![BoxDelta::default(); n],
    };
    if gt.is_empty() || n == 0 {
        return assignment;
    }

    let overlaps: Vec<Vec<f64>> = gt
        .boxes
        .iter()
        .map(|g| anchors.iter().map(|a| iou(a, g)).collect())
        .collect();

    // Step 1: repeatedly take the best remaining (gt, anchor) pair.
    let mut gt_assigned = vec![false; gt.len()];
    let mut anchor_claimed = vec![false; n];
    for _ in 0..gt.len().min(n) {
        let mut best: Option<(f64, usize, usize)> = None; // (iou, anchor, gt)
        for (g, row) in overlaps.iter().enumerate() {
            if gt_assigned[g] {
                continue;
            }
            for (a, &v) in row.iter().enumerate() {
                if anchor_claimed[a] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bv, ba, bg)) => {
                        v > bv || (v == bv && (a < ba || (a == ba && g < bg)))
                    }
                };
                if better {
                    best = Some((v, a, g));
                }
            }
        }
        let (_, a, g) = best.expect("anchors remain");
        gt_assigned[g] = true;
        anchor_claimed[a] = true;
        set_positive(&mut assignment, a, g, anchors, gt, variances);
    }

    // Step 2: threshold rule for the rest.
    for a in 0..n {
        if anchor_claimed[a] {
            continue;
        }
        let mut best_g = 0;
        let mut best_v = -1.0;
        for (g, row) in overlaps.iter().enumerate() {
            if row[a] > best_v {
                best_v = row[a];
                best_g = g;
            }
        }
        if best_v > pos_threshold {
            set_positive(&mut assignment, a, best_g, anchors, gt, variances);
        }
    }
    assignment
}

fn set_positive(
    assignment: &mut MatchAssignment,
    anchor: usize,
    gt_index: usize,
    anchors: &[Box],
    gt: &GroundTruth,
    variances: &[f64; 4],
) {
    assignment.status[anchor] = AnchorStatus::Positive;
    assignment.matched_gt[anchor] = Some(gt_index);
    assignment.l_star[anchor] = gt.labels[gt_index];
    assignment.g_star[anchor] = encode(&anchors[anchor], &gt.boxes[gt_index], variances);
}

/// Indices of anchors whose first-stage background confidence exceeds theta.
/// With theta = 1.0 nothing is ever filtered (ablation mode).
pub fn filter_negatives(arm_neg_confidence: &[f64], theta: f64) -> Vec<usize> {
    arm_neg_confidence
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > theta)
        .map(|(i, _)| i)
        .collect()
}

/// Marks filtered anchors in an assignment. Positives are demoted too unless
/// `filter_positives` is off; a demoted positive drops out of the positive
/// count and the loss entirely.
pub fn apply_filter(assignment: &mut MatchAssignment, filtered: &[usize], filter_positives: bool) {
    for &i in filtered {
        match assignment.status[i] {
            AnchorStatus::Negative => assignment.status[i] = AnchorStatus::Filtered,
            AnchorStatus::Positive if filter_positives => {
                assignment.status[i] = AnchorStatus::Filtered
            }
            _ => {}
        }
    }
}

/// Chosen hard negatives, ascending by anchor index.
#[derive(Clone, Debug, PartialEq)]
pub struct MiningSelection {
    pub selected: Vec<usize>,
    pub neg_to_pos_ratio: f64,
}

/// Keeps the highest-loss negatives, at most ceil(ratio * positives) of them
/// (ratio * 1 when there are no positives, so background still trains).
/// Ties break toward the lower anchor index. Filtered anchors never mine.
pub fn mine_hard_negatives(
    losses: &[f64],
    assignment: &MatchAssignment,
    ratio: f64,
) -> MiningSelection {
    assert_eq!(losses.len(), assignment.status.len());
    let quota = (ratio * assignment.num_positives().max(1) as f64).ceil() as usize;
    let mut candidates: Vec<usize> = (0..losses.len())
        .filter(|&i| assignment.status[i] == AnchorStatus::Negative)
        .collect();
    candidates.sort_by(|&i, &j| {
        losses[j]
            .partial_cmp(&losses[i])
            .expect("non-finite mining loss")
            .then(i.cmp(&j))
    });
    candidates.truncate(quota);
    candidates.sort_unstable();
    MiningSelection {
        selected: candidates,
        neg_to_pos_ratio: ratio,
    }
}

//! Average-precision evaluation and false-positive taxonomy.
//!
//! Matching protocol per class: detections sorted by score (ties by lower
//! image id, then input order) greedily claim the highest-overlap unmatched
//! ground-truth box of their class when that overlap reaches the threshold;
//! everything else is a false positive, duplicates included. Ground truth
//! flagged difficult never counts toward recall; a detection whose only
//! qualifying overlap is with a difficult box is ignored entirely.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::Annotation;
use crate::geometry::{iou, Box};
use crate::pipeline::DetectionRecord;

/// IoU thresholds averaged for COCO-style AP: 0.50 to 0.95 in steps of 0.05.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Which classes count as mutually confusable for the Sim category.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGroups {
    /// Group id per class id; index 0 (background) is unused.
    group_of: Vec<usize>,
}

impl ClassGroups {
    /// Every class in one group: any cross-class confusion counts as Sim.
    pub fn all_similar(num_classes: usize) -> ClassGroups {
        ClassGroups {
            group_of: vec![0; num_classes],
        }
    }

    /// Explicit groups, e.g. `[[1, 2], [3]]`. Classes absent from every
    /// group land in singleton groups.
    pub fn from_groups(num_classes: usize, groups: &[Vec<usize>]) -> ClassGroups {
        let mut group_of: Vec<usize> = (0..num_classes).map(|c| groups.len() + c).collect();
        for (gid, members) in groups.iter().enumerate() {
            for &c in members {
                assert!(c >= 1 && c < num_classes, "class id {c} out of range");
                group_of[c] = gid;
            }
        }
        ClassGroups { group_of }
    }

    pub fn similar(&self, a: usize, b: usize) -> bool {
        self.group_of[a] == self.group_of[b]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// 11-point interpolation instead of the all-points area.
    pub eleven_point: bool,
    pub groups: ClassGroups,
}

impl EvalOptions {
    pub fn new(num_classes: usize) -> EvalOptions {
        EvalOptions {
            iou_threshold: 0.5,
            eleven_point: false,
            groups: ClassGroups::all_similar(num_classes),
        }
    }
}

/// One point of a precision-recall sweep, taken after each detection in rank
/// order. `interpolated` is the running maximum of precision over all points
/// at this recall or higher.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub interpolated: f64,
}

/// False positives by category: poor localization, similar-class confusion,
/// other-class confusion, background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FpCounts {
    pub loc: usize,
    pub sim: usize,
    pub oth: usize,
    pub bg: usize,
}

impl FpCounts {
    pub fn total(&self) -> usize {
        self.loc + self.sim + self.oth + self.bg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassEval {
    pub class_id: usize,
    pub ap: f64,
    pub num_gt: usize,
    pub num_dets: usize,
    pub tp: usize,
    pub fp: usize,
    pub pr: Vec<PrPoint>,
    pub fp_counts: FpCounts,
    /// No ground truth and no detections: excluded from the mAP mean.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub eleven_point: bool,
    pub per_class: Vec<ClassEval>,
    pub map: f64,
    pub coco_ap: f64,
}

/// Per-detection match outcome at one threshold, in rank order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    /// Best qualifying overlap was a difficult ground truth: dropped.
    Ignored,
}

struct ClassMatch {
    /// Indices into the original detections slice, rank order.
    order: Vec<usize>,
    outcomes: Vec<Outcome>,
    num_gt: usize,
}

/// Rank order shared by every evaluation: score descending, then lower image
/// id, then original input position.
fn rank_order(dets: &[DetectionRecord], class_id: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].detection.class_id == class_id)
        .collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .detection
            .score
            .partial_cmp(&dets[i].detection.score)
            .expect("non-finite detection score")
            .then(dets[i].image_id.cmp(&dets[j].image_id))
            .then(i.cmp(&j))
    });
    order
}

fn match_class(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    class_id: usize,
    iou_threshold: f64,
) -> ClassMatch {
    // Ground truth of this class per image, split by difficulty.
    let mut easy: HashMap<u64, Vec<Box>> = HashMap::new();
    let mut hard: HashMap<u64, Vec<Box>> = HashMap::new();
    let mut num_gt = 0usize;
    for ann in gts {
        for o in &ann.objects {
            if o.class_id != class_id {
                continue;
            }
            if o.difficult {
                hard.entry(ann.image_id).or_default().push(o.bbox);
            } else {
                easy.entry(ann.image_id).or_default().push(o.bbox);
                num_gt += 1;
            }
        }
    }

    let order = rank_order(dets, class_id);
    let mut claimed: HashMap<u64, Vec<bool>> = HashMap::new();
    let mut outcomes = Vec::with_capacity(order.len());
    for &di in &order {
        let d = &dets[di];
        let boxes = easy.get(&d.image_id);
        let claimed_flags = claimed
            .entry(d.image_id)
            .or_insert_with(|| vec![false; boxes.map_or(0, Vec::len)]);
        let mut best: Option<(usize, f64)> = None;
        if let Some(boxes) = boxes {
            for (gi, g) in boxes.iter().enumerate() {
                if claimed_flags[gi] {
                    continue;
                }
                let v = iou(g, &d.detection.bbox);
                if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
        }
        let outcome = if let Some((gi, _)) = best {
            claimed_flags[gi] = true;
            Outcome::Tp
        } else if hard
            .get(&d.image_id)
            .is_some_and(|hs| hs.iter().any(|g| iou(g, &d.detection.bbox) >= iou_threshold))
        {
            Outcome::Ignored
        } else {
            Outcome::Fp
        };
        outcomes.push(outcome);
    }
    ClassMatch {
        order,
        outcomes,
        num_gt,
    }
}

fn pr_points(m: &ClassMatch) -> Vec<PrPoint> {
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &o in &m.outcomes {
        match o {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => continue,
        }
        let recall = if m.num_gt == 0 {
            0.0
        } else {
            tp as f64 / m.num_gt as f64
        };
        points.push(PrPoint {
            recall,
            precision: tp as f64 / (tp + fp) as f64,
            interpolated: 0.0,
        });
    }
    // Interpolated precision: best precision at this recall or beyond.
    // Points sharing a recall value form one group, so the max must include
    // every member before any of them is assigned.
    let mut running = 0.0f64;
    let mut hi = points.len();
    while hi > 0 {
        let r = points[hi - 1].recall;
        let mut lo = hi;
        while lo > 0 && points[lo - 1].recall == r {
            lo -= 1;
        }
        for p in &points[lo..hi] {
            running = running.max(p.precision);
        }
        for p in &mut points[lo..hi] {
            p.interpolated = running;
        }
        hi = lo;
    }
    points
}

fn ap_from_points(points: &[PrPoint], eleven_point: bool) -> f64 {
    if eleven_point {
        let mut total = 0.0;
        for i in 0..=10 {
            let r = i as f64 / 10.0;
            let p = points
                .iter()
                .filter(|p| p.recall + 1e-12 >= r)
                .map(|p| p.interpolated)
                .fold(0.0f64, f64::max);
            total += p;
        }
        total / 11.0
    } else {
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for p in points {
            if p.recall > prev_recall {
                ap += (p.recall - prev_recall) * p.interpolated;
                prev_recall = p.recall;
            }
        }
        ap
    }
}

/// Average precision for one class (all-points interpolation unless
/// `eleven_point`). Zero ground truth gives 0.
pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    class_id: usize,
    iou_threshold: f64,
    eleven_point: bool,
) -> f64 {
    let m = match_class(dets, gts, class_id, iou_threshold);
    ap_from_points(&pr_points(&m), eleven_point)
}

fn map_for(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    num_classes: usize,
    iou_threshold: f64,
    eleven_point: bool,
) -> f64 {
    let aps: Vec<f64> = (1..num_classes)
        .into_par_iter()
        .filter_map(|class_id| {
            let m = match_class(dets, gts, class_id, iou_threshold);
            if m.num_gt == 0 && m.order.is_empty() {
                None
            } else {
                Some(ap_from_points(&pr_points(&m), eleven_point))
            }
        })
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Mean AP over classes at a single threshold; classes with neither ground
/// truth nor detections are skipped.
pub fn mean_average_precision(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    num_classes: usize,
    iou_threshold: f64,
) -> f64 {
    map_for(dets, gts, num_classes, iou_threshold, false)
}

/// Mean of `mean_average_precision` over the ten COCO thresholds.
pub fn coco_ap(dets: &[DetectionRecord], gts: &[Annotation], num_classes: usize) -> f64 {
    let ts = coco_thresholds();
    let sum: f64 = ts
        .iter()
        .map(|&t| map_for(dets, gts, num_classes, t, false))
        .sum();
    sum / ts.len() as f64
}

/// The weak-overlap threshold separating background confusion from the other
/// false-positive categories.
pub const WEAK_IOU: f64 = 0.1;

/// Classifies every false positive of `class_id`. Categories are decided in
/// order: Loc when any same-class ground truth overlaps at least the weak
/// threshold (covering both poor localization and duplicate detections),
/// then Sim / Oth by the best-overlapping other-class ground truth's group,
/// else BG.
pub fn fp_taxonomy(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    class_id: usize,
    iou_threshold: f64,
    groups: &ClassGroups,
) -> FpCounts {
    let m = match_class(dets, gts, class_id, iou_threshold);
    let mut by_image: HashMap<u64, Vec<(usize, Box)>> = HashMap::new();
    for ann in gts {
        let entry = by_image.entry(ann.image_id).or_default();
        for o in &ann.objects {
            entry.push((o.class_id, o.bbox));
        }
    }
    let mut counts = FpCounts::default();
    for (&di, &outcome) in m.order.iter().zip(&m.outcomes) {
        if outcome != Outcome::Fp {
            continue;
        }
        let d = &dets[di];
        let mut same = 0.0f64;
        let mut other: Option<(usize, f64)> = None;
        for (gc, gb) in by_image.get(&d.image_id).map_or(&[][..], Vec::as_slice) {
            let v = iou(gb, &d.detection.bbox);
            if *gc == class_id {
                same = same.max(v);
            } else if other.map_or(true, |(_, bv)| v > bv) {
                other = Some((*gc, v));
            }
        }
        if same >= WEAK_IOU {
            counts.loc += 1;
        } else if let Some((gc, _)) = other.filter(|&(_, v)| v >= WEAK_IOU) {
            if groups.similar(gc, class_id) {
                counts.sim += 1;
            } else {
                counts.oth += 1;
            }
        } else {
            counts.bg += 1;
        }
    }
    counts
}

/// Full evaluation: per-class AP and taxonomy at the configured threshold,
/// mAP over non-skipped classes, and the COCO-style threshold average.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    num_classes: usize,
    opts: &EvalOptions,
) -> EvalReport {
    assert!(num_classes >= 2, "need at least one foreground class");
    let per_class: Vec<ClassEval> = (1..num_classes)
        .into_par_iter()
        .map(|class_id| {
            let m = match_class(dets, gts, class_id, opts.iou_threshold);
            let pr = pr_points(&m);
            let tp = m.outcomes.iter().filter(|o| **o == Outcome::Tp).count();
            let fp = m.outcomes.iter().filter(|o| **o == Outcome::Fp).count();
            let skipped = m.num_gt == 0 && m.order.is_empty();
            let ap = if skipped {
                0.0
            } else {
                ap_from_points(&pr, opts.eleven_point)
            };
            ClassEval {
                class_id,
                ap,
                num_gt: m.num_gt,
                num_dets: m.order.len(),
                tp,
                fp,
                fp_counts: fp_taxonomy(dets, gts, class_id, opts.iou_threshold, &opts.groups),
                pr,
                skipped,
            }
        })
        .collect();
    let active: Vec<&ClassEval> = per_class.iter().filter(|c| !c.skipped).collect();
    let map = if active.is_empty() {
        0.0
    } else {
        active.iter().map(|c| c.ap).sum::<f64>() / active.len() as f64
    };
    EvalReport {
        iou_threshold: opts.iou_threshold,
        eleven_point: opts.eleven_point,
        map,
        coco_ap: coco_ap(dets, gts, num_classes),
        per_class,
    }
}

/// Renders the report as stable plain text (6 decimal places everywhere), so
/// identical inputs produce identical bytes.
pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "detection evaluation");
    let _ = writeln!(s, "iou threshold: {:.2}", report.iou_threshold);
    let _ = writeln!(
        s,
        "interpolation: {}",
        if report.eleven_point {
            "11-point"
        } else {
            "all-points"
        }
    );
    let skipped = report.per_class.iter().filter(|c| c.skipped).count();
    let _ = writeln!(
        s,
        "classes: {} evaluated, {} skipped",
        report.per_class.len() - skipped,
        skipped
    );
    let _ = writeln!(s, "mAP@{:.2}: {:.6}", report.iou_threshold, report.map);
    let _ = writeln!(s, "coco AP@[0.50:0.95]: {:.6}", report.coco_ap);
    for c in &report.per_class {
        if c.skipped {
            let _ = writeln!(s, "class {}: skipped (no ground truth, no detections)", c.class_id);
            continue;
        }
        let _ = writeln!(
            s,
            "class {}: ap {:.6} gt {} dets {} tp {} fp {} | fp breakdown: loc {} sim {} oth {} bg {}",
            c.class_id,
            c.ap,
            c.num_gt,
            c.num_dets,
            c.tp,
            c.fp,
            c.fp_counts.loc,
            c.fp_counts.sim,
            c.fp_counts.oth,
            c.fp_counts.bg
        );
    }
    s
}

/// Renders a false-positive-focused view of the report: per-class counts by
/// error type plus a grand total. Same stability guarantee as `render_report`.
pub fn render_fp_analysis(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "false positive analysis");
    let _ = writeln!(s, "iou threshold: {:.2}", report.iou_threshold);
    let mut total = FpCounts::default();
    for c in &report.per_class {
        if c.skipped {
            continue;
        }
        let _ = writeln!(
            s,
            "class {}: fp {} | loc {} sim {} oth {} bg {}",
            c.class_id,
            c.fp,
            c.fp_counts.loc,
            c.fp_counts.sim,
            c.fp_counts.oth,
            c.fp_counts.bg
        );
        total.loc += c.fp_counts.loc;
        total.sim += c.fp_counts.sim;
        total.oth += c.fp_counts.oth;
        total.bg += c.fp_counts.bg;
    }
    let _ = writeln!(
        s,
        "total: fp {} | loc {} sim {} oth {} bg {}",
        total.total(),
        total.loc,
        total.sim,
        total.oth,
        total.bg
    );
    s
}

/// One PR-curve file per class: `recall precision interpolated`, 6 decimals.
pub fn render_pr_points(points: &[PrPoint]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = writeln!(s, "{:.6} {:.6} {:.6}", p.recall, p.precision, p.interpolated);
    }
    s
}

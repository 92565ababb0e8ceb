//! Box arithmetic, jaccard overlap, offset coding, and non-maximum suppression.
//!
//! Boxes are half-open real rectangles: area = (xmax - xmin) * (ymax - ymin),
//! no +1 pixel convention, so overlap ratios are exact under coordinate scaling.

/// Offset coding divisors for (dx, dy, dw, dh); they rescale the four
/// regression channels so center and size errors train at similar magnitude.
pub const VARIANCES: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// Axis-aligned rectangle in image coordinates, corner form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Box {
    /// Builds a box, swapping corners if given out of order so that
    /// xmax >= xmin and ymax >= ymin always hold.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Box {
        Box {
            xmin: x0.min(x1),
            ymin: y0.min(y1),
            xmax: x0.max(x1),
            ymax: y0.max(y1),
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Box {
        Box::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// (cx, cy, w, h) center form; exact inverse of `from_center` up to
    /// floating tolerance.
    pub fn center_form(&self) -> (f64, f64, f64, f64) {
        (
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
            self.xmax - self.xmin,
            self.ymax - self.ymin,
        )
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_finite(&self) -> bool {
        self.xmin.is_finite() && self.ymin.is_finite() && self.xmax.is_finite() && self.ymax.is_finite()
    }

    /// Clamps the box to [0, w] x [0, h]. May produce a zero-area box when
    /// the input lies entirely outside the image.
    pub fn clip(&self, w: f64, h: f64) -> Box {
        Box {
            xmin: self.xmin.clamp(0.0, w),
            ymin: self.ymin.clamp(0.0, h),
            xmax: self.xmax.clamp(0.0, w),
            ymax: self.ymax.clamp(0.0, h),
        }
    }
}

/// Intersection area of two boxes; 0 when they do not overlap.
pub fn intersection(a: &Box, b: &Box) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    w * h
}

/// Jaccard overlap: intersection over union, in [0, 1]. Degenerate boxes
/// (zero area) yield 0.
pub fn iou(a: &Box, b: &Box) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Unitless center/log-size offsets between an anchor and a target box.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dw.is_finite() && self.dh.is_finite()
    }
}

/// Offsets that carry `anchor` onto `target`:
/// dx = (cx_t - cx_a) / (w_a * v0), dw = ln(w_t / w_a) / v2, dy/dh analogous.
///
/// Both boxes must have positive width and height.
pub fn encode(anchor: &Box, target: &Box, variances: &[f64; 4]) -> BoxDelta {
    let (acx, acy, aw, ah) = anchor.center_form();
    let (tcx, tcy, tw, th) = target.center_form();
    assert!(aw > 0.0 && ah > 0.0, "degenerate anchor in encode");
    assert!(tw > 0.0 && th > 0.0, "degenerate target in encode");
    BoxDelta {
        dx: (tcx - acx) / (aw * variances[0]),
        dy: (tcy - acy) / (ah * variances[1]),
        dw: (tw / aw).ln() / variances[2],
        dh: (th / ah).ln() / variances[3],
    }
}

/// Inverse of `encode`. With `clip_to = Some((w, h))` the decoded box is
/// clamped to the image extent; anchors themselves are never clipped.
pub fn decode(anchor: &Box, delta: &BoxDelta, variances: &[f64; 4], clip_to: Option<(f64, f64)>) -> Box {
    assert!(delta.is_finite(), "non-finite delta in decode");
    let (acx, acy, aw, ah) = anchor.center_form();
    assert!(aw > 0.0 && ah > 0.0, "degenerate anchor in decode");
    let cx = acx + delta.dx * variances[0] * aw;
    let cy = acy + delta.dy * variances[1] * ah;
    let w = aw * (delta.dw * variances[2]).exp();
    let h = ah * (delta.dh * variances[3]).exp();
    let out = Box::from_center(cx, cy, w, h);
    match clip_to {
        Some((iw, ih)) => out.clip(iw, ih),
        None => out,
    }
}

/// One scored, classified box; the unit flowing through NMS, evaluation,
/// and analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    /// Class id >= 1; 0 is reserved for background and never emitted.
    pub class_id: usize,
    pub score: f64,
    pub bbox: Box,
}

/// Greedy non-maximum suppression over detections of a single class.
///
/// Scans in descending score order (ties broken by lower original index),
/// keeping a detection only if its iou with every prior survivor is <=
/// `overlap`, up to `keep` survivors. Output is in selection order, i.e.
/// descending score.
pub fn nms(dets: &[Detection], overlap: f64, keep: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .expect("non-finite score in nms")
            .then(i.cmp(&j))
    });
    let mut survivors: Vec<Detection> = Vec::new();
    for &i in &order {
        if survivors.len() >= keep {
            break;
        }
        let candidate = dets[i];
        if survivors.iter().all(|s| iou(&s.bbox, &candidate.bbox) <= overlap) {
            survivors.push(candidate);
        }
    }
    survivors
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Overlap by brute rasterization: lay a `pitch` grid over both boxes and
    /// count cell centers falling inside each. Independent of the closed form.
    fn iou_raster(a: &Box, b: &Box, pitch: f64) -> f64 {
        let x0 = a.xmin.min(b.xmin);
        let y0 = a.ymin.min(b.ymin);
        let x1 = a.xmax.max(b.xmax);
        let y1 = a.ymax.max(b.ymax);
        let nx = ((x1 - x0) / pitch).ceil() as usize;
        let ny = ((y1 - y0) / pitch).ceil() as usize;
        let mut inter = 0u64;
        let mut union = 0u64;
        for iy in 0..ny {
            let cy = y0 + (iy as f64 + 0.5) * pitch;
            for ix in 0..nx {
                let cx = x0 + (ix as f64 + 0.5) * pitch;
                let in_a = cx > a.xmin && cx < a.xmax && cy > a.ymin && cy < a.ymax;
                let in_b = cx > b.xmin && cx < b.xmax && cy > b.ymin && cy < b.ymax;
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> Box {
        let x = rng.gen_range(-10.0..10.0);
        let y = rng.gen_range(-10.0..10.0);
        let w = rng.gen_range(0.1..8.0);
        let h = rng.gen_range(0.1..8.0);
        Box::new(x, y, x + w, y + h)
    }

    #[test]
    fn iou_identity() {
        let b = Box::new(1.0, 2.0, 4.0, 7.0);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(iou(&Box::new(0.0, 0.0, 1.0, 1.0), &Box::new(2.0, 2.0, 3.0, 3.0)), 0.0);
    }

    #[test]
    fn iou_offset_unit_squares() {
        // Two 2x2 boxes offset by (1,1): intersection 1, union 7.
        let a = Box::new(0.0, 0.0, 2.0, 2.0);
        let b = Box::new(1.0, 1.0, 3.0, 3.0);
        let v = iou(&a, &b);
        assert!((v - 1.0 / 7.0).abs() < 1e-12, "iou = {v}");
        let r = iou_raster(&a, &b, 0.01);
        assert!((v - r).abs() < 1e-3, "closed form {v} vs raster {r}");
    }

    #[test]
    fn iou_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn center_form_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let b = random_box(&mut rng);
            let (cx, cy, w, h) = b.center_form();
            let back = Box::from_center(cx, cy, w, h);
            assert!((back.xmin - b.xmin).abs() < 1e-9);
            assert!((back.ymin - b.ymin).abs() < 1e-9);
            assert!((back.xmax - b.xmax).abs() < 1e-9);
            assert!((back.ymax - b.ymax).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_identity_is_zero() {
        let a = Box::new(2.0, 3.0, 6.0, 9.0);
        let d = encode(&a, &a, &VARIANCES);
        assert_eq!(d, BoxDelta::default());
        let back = decode(&a, &BoxDelta::default(), &VARIANCES, None);
        assert!((back.xmin - a.xmin).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let t = random_box(&mut rng);
            let d = encode(&a, &t, &VARIANCES);
            let back = decode(&a, &d, &VARIANCES, None);
            assert!((back.xmin - t.xmin).abs() < 1e-6);
            assert!((back.ymin - t.ymin).abs() < 1e-6);
            assert!((back.xmax - t.xmax).abs() < 1e-6);
            assert!((back.ymax - t.ymax).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_doubles_width() {
        // dw = ln(2)/v2 scales width by exactly 2 and leaves height alone.
        let a = Box::from_center(10.0, 10.0, 4.0, 4.0);
        let d = BoxDelta {
            dx: 0.0,
            dy: 0.0,
            dw: 2.0f64.ln() / VARIANCES[2],
            dh: 0.0,
        };
        let out = decode(&a, &d, &VARIANCES, None);
        assert!((out.width() - 8.0).abs() < 1e-9);
        assert!((out.height() - 4.0).abs() < 1e-9);
        let (cx, cy, _, _) = out.center_form();
        assert!((cx - 10.0).abs() < 1e-9);
        assert!((cy - 10.0).abs() < 1e-9);
    }

    #[test]
    fn decode_clips_to_image() {
        let a = Box::from_center(2.0, 2.0, 10.0, 10.0);
        let out = decode(&a, &BoxDelta::default(), &VARIANCES, Some((8.0, 8.0)));
        assert_eq!(out, Box::new(0.0, 0.0, 7.0, 7.0));
    }

    fn det(score: f64, b: Box) -> Detection {
        Detection {
            class_id: 1,
            score,
            bbox: b,
        }
    }

    #[test]
    fn nms_single_survives() {
        let d = vec![det(0.7, Box::new(0.0, 0.0, 1.0, 1.0))];
        assert_eq!(nms(&d, 0.45, 200), d);
    }

    #[test]
    fn nms_identical_boxes_keep_highest() {
        let b = Box::new(0.0, 0.0, 2.0, 2.0);
        let d = vec![det(0.8, b), det(0.9, b)];
        let out = nms(&d, 0.45, 200);
        assert_eq!(out, vec![det(0.9, b)]);
    }

    #[test]
    fn nms_tie_breaks_by_lower_index() {
        // iou = 3.0625 / 4.9375 ~ 0.62, above the 0.45 threshold.
        let b = Box::new(0.0, 0.0, 2.0, 2.0);
        let c = Box::new(0.25, 0.25, 2.25, 2.25);
        let d = vec![det(0.9, c), det(0.9, b)];
        let out = nms(&d, 0.45, 200);
        assert_eq!(out, vec![det(0.9, c)]);
    }

    /// Straightforward quadratic re-derivation: repeatedly take the best
    /// remaining detection and drop everything overlapping it too much.
    fn nms_oracle(dets: &[Detection], overlap: f64, keep: usize) -> Vec<Detection> {
        let mut alive: Vec<usize> = (0..dets.len()).collect();
        let mut out = Vec::new();
        while out.len() < keep && !alive.is_empty() {
            let mut best = alive[0];
            for &i in &alive {
                if dets[i].score > dets[best].score {
                    best = i;
                }
            }
            out.push(dets[best]);
            alive.retain(|&i| i != best && iou(&dets[i].bbox, &dets[best].bbox) <= overlap);
        }
        out
    }

    #[test]
    fn nms_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x = rng.gen_range(0.0..20.0);
                    let y = rng.gen_range(0.0..20.0);
                    let w = rng.gen_range(1.0..6.0);
                    let h = rng.gen_range(1.0..6.0);
                    det(rng.gen_range(0.0..1.0), Box::new(x, y, x + w, y + h))
                })
                .collect();
            let keep = rng.gen_range(1..40);
            assert_eq!(nms(&dets, 0.45, keep), nms_oracle(&dets, 0.45, keep));
        }
    }

    #[test]
    fn nms_idempotent_and_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let dets: Vec<Detection> = (0..30)
                .map(|_| {
                    let x = rng.gen_range(0.0..15.0);
                    let y = rng.gen_range(0.0..15.0);
                    det(rng.gen_range(0.0..1.0), Box::new(x, y, x + 3.0, y + 3.0))
                })
                .collect();
            let once = nms(&dets, 0.45, 200);
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    assert!(iou(&a.bbox, &b.bbox) <= 0.45);
                }
            }
            assert_eq!(nms(&once, 0.45, 200), once);
        }
    }
}

//! Joint two-stage objective: softmax cross-entropy for classification plus
//! smooth L1 for box regression, each stage normalized by its own positive
//! count. A stage with zero positives contributes exactly nothing, mined
//! negatives included.

use crate::geometry::BoxDelta;
use crate::matching::{AnchorStatus, MatchAssignment, MiningSelection};
use serde::{Deserialize, Serialize};

/// Per-step loss terms. `total` is the optimized scalar; the four components
/// are already divided by their stage's positive count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub arm_cls: f64,
    pub arm_reg: f64,
    pub odm_cls: f64,
    pub odm_reg: f64,
    pub total: f64,
    pub n_arm: usize,
    pub n_odm: usize,
}

impl LossBreakdown {
    pub fn from_stages(arm: StageLoss, odm: StageLoss) -> LossBreakdown {
        LossBreakdown {
            arm_cls: arm.cls,
            arm_reg: arm.reg,
            odm_cls: odm.cls,
            odm_reg: odm.reg,
            total: arm.cls + arm.reg + odm.cls + odm.reg,
            n_arm: arm.n,
            n_odm: odm.n,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arm_cls.is_finite()
            && self.arm_reg.is_finite()
            && self.odm_cls.is_finite()
            && self.odm_reg.is_finite()
            && self.total.is_finite()
    }
}

/// One stage's normalized loss terms and its normalizer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageLoss {
    pub cls: f64,
    pub reg: f64,
    pub n: usize,
}

/// One stage's flat per-anchor predictions, in anchor-grid order.
#[derive(Clone, Copy)]
pub struct StagePreds<'a> {
    /// anchor * classes + j
    pub logits: &'a [f64],
    pub classes: usize,
    /// anchor * 4 + d
    pub deltas: &'a [f64],
}

/// Softmax cross-entropy of one logit vector against a target index.
/// Overwrites `grad` with d loss / d logits = softmax(logits) - onehot.
pub fn softmax_ce(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(logits.len(), grad.len());
    debug_assert!(target < logits.len());
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &z) in grad.iter_mut().zip(logits) {
        let e = (z - m).exp();
        *g = e;
        sum += e;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    grad[target] -= 1.0;
    sum.ln() + m - logits[target]
}

/// Smooth L1 over matching slices: per coordinate 0.5 x^2 inside |x| < 1,
/// |x| - 0.5 outside. Overwrites `grad` with clamp(x, -1, 1).
pub fn smooth_l1_loss(pred: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(target) {
        let x = p - t;
        if x.abs() < 1.0 {
            total += 0.5 * x * x;
            *g = x;
        } else {
            total += x.abs() - 0.5;
            *g = x.signum();
        }
    }
    total
}

/// Background cross-entropy for every anchor still eligible as a negative;
/// other anchors get 0. Feeds hard negative mining.
pub fn negative_cls_losses(preds: StagePreds, assignment: &MatchAssignment) -> Vec<f64> {
    let k = preds.classes;
    let mut scratch = vec![0.0; k];
    assignment
        .status
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            AnchorStatus::Negative => softmax_ce(&preds.logits[i * k..(i + 1) * k], 0, &mut scratch),
            _ => 0.0,
        })
        .collect()
}

fn delta4(d: &BoxDelta) -> [f64; 4] {
    [d.dx, d.dy, d.dw, d.dh]
}

/// One stage of the joint objective. Classification runs over positives plus
/// the mined negatives, regression over positives only, both summed in
/// ascending anchor order and divided by the positive count. With zero
/// positives every term is dropped and no gradient is written.
///
/// `binary` collapses positive labels to 1 (first-stage objectness); otherwise
/// the matched class id is the target. Gradients accumulate into the buffers
/// pre-scaled by 1/n.
pub fn stage_loss(
    preds: StagePreds,
    assignment: &MatchAssignment,
    mining: &MiningSelection,
    binary: bool,
    g_logits: &mut [f64],
    g_deltas: &mut [f64],
) -> StageLoss {
    let k = preds.classes;
    let anchors = assignment.status.len();
    assert_eq!(preds.logits.len(), anchors * k);
    assert_eq!(preds.deltas.len(), anchors * 4);
    assert_eq!(g_logits.len(), preds.logits.len());
    assert_eq!(g_deltas.len(), preds.deltas.len());

    let positives = assignment.positive_indices();
    let n = positives.len();
    if n == 0 {
        return StageLoss::default();
    }
    let inv_n = 1.0 / n as f64;

    let mut terms: Vec<(usize, usize)> = Vec::with_capacity(n + mining.selected.len());
    for &i in &positives {
        let target = if binary { 1 } else { assignment.l_star[i] };
        debug_assert!(target >= 1 && target < k);
        terms.push((i, target));
    }
    for &i in &mining.selected {
        debug_assert_eq!(assignment.status[i], AnchorStatus::Negative);
        terms.push((i, 0));
    }
    terms.sort_by_key(|t| t.0);

    let mut cls = 0.0;
    let mut scratch = vec![0.0; k];
    for &(i, target) in &terms {
        cls += softmax_ce(&preds.logits[i * k..(i + 1) * k], target, &mut scratch);
        for (g, s) in g_logits[i * k..(i + 1) * k].iter_mut().zip(&scratch) {
            *g += inv_n * s;
        }
    }

    let mut reg = 0.0;
    let mut scratch4 = [0.0; 4];
    for &i in &positives {
        let target = delta4(&assignment.g_star[i]);
        reg += smooth_l1_loss(&preds.deltas[i * 4..(i + 1) * 4], &target, &mut scratch4);
        for (g, s) in g_deltas[i * 4..(i + 1) * 4].iter_mut().zip(&scratch4) {
            *g += inv_n * s;
        }
    }

    StageLoss {
        cls: cls * inv_n,
        reg: reg * inv_n,
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::AnchorStatus::{Filtered, Negative, Positive};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assignment(
        status: Vec<AnchorStatus>,
        l_star: Vec<usize>,
        g_star: Vec<BoxDelta>,
    ) -> MatchAssignment {
        let n = status.len();
        MatchAssignment {
            matched_gt: vec![None; n],
            status,
            l_star,
            g_star,
        }
    }

    fn no_mining() -> MiningSelection {
        MiningSelection {
            selected: vec![],
            neg_to_pos_ratio: 3.0,
        }
    }

    fn mined(selected: Vec<usize>) -> MiningSelection {
        MiningSelection {
            selected,
            neg_to_pos_ratio: 3.0,
        }
    }

    fn zero_delta() -> BoxDelta {
        BoxDelta::default()
    }

    #[test]
    fn equal_logits_cost_ln2() {
        let mut g = [0.0; 2];
        let loss = softmax_ce(&[0.7, 0.7], 1, &mut g);
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let mut g = [0.0; 2];
        let loss = softmax_ce(&[-20.0, 20.0], 1, &mut g);
        assert!(loss >= 0.0 && loss < 1e-8);
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        for c in 2..8 {
            let logits = vec![1.25; c];
            let mut g = vec![0.0; c];
            let loss = softmax_ce(&logits, 0, &mut g);
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        // Straight-line reimplementation: plain exp ratios, no max shift.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let c = rng.gen_range(2..6);
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let target = rng.gen_range(0..c);
            let mut g = vec![0.0; c];
            let got = softmax_ce(&logits, target, &mut g);
            let denom: f64 = logits.iter().map(|z| z.exp()).sum();
            let want = -(logits[target].exp() / denom).ln();
            assert!((got - want).abs() < 1e-9, "got {got} want {want}");
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut g = vec![0.0; 5];
        softmax_ce(&logits, 2, &mut g);
        let eps = 1e-6;
        for i in 0..5 {
            let mut hi = logits.clone();
            hi[i] += eps;
            let mut lo = logits.clone();
            lo[i] -= eps;
            let mut s = vec![0.0; 5];
            let numeric = (softmax_ce(&hi, 2, &mut s) - softmax_ce(&lo, 2, &mut s)) / (2.0 * eps);
            assert!((g[i] - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn smooth_l1_closed_form_values() {
        let mut g = [0.0; 1];
        assert_eq!(smooth_l1_loss(&[3.0], &[3.0], &mut g), 0.0);
        assert_eq!(g[0], 0.0);
        assert!((smooth_l1_loss(&[0.5], &[0.0], &mut g) - 0.125).abs() < 1e-15);
        assert!((smooth_l1_loss(&[2.0], &[0.0], &mut g) - 1.5).abs() < 1e-15);
        assert_eq!(g[0], 1.0);
        // Sum over coordinates.
        let mut g4 = [0.0; 4];
        let loss = smooth_l1_loss(&[0.5, 0.0, -2.0, 0.0], &[0.0; 4], &mut g4);
        assert!((loss - (0.125 + 1.5)).abs() < 1e-15);
        assert_eq!(g4, [0.5, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn smooth_l1_gradient_continuous_across_knee() {
        // Derivative approaches 1 from both sides of x = 1.
        let mut g = [0.0; 1];
        let eps = 1e-6;
        for &x in &[1.0 - 1e-4, 1.0 + 1e-4] {
            let numeric = (smooth_l1_loss(&[x + eps], &[0.0], &mut g)
                - smooth_l1_loss(&[x - eps], &[0.0], &mut g))
                / (2.0 * eps);
            assert!((numeric - 1.0).abs() < 1e-3, "at {x}: {numeric}");
        }
        smooth_l1_loss(&[1.0 - 1e-9], &[0.0], &mut g);
        let below = g[0];
        smooth_l1_loss(&[1.0 + 1e-9], &[0.0], &mut g);
        assert!((below - g[0]).abs() < 1e-8);
    }

    #[test]
    fn zero_positives_zero_everything() {
        // Nonempty mining selection and nonzero predictions still vanish.
        let preds = StagePreds {
            logits: &[3.0, -1.0, 2.0, 0.5, -0.5, 1.0],
            classes: 3,
            deltas: &[1.0; 8],
        };
        let a = assignment(
            vec![Negative, Negative],
            vec![0, 0],
            vec![zero_delta(), zero_delta()],
        );
        let mut gl = vec![0.0; 6];
        let mut gd = vec![0.0; 8];
        let s = stage_loss(preds, &a, &mined(vec![0, 1]), false, &mut gl, &mut gd);
        assert_eq!(s, StageLoss::default());
        assert!(gl.iter().all(|&g| g == 0.0));
        assert!(gd.iter().all(|&g| g == 0.0));
        let b = LossBreakdown::from_stages(s, s);
        assert_eq!(b.total, 0.0);
        assert_eq!((b.n_arm, b.n_odm), (0, 0));
    }

    #[test]
    fn two_anchor_scenario_matches_hand_computation() {
        // Anchor 0: positive, class 2 of {0,1,2}; anchor 1: mined negative.
        // Classification: anchor 0 uniform logits -> ln 3; anchor 1 logits
        // (ln 3, 0, 0) target 0 -> ln(5/3). Regression: residuals
        // (0.5, 0, -2, 0) -> 0.125 + 1.5. All divided by n = 1.
        let logits = [0.0, 0.0, 0.0, (3.0f64).ln(), 0.0, 0.0];
        let deltas = [0.7, 0.0, -2.0, 0.0, 9.0, 9.0, 9.0, 9.0];
        let g_star = BoxDelta {
            dx: 0.2,
            dy: 0.0,
            dw: 0.0,
            dh: 0.0,
        };
        let a = assignment(
            vec![Positive, Negative],
            vec![2, 0],
            vec![g_star, zero_delta()],
        );
        let preds = StagePreds {
            logits: &logits,
            classes: 3,
            deltas: &deltas,
        };
        let mut gl = vec![0.0; 6];
        let mut gd = vec![0.0; 8];
        let s = stage_loss(preds, &a, &mined(vec![1]), false, &mut gl, &mut gd);
        let want_cls = (3.0f64).ln() + (5.0f64 / 3.0).ln();
        let want_reg = 0.125 + 1.5;
        assert!((s.cls - want_cls).abs() < 1e-12, "{} vs {want_cls}", s.cls);
        assert!((s.reg - want_reg).abs() < 1e-12);
        assert_eq!(s.n, 1);
        // Positive-anchor classification gradient: softmax(1/3 each) minus
        // one-hot on class 2.
        assert!((gl[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((gl[2] - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
        // Negative anchor's background probability 3/5.
        assert!((gl[3] - (3.0 / 5.0 - 1.0)).abs() < 1e-12);
        // Regression gradient: clamp of residuals, untouched on the negative.
        assert_eq!(&gd[4..], &[0.0; 4]);
        assert!((gd[0] - 0.5).abs() < 1e-12);
        assert!((gd[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_stage_collapses_labels_to_objectness() {
        let logits = [0.0, 0.0];
        let deltas = [0.0; 4];
        let a = assignment(vec![Positive], vec![5], vec![zero_delta()]);
        let preds = StagePreds {
            logits: &logits,
            classes: 2,
            deltas: &deltas,
        };
        let mut gl = vec![0.0; 2];
        let mut gd = vec![0.0; 4];
        let s = stage_loss(preds, &a, &no_mining(), true, &mut gl, &mut gd);
        assert!((s.cls - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn filtered_anchor_contributes_exactly_zero() {
        // A filtered anchor with huge logits changes nothing: it can be
        // neither a positive, nor minable, nor a regression term.
        let base_logits = [0.0, 0.0, 0.0, 0.0];
        let spiked = [0.0, 0.0, 50.0, -50.0];
        let deltas = [0.0; 8];
        let run = |logits: &[f64]| {
            let a = assignment(
                vec![Positive, Filtered],
                vec![1, 1],
                vec![zero_delta(), zero_delta()],
            );
            let mut gl = vec![0.0; 4];
            let mut gd = vec![0.0; 8];
            let s = stage_loss(
                StagePreds {
                    logits,
                    classes: 2,
                    deltas: &deltas,
                },
                &a,
                &no_mining(),
                false,
                &mut gl,
                &mut gd,
            );
            (s, gl)
        };
        let (sa, ga) = run(&base_logits);
        let (sb, gb) = run(&spiked);
        assert_eq!(sa, sb);
        assert_eq!(&ga[2..], &gb[2..]);
        assert!(gb[2..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn negative_reg_targets_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let anchors = 12;
        let logits: Vec<f64> = (0..anchors * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let deltas: Vec<f64> = (0..anchors * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let status: Vec<AnchorStatus> = (0..anchors)
            .map(|i| if i % 3 == 0 { Positive } else { Negative })
            .collect();
        let mk = |garbage: bool| {
            let g_star: Vec<BoxDelta> = status
                .iter()
                .map(|s| match (s, garbage) {
                    (Negative, true) => BoxDelta {
                        dx: 99.0,
                        dy: -99.0,
                        dw: 9.0,
                        dh: -9.0,
                    },
                    _ => zero_delta(),
                })
                .collect();
            let a = assignment(status.clone(), vec![1; anchors], g_star);
            let mut gl = vec![0.0; logits.len()];
            let mut gd = vec![0.0; deltas.len()];
            let s = stage_loss(
                StagePreds {
                    logits: &logits,
                    classes: 2,
                    deltas: &deltas,
                },
                &a,
                &mined(vec![1, 2]),
                true,
                &mut gl,
                &mut gd,
            );
            (s, gl, gd)
        };
        assert_eq!(mk(false), mk(true));
    }

    #[test]
    fn duplicating_positives_preserves_normalized_terms() {
        let logits = [1.0, -1.0, 0.5, 0.25];
        let deltas = [0.3, -0.2, 0.1, 0.0, 0.3, -0.2, 0.1, 0.0];
        let one = assignment(vec![Positive], vec![1], vec![zero_delta()]);
        let two = assignment(vec![Positive, Positive], vec![1, 1], vec![zero_delta(); 2]);
        let mut gl = vec![0.0; 2];
        let mut gd = vec![0.0; 4];
        let s1 = stage_loss(
            StagePreds {
                logits: &logits[..2],
                classes: 2,
                deltas: &deltas[..4],
            },
            &one,
            &no_mining(),
            true,
            &mut gl,
            &mut gd,
        );
        let mut gl2 = vec![0.0; 4];
        let mut gd2 = vec![0.0; 8];
        // Same per-anchor predictions duplicated.
        let dup_logits = [1.0, -1.0, 1.0, -1.0];
        let s2 = stage_loss(
            StagePreds {
                logits: &dup_logits,
                classes: 2,
                deltas: &deltas,
            },
            &two,
            &no_mining(),
            true,
            &mut gl2,
            &mut gd2,
        );
        assert!((s1.cls - s2.cls).abs() < 1e-12);
        assert!((s1.reg - s2.reg).abs() < 1e-12);
    }

    #[test]
    fn anchor_permutation_leaves_totals_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let anchors = 20;
        let classes = 4;
        let logits: Vec<f64> = (0..anchors * classes)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let deltas: Vec<f64> = (0..anchors * 4).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let status: Vec<AnchorStatus> = (0..anchors)
            .map(|i| match i % 4 {
                0 => Positive,
                1 => Filtered,
                _ => Negative,
            })
            .collect();
        let l_star: Vec<usize> = status
            .iter()
            .map(|s| if *s == Positive { rng.gen_range(1..classes) } else { 0 })
            .collect();
        let g_star: Vec<BoxDelta> = (0..anchors)
            .map(|_| BoxDelta {
                dx: rng.gen_range(-0.5..0.5),
                dy: rng.gen_range(-0.5..0.5),
                dw: rng.gen_range(-0.5..0.5),
                dh: rng.gen_range(-0.5..0.5),
            })
            .collect();
        let mined_set: Vec<usize> = (0..anchors)
            .filter(|i| status[*i] == Negative && i % 3 == 2)
            .collect();

        let eval = |perm: &[usize]| {
            let mut pl = vec![0.0; logits.len()];
            let mut pd = vec![0.0; deltas.len()];
            let mut ps = vec![Negative; anchors];
            let mut pls = vec![0; anchors];
            let mut pgs = vec![zero_delta(); anchors];
            for (new, &old) in perm.iter().enumerate() {
                pl[new * classes..(new + 1) * classes]
                    .copy_from_slice(&logits[old * classes..(old + 1) * classes]);
                pd[new * 4..(new + 1) * 4].copy_from_slice(&deltas[old * 4..(old + 1) * 4]);
                ps[new] = status[old];
                pls[new] = l_star[old];
                pgs[new] = g_star[old];
            }
            let mut pm: Vec<usize> = mined_set
                .iter()
                .map(|&old| perm.iter().position(|&p| p == old).unwrap())
                .collect();
            pm.sort_unstable();
            let a = assignment(ps, pls, pgs);
            let mut gl = vec![0.0; pl.len()];
            let mut gd = vec![0.0; pd.len()];
            stage_loss(
                StagePreds {
                    logits: &pl,
                    classes,
                    deltas: &pd,
                },
                &a,
                &mined(pm),
                false,
                &mut gl,
                &mut gd,
            )
        };

        let id: Vec<usize> = (0..anchors).collect();
        let mut shuffled = id.clone();
        for i in (1..anchors).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let a = eval(&id);
        let b = eval(&shuffled);
        assert!((a.cls - b.cls).abs() < 1e-12);
        assert!((a.reg - b.reg).abs() < 1e-12);
        assert_eq!(a.n, b.n);
    }

    #[test]
    fn breakdown_total_is_component_sum() {
        let arm = StageLoss {
            cls: 0.5,
            reg: 0.25,
            n: 4,
        };
        let odm = StageLoss {
            cls: 0.125,
            reg: 0.0625,
            n: 2,
        };
        let b = LossBreakdown::from_stages(arm, odm);
        assert_eq!(b.total, 0.9375);
        assert_eq!((b.n_arm, b.n_odm), (4, 2));
        assert!(b.is_finite());
    }

    #[test]
    fn negative_losses_only_on_negatives() {
        let logits = [5.0, 0.0, 0.0, 5.0, 1.0, 1.0];
        let a = assignment(
            vec![Positive, Filtered, Negative],
            vec![1, 0, 0],
            vec![zero_delta(); 3],
        );
        let preds = StagePreds {
            logits: &logits,
            classes: 2,
            deltas: &[0.0; 12],
        };
        let losses = negative_cls_losses(preds, &a);
        assert_eq!(losses[0], 0.0);
        assert_eq!(losses[1], 0.0);
        assert!((losses[2] - (2.0f64).ln()).abs() < 1e-12);
    }
}

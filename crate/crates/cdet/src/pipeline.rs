//! Training orchestration and the two-step inference cascade.
//!
//! One training step: forward, match tiled anchors for the first stage,
//! decode refined anchors, drop easy negatives past the confidence
//! threshold, re-match the refined anchors for the second stage, mine hard
//! negatives in both stages, take the joint loss, backpropagate, and apply
//! one SGD step. The discrete choices
//! (assignments, mining, filtering, refined anchor geometry) are captured in
//! a `StepPlan` so the loss is a plain differentiable function of the
//! parameters given the plan; refined anchors deliberately carry no gradient
//! back into the first stage's regression head.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{self, AnchorGrid};
use crate::data::{derive_seed, Annotation, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{decode, Box, Detection, VARIANCES};
use crate::loss::{negative_cls_losses, stage_loss, LossBreakdown, StageLoss, StagePreds};
use crate::matching::{
    apply_filter, filter_negatives, match_anchors, mine_hard_negatives, GroundTruth,
    MatchAssignment, MiningSelection,
};
use crate::microdiff::ops::softmax;
use crate::microdiff::{ParameterStore, Tensor};
use crate::network::{extract_head, scatter_head_grads, ForwardState, Network, NetworkConfig};

/// Mined negatives per positive anchor (ceiling applied to the product).
pub const NEG_POS_RATIO: f64 = 3.0;
/// Overlap threshold above which an anchor counts as positive when re-matching.
pub const POS_IOU_THRESHOLD: f64 = 0.5;
/// Candidates kept across all classes before per-class suppression.
pub const TOP_K_PRE_NMS: usize = 400;
/// Per-class suppression overlap.
pub const NMS_OVERLAP: f64 = 0.45;
/// Final per-image detection cap.
pub const TOP_K_FINAL: usize = 200;

/// Optimizer and schedule knobs plus the architecture switches that must
/// agree with the network they train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// (step, learning rate) pairs; the rate of the last pair at or before
    /// the current step applies.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Negative-confidence threshold for anchor filtering.
    pub theta: f64,
    /// Demote first-stage-filtered anchors even when they matched a ground
    /// truth box in the second stage.
    pub filter_positives: bool,
    pub cascade_enabled: bool,
    pub tcb_enabled: bool,
    pub filtering_enabled: bool,
    /// Random flip plus crop during training.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr_schedule: vec![(0, 1e-3)],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 2,
            max_steps: 2000,
            seed: 0,
            theta: 0.99,
            filter_positives: true,
            cascade_enabled: true,
            tcb_enabled: true,
            filtering_enabled: true,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// Copies the architecture switches from a network config so the two
    /// cannot drift apart.
    pub fn for_network(cfg: &NetworkConfig) -> TrainConfig {
        TrainConfig {
            theta: cfg.theta,
            cascade_enabled: cfg.cascade_enabled,
            tcb_enabled: cfg.tcb_enabled,
            filtering_enabled: cfg.filtering_enabled,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_schedule.is_empty() {
            return Err(Error::config("lr_schedule must not be empty"));
        }
        if self.lr_schedule[0].0 != 0 {
            return Err(Error::config("lr_schedule must start at step 0"));
        }
        for pair in self.lr_schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::config("lr_schedule steps must be ascending"));
            }
        }
        if self.lr_schedule.iter().any(|&(_, lr)| !(lr > 0.0) || !lr.is_finite()) {
            return Err(Error::config("learning rates must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config("theta must be in [0, 1]"));
        }
        Ok(())
    }

    /// The architecture switches live in both configs; training refuses to
    /// run if they disagree.
    pub fn check_matches(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.theta != cfg.theta
            || self.cascade_enabled != cfg.cascade_enabled
            || self.tcb_enabled != cfg.tcb_enabled
            || self.filtering_enabled != cfg.filtering_enabled
        {
            return Err(Error::config(
                "train config architecture switches disagree with the network config",
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr_schedule[0].1;
        for &(s, v) in &self.lr_schedule {
            if s <= step {
                lr = v;
            }
        }
        lr
    }

    fn effective_theta(&self) -> f64 {
        if self.filtering_enabled {
            self.theta
        } else {
            1.0
        }
    }
}

/// Ground truth view of an annotation, ready for anchor matching.
pub fn ground_truth(ann: &Annotation) -> GroundTruth {
    GroundTruth {
        boxes: ann.objects.iter().map(|o| o.bbox).collect(),
        labels: ann.objects.iter().map(|o| o.class_id).collect(),
    }
}

/// Second-stage structure for one image.
pub struct OdmPlan {
    pub assignment: MatchAssignment,
    pub mining: MiningSelection,
}

/// Frozen discrete structure of one training step on one image. Given a
/// plan, the loss is differentiable in the parameters; re-planning after a
/// parameter change may alter assignments, mining, or filtering.
pub struct StepPlan {
    pub arm_assignment: MatchAssignment,
    pub arm_mining: MiningSelection,
    pub odm: Option<OdmPlan>,
    /// Anchor geometry the second stage regresses against (tiled anchors
    /// when the cascade is disabled). Held constant under differentiation.
    pub refined: Vec<Box>,
}

fn finite_boxes(boxes: &[Box]) -> bool {
    boxes.iter().all(|b| {
        b.xmin.is_finite() && b.ymin.is_finite() && b.xmax.is_finite() && b.ymax.is_finite()
    })
}

/// Runs the forward pass and fixes every discrete choice of the step.
pub fn build_plan(
    net: &Network,
    store: &ParameterStore,
    image: &Tensor,
    gt: &GroundTruth,
    tc: &TrainConfig,
    grid: &AnchorGrid,
) -> Result<(ForwardState, StepPlan)> {
    let state = net.forward(image, store);
    if !state.all_finite() {
        return Err(Error::numeric("non-finite activation in forward pass"));
    }
    let nr = net.cfg.aspect_ratios.len();
    let fsc = net.cfg.first_stage_classes();
    let first = extract_head(&state.arm_raw, nr, fsc);
    assert_eq!(first.num_anchors(), grid.len(), "head/grid anchor count mismatch");

    let arm_assignment = match_anchors(&grid.boxes, gt, POS_IOU_THRESHOLD, &VARIANCES);
    let arm_preds = StagePreds {
        logits: &first.cls,
        classes: fsc,
        deltas: &first.deltas,
    };
    let arm_neg = negative_cls_losses(arm_preds, &arm_assignment);
    let arm_mining = mine_hard_negatives(&arm_neg, &arm_assignment, NEG_POS_RATIO);

    let (odm, refined) = if net.cfg.tcb_enabled {
        let refined: Vec<Box> = if net.cfg.cascade_enabled {
            (0..grid.len())
                .map(|i| decode(&grid.boxes[i], &first.delta(i), &VARIANCES, None))
                .collect()
        } else {
            grid.boxes.clone()
        };
        if !finite_boxes(&refined) {
            return Err(Error::numeric("non-finite refined anchor"));
        }
        let mut odm_assignment = match_anchors(&refined, gt, POS_IOU_THRESHOLD, &VARIANCES);
        let neg_conf: Vec<f64> = (0..grid.len()).map(|i| softmax(first.logits(i))[0]).collect();
        let filtered = filter_negatives(&neg_conf, tc.effective_theta());
        apply_filter(&mut odm_assignment, &filtered, tc.filter_positives);

        let c = net.cfg.num_classes;
        let second = extract_head(&state.odm_raw, nr, c);
        let odm_preds = StagePreds {
            logits: &second.cls,
            classes: c,
            deltas: &second.deltas,
        };
        let odm_neg = negative_cls_losses(odm_preds, &odm_assignment);
        let odm_mining = mine_hard_negatives(&odm_neg, &odm_assignment, NEG_POS_RATIO);
        (
            Some(OdmPlan {
                assignment: odm_assignment,
                mining: odm_mining,
            }),
            refined,
        )
    } else {
        (None, Vec::new())
    };

    Ok((
        state,
        StepPlan {
            arm_assignment,
            arm_mining,
            odm,
            refined,
        },
    ))
}

/// Evaluates both stage losses under a fixed plan and, when `grads` is given,
/// accumulates d(total)/d(param) into it via the network backward pass.
pub fn plan_losses(
    net: &Network,
    state: &mut ForwardState,
    store: &ParameterStore,
    plan: &StepPlan,
    grads: Option<&mut [Vec<f64>]>,
) -> (StageLoss, StageLoss) {
    let nr = net.cfg.aspect_ratios.len();
    let fsc = net.cfg.first_stage_classes();
    let first = extract_head(&state.arm_raw, nr, fsc);
    let mut g_first_cls = vec![0.0; first.cls.len()];
    let mut g_first_deltas = vec![0.0; first.deltas.len()];
    let arm = stage_loss(
        StagePreds {
            logits: &first.cls,
            classes: fsc,
            deltas: &first.deltas,
        },
        &plan.arm_assignment,
        &plan.arm_mining,
        net.cfg.tcb_enabled,
        &mut g_first_cls,
        &mut g_first_deltas,
    );

    let mut odm = StageLoss::default();
    let mut odm_level_grads: Option<Vec<Vec<f64>>> = None;
    if let Some(op) = &plan.odm {
        let c = net.cfg.num_classes;
        let second = extract_head(&state.odm_raw, nr, c);
        let mut g_cls = vec![0.0; second.cls.len()];
        let mut g_deltas = vec![0.0; second.deltas.len()];
        odm = stage_loss(
            StagePreds {
                logits: &second.cls,
                classes: c,
                deltas: &second.deltas,
            },
            &op.assignment,
            &op.mining,
            false,
            &mut g_cls,
            &mut g_deltas,
        );
        odm_level_grads = Some(scatter_head_grads(&state.odm_raw, nr, c, &g_cls, &g_deltas));
    }

    if let Some(grads) = grads {
        let first_level_grads =
            scatter_head_grads(&state.arm_raw, nr, fsc, &g_first_cls, &g_first_deltas);
        net.backward(state, store, &first_level_grads, odm_level_grads.as_deref(), grads);
    }
    (arm, odm)
}

/// One logged training step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Writes one JSON object per line.
pub fn write_train_log(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::config(format!("cannot serialize train record: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TrainRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, idx + 1, format!("bad train record: {e}")))?;
        records.push(r);
    }
    Ok(records)
}

fn check_dataset(dataset: &Dataset, cfg: &NetworkConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let (w, h) = cfg.image_size;
    for ann in &dataset.annotations {
        if (ann.width, ann.height) != (w, h) {
            return Err(Error::config(format!(
                "image {} is {}x{} but the network expects {w}x{h}",
                ann.image_id, ann.width, ann.height
            )));
        }
        for o in &ann.objects {
            if o.class_id >= cfg.num_classes {
                return Err(Error::config(format!(
                    "image {}: class id {} out of range for {} classes",
                    ann.image_id, o.class_id, cfg.num_classes
                )));
            }
        }
    }
    Ok(())
}

fn batch_dump(
    step: usize,
    lr: f64,
    batch: &[usize],
    dataset: &Dataset,
    losses: &[(StageLoss, StageLoss)],
    culprit: Option<usize>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "non-finite loss at step {step} (lr {lr})");
    for (slot, &idx) in batch.iter().enumerate() {
        let ann = &dataset.annotations[idx];
        let mark = if culprit == Some(slot) { " <- offending" } else { "" };
        let _ = write!(s, "  slot {slot}: image {} ({} objects{mark})", ann.image_id, ann.objects.len());
        if let Some((arm, odm)) = losses.get(slot) {
            let _ = write!(
                s,
                " arm_cls {:.6e} arm_reg {:.6e} odm_cls {:.6e} odm_reg {:.6e}",
                arm.cls, arm.reg, odm.cls, odm.reg
            );
        }
        let _ = writeln!(s);
        if culprit == Some(slot) {
            for o in &ann.objects {
                let _ = writeln!(
                    s,
                    "    class {} box [{}, {}, {}, {}]",
                    o.class_id, o.bbox.xmin, o.bbox.ymin, o.bbox.xmax, o.bbox.ymax
                );
            }
        }
    }
    s
}

/// Runs the SGD loop over the dataset and returns the per-step loss log.
/// Deterministic in (initial parameters, dataset, config): images are drawn
/// in a seed-shuffled epoch order and per-image work is independent, so
/// thread scheduling cannot change the result.
pub fn train(
    net: &Network,
    store: &mut ParameterStore,
    dataset: &Dataset,
    tc: &TrainConfig,
) -> Result<Vec<TrainRecord>> {
    tc.validate()?;
    tc.check_matches(&net.cfg)?;
    check_dataset(dataset, &net.cfg)?;
    let grid = anchors::generate(&net.cfg.anchor_spec())?;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut records = Vec::with_capacity(tc.max_steps);

    for step in 0..tc.max_steps {
        let lr = tc.lr_at(step);
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let store_ref: &ParameterStore = store;
        let per_image: Vec<Result<(StageLoss, StageLoss, Vec<Vec<f64>>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let (image, ann) = if tc.augment {
                    let aug_seed =
                        derive_seed(derive_seed(tc.seed ^ 0x00AE_60E4, step as u64), slot as u64);
                    crate::data::augment(&dataset.images[idx], &dataset.annotations[idx], aug_seed)
                } else {
                    (dataset.images[idx].clone(), dataset.annotations[idx].clone())
                };
                let gt = ground_truth(&ann);
                let (mut state, plan) = build_plan(net, store_ref, &image, &gt, tc, &grid)?;
                let mut grads = store_ref.grad_buffers();
                let (arm, odm) = plan_losses(net, &mut state, store_ref, &plan, Some(&mut grads));
                Ok((arm, odm, grads))
            })
            .collect();

        store.zero_all_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut arm_acc = StageLoss::default();
        let mut odm_acc = StageLoss::default();
        let mut slot_losses: Vec<(StageLoss, StageLoss)> = Vec::with_capacity(batch.len());
        for (slot, result) in per_image.into_iter().enumerate() {
            let (arm, odm, grads) = result.map_err(|e| {
                Error::numeric(format!(
                    "{e}\n{}",
                    batch_dump(step, lr, &batch, dataset, &slot_losses, Some(slot))
                ))
            })?;
            slot_losses.push((arm, odm));
            let total = arm.cls + arm.reg + odm.cls + odm.reg;
            if !total.is_finite() {
                return Err(Error::numeric(batch_dump(
                    step,
                    lr,
                    &batch,
                    dataset,
                    &slot_losses,
                    Some(slot),
                )));
            }
            arm_acc.cls += arm.cls * scale;
            arm_acc.reg += arm.reg * scale;
            arm_acc.n += arm.n;
            odm_acc.cls += odm.cls * scale;
            odm_acc.reg += odm.reg * scale;
            odm_acc.n += odm.n;
            store.accumulate_grads(&grads, scale);
        }
        store.sgd_step(lr, tc.momentum, tc.weight_decay);
        records.push(TrainRecord {
            step,
            lr,
            loss: LossBreakdown::from_stages(arm_acc, odm_acc),
        });
    }
    Ok(records)
}

/// Writes parameters plus the network config echo.
pub fn save_checkpoint(path: &Path, net: &Network, store: &ParameterStore) -> Result<()> {
    store.save(path, &net.cfg.to_echo())
}

/// Rebuilds the network from the stored config echo and validates that the
/// stored parameters match the rebuilt graph name-for-name, shape-for-shape.
pub fn load_checkpoint(path: &Path) -> Result<(Network, ParameterStore)> {
    let (loaded, metadata) = ParameterStore::load(path)?;
    let cfg = NetworkConfig::from_echo(&metadata)?;
    let mut built_store = ParameterStore::new();
    let net = Network::build(cfg, &mut built_store)?;
    net.validate_store(&loaded, &built_store)?;
    Ok((net, loaded))
}

/// Candidate counts at each stage of the inference cascade; each stage can
/// only shrink the set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferTrace {
    pub anchors_total: usize,
    /// Anchors surviving the negative-confidence filter.
    pub entered_second_stage: usize,
    /// (anchor, class) pairs scored before the pre-NMS cap.
    pub candidates_scored: usize,
    pub after_top_k: usize,
    pub after_nms: usize,
    pub emitted: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    anchor: usize,
    class_id: usize,
    score: f64,
    bbox: Box,
}

fn rank(cands: &mut Vec<Candidate>) {
    cands.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("non-finite candidate score")
            .then(a.anchor.cmp(&b.anchor))
            .then(a.class_id.cmp(&b.class_id))
    });
}

/// Greedy same-class suppression over candidates already in rank order;
/// mirrors the detection-level suppression exactly.
fn suppress_class(cands: &[Candidate], overlap: f64) -> Vec<Candidate> {
    let mut survivors: Vec<Candidate> = Vec::new();
    for c in cands {
        if survivors
            .iter()
            .all(|s| crate::geometry::iou(&s.bbox, &c.bbox) <= overlap)
        {
            survivors.push(*c);
        }
    }
    survivors
}

pub fn infer(net: &Network, store: &ParameterStore, image: &Tensor) -> Result<Vec<Detection>> {
    infer_traced(net, store, image).map(|(dets, _)| dets)
}

/// Two-step cascade: first-stage filter by negative confidence, decode
/// refined anchors, second-stage scores and offsets relative to them, then
/// top-400 across classes, per-class suppression at 0.45, and a global
/// top-200. Pure: identical inputs give identical detections.
pub fn infer_traced(
    net: &Network,
    store: &ParameterStore,
    image: &Tensor,
) -> Result<(Vec<Detection>, InferTrace)> {
    let cfg = &net.cfg;
    let (ch, h, w) = image.dims3();
    if ch != cfg.image_channels || (w, h) != cfg.image_size {
        return Err(Error::config(format!(
            "image is {ch}x{h}x{w} but the checkpoint expects {}x{}x{}",
            cfg.image_channels, cfg.image_size.1, cfg.image_size.0
        )));
    }
    let grid = anchors::generate(&cfg.anchor_spec())?;
    let state = net.forward(image, store);
    if !state.all_finite() {
        return Err(Error::numeric("non-finite activation during inference"));
    }
    let nr = cfg.aspect_ratios.len();
    let fsc = cfg.first_stage_classes();
    let c = cfg.num_classes;
    let clip = Some((cfg.image_size.0 as f64, cfg.image_size.1 as f64));
    let theta = cfg.effective_theta();
    let first = extract_head(&state.arm_raw, nr, fsc);

    let mut cands: Vec<Candidate> = Vec::new();
    let mut entered = 0usize;
    if cfg.tcb_enabled {
        let second = extract_head(&state.odm_raw, nr, c);
        for i in 0..grid.len() {
            let neg_conf = softmax(first.logits(i))[0];
            if neg_conf > theta {
                continue;
            }
            entered += 1;
            let refined = if cfg.cascade_enabled {
                decode(&grid.boxes[i], &first.delta(i), &VARIANCES, None)
            } else {
                grid.boxes[i]
            };
            if !finite_boxes(std::slice::from_ref(&refined)) {
                return Err(Error::numeric(format!("non-finite refined anchor {i}")));
            }
            let probs = softmax(second.logits(i));
            let bbox = decode(&refined, &second.delta(i), &VARIANCES, clip);
            for (k, &p) in probs.iter().enumerate().skip(1) {
                cands.push(Candidate {
                    anchor: i,
                    class_id: k,
                    score: p,
                    bbox,
                });
            }
        }
    } else {
        for i in 0..grid.len() {
            let probs = softmax(first.logits(i));
            if probs[0] > theta {
                continue;
            }
            entered += 1;
            let bbox = decode(&grid.boxes[i], &first.delta(i), &VARIANCES, clip);
            for (k, &p) in probs.iter().enumerate().skip(1) {
                cands.push(Candidate {
                    anchor: i,
                    class_id: k,
                    score: p,
                    bbox,
                });
            }
        }
    }

    let candidates_scored = cands.len();
    rank(&mut cands);
    cands.truncate(TOP_K_PRE_NMS);
    let after_top_k = cands.len();

    let mut survivors: Vec<Candidate> = Vec::new();
    for class_id in 1..c {
        let class_cands: Vec<Candidate> =
            cands.iter().copied().filter(|d| d.class_id == class_id).collect();
        survivors.extend(suppress_class(&class_cands, NMS_OVERLAP));
    }
    let after_nms = survivors.len();
    rank(&mut survivors);
    survivors.truncate(TOP_K_FINAL);

    let trace = InferTrace {
        anchors_total: grid.len(),
        entered_second_stage: entered,
        candidates_scored,
        after_top_k,
        after_nms,
        emitted: survivors.len(),
    };
    let dets = survivors
        .into_iter()
        .map(|d| Detection {
            class_id: d.class_id,
            score: d.score,
            bbox: d.bbox,
        })
        .collect();
    Ok((dets, trace))
}

/// One detection attributed to an image, as stored in detections files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub detection: Detection,
}

/// Runs inference over a whole dataset (parallel across images) and returns
/// records tagged with each image's id, in dataset order.
pub fn detect_dataset(
    net: &Network,
    store: &ParameterStore,
    dataset: &Dataset,
) -> Result<Vec<DetectionRecord>> {
    let per_image: Vec<Vec<Detection>> = dataset
        .images
        .par_iter()
        .map(|image| infer(net, store, image))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (ann, dets) in dataset.annotations.iter().zip(per_image) {
        records.extend(dets.into_iter().map(|detection| DetectionRecord {
            image_id: ann.image_id,
            detection,
        }));
    }
    Ok(records)
}

/// Writes line-delimited records: image id, class id, score (6 decimals),
/// then the box corners.
pub fn save_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let d = &r.detection;
        let _ = writeln!(
            out,
            "{} {} {:.6} {} {} {} {}",
            r.image_id, d.class_id, d.score, d.bbox.xmin, d.bbox.ymin, d.bbox.xmax, d.bbox.ymax
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                path,
                lineno,
                format!("detection record needs 7 fields, got {}", fields.len()),
            ));
        }
        let err = |what: &str, raw: &str| {
            Error::parse(path, lineno, format!("bad {what} {raw:?}"))
        };
        let image_id = fields[0].parse().map_err(|_| err("image id", fields[0]))?;
        let class_id: usize = fields[1].parse().map_err(|_| err("class id", fields[1]))?;
        if class_id == 0 {
            return Err(Error::parse(path, lineno, "class id 0 is background"));
        }
        let score: f64 = fields[2].parse().map_err(|_| err("score", fields[2]))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno, "non-finite score"));
        }
        let mut coords = [0.0f64; 4];
        for (slot, raw) in coords.iter_mut().zip(&fields[3..7]) {
            *slot = raw.parse().map_err(|_| err("coordinate", raw))?;
        }
        records.push(DetectionRecord {
            image_id,
            detection: Detection {
                class_id,
                score,
                bbox: Box {
                    xmin: coords[0],
                    ymin: coords[1],
                    xmax: coords[2],
                    ymax: coords[3],
                },
            },
        });
    }
    Ok(records)
}

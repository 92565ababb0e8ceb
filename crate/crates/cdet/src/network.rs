//! The detector graph: a small stride-2 conv backbone, first-stage heads over
//! tiled anchors, top-down transfer blocks, and second-stage heads.
//!
//! The topology is fixed, so backward passes are written out explicitly in
//! reverse order instead of going through a general tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::error::{Error, Result};
use crate::geometry::BoxDelta;
use crate::microdiff::ops;
use crate::microdiff::{ParameterStore, Tensor};

/// Weight initialization family for conv and deconv kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    XavierUniform,
    Gaussian,
}

/// Everything needed to rebuild the graph: serialized into the checkpoint
/// header so inference can validate compatibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// (width, height); must be divisible by every stride.
    pub image_size: (usize, usize),
    pub image_channels: usize,
    pub strides: Vec<usize>,
    pub scale_multiplier: usize,
    pub aspect_ratios: Vec<f64>,
    /// Class count including background at index 0.
    pub num_classes: usize,
    /// Channels of the stride-2 convs between the image and the first level;
    /// length must be log2(strides[0]) - 1.
    pub stem_channels: Vec<usize>,
    /// Trunk channels at each level; length matches `strides`.
    pub level_channels: Vec<usize>,
    /// Channel width inside and out of the transfer blocks.
    pub tcb_channels: usize,
    /// Learned-scale feature-norm init values for the finest levels.
    pub l2norm_inits: Vec<f64>,
    /// Background-confidence threshold for negative anchor filtering.
    pub theta: f64,
    pub init_scheme: InitScheme,
    /// Second stage regresses from refined anchors (two-step) when true,
    /// from the tiled anchors when false.
    pub cascade_enabled: bool,
    /// Builds the transfer blocks and second stage when true; when false the
    /// first-stage heads emit multi-class outputs directly (single-shot).
    pub tcb_enabled: bool,
    /// Applies negative anchor filtering at theta; false behaves as theta = 1.
    pub filtering_enabled: bool,
}

impl Default for NetworkConfig {
    fn default() -> NetworkConfig {
        NetworkConfig::with_defaults((128, 128), 4)
    }
}

impl NetworkConfig {
    pub fn with_defaults(image_size: (usize, usize), num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            image_size,
            image_channels: 1,
            strides: vec![8, 16, 32, 64],
            scale_multiplier: 4,
            aspect_ratios: vec![0.5, 1.0, 2.0],
            num_classes,
            stem_channels: vec![6, 12],
            level_channels: vec![16, 24, 32, 40],
            tcb_channels: 64,
            l2norm_inits: vec![10.0, 8.0],
            theta: 0.99,
            init_scheme: InitScheme::XavierUniform,
            cascade_enabled: true,
            tcb_enabled: true,
            filtering_enabled: true,
        }
    }

    pub fn anchor_spec(&self) -> AnchorSpec {
        AnchorSpec {
            strides: self.strides.clone(),
            scale_multiplier: self.scale_multiplier,
            aspect_ratios: self.aspect_ratios.clone(),
            image_size: self.image_size,
        }
    }

    /// Effective filtering threshold; disabled filtering means no confidence
    /// can exceed it.
    pub fn effective_theta(&self) -> f64 {
        if self.filtering_enabled {
            self.theta
        } else {
            1.0
        }
    }

    /// Class count emitted per anchor by the first-stage heads.
    pub fn first_stage_classes(&self) -> usize {
        if self.tcb_enabled {
            2
        } else {
            self.num_classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.anchor_spec().validate()?;
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.image_channels == 0 {
            return Err(Error::config("image_channels must be positive"));
        }
        if !self.strides.windows(2).all(|w| w[1] == 2 * w[0]) {
            return Err(Error::config(format!(
                "each stride must double the previous one, got {:?}",
                self.strides
            )));
        }
        let s0 = self.strides[0];
        if !s0.is_power_of_two() || s0 < 2 {
            return Err(Error::config(format!(
                "first stride must be a power of two >= 2, got {s0}"
            )));
        }
        let expected_stem = (s0.trailing_zeros() as usize) - 1;
        if self.stem_channels.len() != expected_stem {
            return Err(Error::config(format!(
                "stem_channels must have length {expected_stem} for first stride {s0}, got {}",
                self.stem_channels.len()
            )));
        }
        if self.level_channels.len() != self.strides.len() {
            return Err(Error::config(format!(
                "level_channels length {} must match stride count {}",
                self.level_channels.len(),
                self.strides.len()
            )));
        }
        if self
            .stem_channels
            .iter()
            .chain(&self.level_channels)
            .any(|&c| c == 0)
        {
            return Err(Error::config("channel widths must be positive"));
        }
        if self.tcb_channels == 0 {
            return Err(Error::config("tcb_channels must be positive"));
        }
        if self.l2norm_inits.len() > self.strides.len() {
            return Err(Error::config("more l2norm init scales than pyramid levels"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config(format!(
                "theta must be in [0,1], got {}",
                self.theta
            )));
        }
        if !self.tcb_enabled && (self.cascade_enabled || self.filtering_enabled) {
            return Err(Error::config(
                "cascade and filtering require the transfer blocks; disable them together",
            ));
        }
        Ok(())
    }

    pub fn to_echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_echo(echo: &str) -> Result<NetworkConfig> {
        let cfg: NetworkConfig = toml::from_str(echo)
            .map_err(|e| Error::config(format!("checkpoint config echo does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Structural facts about an assembled graph, for wiring checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphSummary {
    pub levels: usize,
    pub has_tcb: bool,
    pub deconv_count: usize,
    pub first_stage_classes: usize,
    pub second_stage_present: bool,
    pub second_stage_uses_refined_anchors: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    w: usize,
    b: usize,
    in_ch: usize,
    out_ch: usize,
}

#[derive(Clone, Copy, Debug)]
struct TcbIds {
    lat_a: ConvIds,
    lat_b: ConvIds,
    post: ConvIds,
    /// Deconv lifting the next-deeper level's output up to this level;
    /// absent on the deepest level.
    up: Option<usize>,
}

/// The assembled graph: parameter ids resolved against one store layout.
pub struct Network {
    pub cfg: NetworkConfig,
    stem: Vec<ConvIds>,
    level_convs: Vec<ConvIds>,
    l2norm: Vec<Option<usize>>,
    arm: Vec<ConvIds>,
    tcb: Vec<TcbIds>,
    odm: Vec<ConvIds>,
}

fn register_conv(store: &mut ParameterStore, name: &str, ci: usize, co: usize) -> ConvIds {
    let w = store.register(&format!("{name}.w"), &[co, ci, 3, 3]);
    let b = store.register(&format!("{name}.b"), &[co]);
    ConvIds {
        w,
        b,
        in_ch: ci,
        out_ch: co,
    }
}

impl Network {
    /// Registers every parameter in a fixed order and returns the graph.
    pub fn build(cfg: NetworkConfig, store: &mut ParameterStore) -> Result<Network> {
        cfg.validate()?;
        let levels = cfg.strides.len();
        let n = cfg.aspect_ratios.len();

        let mut stem = Vec::new();
        let mut prev = cfg.image_channels;
        for (i, &c) in cfg.stem_channels.iter().enumerate() {
            stem.push(register_conv(store, &format!("stem.{i}"), prev, c));
            prev = c;
        }
        let mut level_convs = Vec::new();
        for (l, &c) in cfg.level_channels.iter().enumerate() {
            level_convs.push(register_conv(store, &format!("level.{l}"), prev, c));
            prev = c;
        }
        let mut l2norm = vec![None; levels];
        for (l, _) in cfg.l2norm_inits.iter().enumerate() {
            l2norm[l] = Some(store.register(&format!("l2norm.{l}"), &[cfg.level_channels[l]]));
        }
        let head_out = n * (cfg.first_stage_classes() + 4);
        let mut arm = Vec::new();
        for l in 0..levels {
            arm.push(register_conv(
                store,
                &format!("arm.{l}"),
                cfg.level_channels[l],
                head_out,
            ));
        }
        let mut tcb = Vec::new();
        let mut odm = Vec::new();
        if cfg.tcb_enabled {
            let t = cfg.tcb_channels;
            for l in 0..levels {
                let lat_a =
                    register_conv(store, &format!("tcb.{l}.lat_a"), cfg.level_channels[l], t);
                let lat_b = register_conv(store, &format!("tcb.{l}.lat_b"), t, t);
                let post = register_conv(store, &format!("tcb.{l}.post"), t, t);
                let up = if l + 1 < levels {
                    Some(store.register(&format!("tcb.{l}.up.w"), &[t, t, 2, 2]))
                } else {
                    None
                };
                tcb.push(TcbIds {
                    lat_a,
                    lat_b,
                    post,
                    up,
                });
            }
            let odm_out = n * (cfg.num_classes + 4);
            for l in 0..levels {
                odm.push(register_conv(store, &format!("odm.{l}"), t, odm_out));
            }
        }
        Ok(Network {
            cfg,
            stem,
            level_convs,
            l2norm,
            arm,
            tcb,
            odm,
        })
    }

    /// Fills all parameters from the configured scheme: conv/deconv kernels
    /// from xavier-uniform or Gaussian(0, 0.01), biases zero, norm scales at
    /// their configured init values.
    pub fn init_params(&self, store: &mut ParameterStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = self.cfg.init_scheme;
        fn fill_conv(
            store: &mut ParameterStore,
            c: &ConvIds,
            scheme: InitScheme,
            rng: &mut ChaCha8Rng,
        ) {
            match scheme {
                InitScheme::XavierUniform => store.fill_xavier(c.w, c.in_ch * 9, c.out_ch * 9, rng),
                InitScheme::Gaussian => store.fill_gaussian(c.w, 0.01, rng),
            }
            store.fill_const(c.b, 0.0);
        }
        let plain: Vec<ConvIds> = self
            .stem
            .iter()
            .chain(&self.level_convs)
            .chain(&self.arm)
            .copied()
            .collect();
        for c in &plain {
            fill_conv(store, c, scheme, &mut rng);
        }
        for t in &self.tcb {
            fill_conv(store, &t.lat_a, scheme, &mut rng);
            fill_conv(store, &t.lat_b, scheme, &mut rng);
            fill_conv(store, &t.post, scheme, &mut rng);
            if let Some(up) = t.up {
                let tc = self.cfg.tcb_channels;
                match scheme {
                    InitScheme::XavierUniform => store.fill_xavier(up, tc * 4, tc * 4, &mut rng),
                    InitScheme::Gaussian => store.fill_gaussian(up, 0.01, &mut rng),
                }
            }
        }
        for c in &self.odm {
            fill_conv(store, c, scheme, &mut rng);
        }
        for (l, id) in self.l2norm.iter().enumerate() {
            if let Some(id) = id {
                store.fill_const(*id, self.cfg.l2norm_inits[l]);
            }
        }
    }

    /// Checks that a loaded store carries exactly the parameters this graph
    /// registered, by name and shape, in order.
    pub fn validate_store(&self, loaded: &ParameterStore, built: &ParameterStore) -> Result<()> {
        if loaded.len() != built.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, the configured network has {}",
                loaded.len(),
                built.len()
            )));
        }
        for (got, want) in loaded.entries().iter().zip(built.entries()) {
            if got.name != want.name || got.tensor.shape() != want.tensor.shape() {
                return Err(Error::config(format!(
                    "checkpoint parameter {} {:?} does not match configured {} {:?}",
                    got.name,
                    got.tensor.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            levels: self.cfg.strides.len(),
            has_tcb: !self.tcb.is_empty(),
            deconv_count: self.tcb.iter().filter(|t| t.up.is_some()).count(),
            first_stage_classes: self.cfg.first_stage_classes(),
            second_stage_present: !self.odm.is_empty(),
            second_stage_uses_refined_anchors: self.cfg.cascade_enabled,
        }
    }

    pub fn forward(&self, image: &Tensor, store: &ParameterStore) -> ForwardState {
        let (c, h, w) = image.dims3();
        assert_eq!(c, self.cfg.image_channels, "image channel mismatch");
        assert_eq!(
            (w, h),
            (self.cfg.image_size.0, self.cfg.image_size.1),
            "image size mismatch"
        );
        let levels = self.level_convs.len();

        let mut trunk: Vec<Tensor> = Vec::with_capacity(self.stem.len() + levels);
        {
            let mut x = image;
            for ids in self.stem.iter().chain(&self.level_convs) {
                let z = ops::conv3x3_forward(x, store.tensor(ids.w), store.tensor(ids.b), 2);
                trunk.push(ops::relu_forward(&z));
                x = trunk.last().unwrap();
            }
        }
        let level_at = |l: usize| self.stem.len() + l;

        let mut pyramid: Vec<Tensor> = Vec::with_capacity(levels);
        for l in 0..levels {
            let t = &trunk[level_at(l)];
            match self.l2norm[l] {
                Some(id) => pyramid.push(ops::l2norm_scale_forward(t, store.tensor(id))),
                None => pyramid.push(t.clone()),
            }
        }

        let arm_raw: Vec<Tensor> = (0..levels)
            .map(|l| {
                let ids = &self.arm[l];
                ops::conv3x3_forward(&pyramid[l], store.tensor(ids.w), store.tensor(ids.b), 1)
            })
            .collect();

        let mut tcb_lat_mid = Vec::new();
        let mut tcb_merged_relu = Vec::new();
        let mut tcb_out: Vec<Tensor> = Vec::new();
        let mut odm_raw = Vec::new();
        if !self.tcb.is_empty() {
            tcb_lat_mid.resize_with(levels, || Tensor::zeros(&[0]));
            tcb_merged_relu.resize_with(levels, || Tensor::zeros(&[0]));
            tcb_out.resize_with(levels, || Tensor::zeros(&[0]));
            // Deepest level first; each finer level consumes the deeper output.
            for l in (0..levels).rev() {
                let ids = &self.tcb[l];
                let a = ops::conv3x3_forward(
                    &pyramid[l],
                    store.tensor(ids.lat_a.w),
                    store.tensor(ids.lat_a.b),
                    1,
                );
                let mid = ops::relu_forward(&a);
                let lat = ops::conv3x3_forward(
                    &mid,
                    store.tensor(ids.lat_b.w),
                    store.tensor(ids.lat_b.b),
                    1,
                );
                let merged = match ids.up {
                    Some(up_w) => {
                        let up = ops::deconv2x_forward(&tcb_out[l + 1], store.tensor(up_w));
                        ops::eltwise_sum(&lat, &up)
                    }
                    None => lat,
                };
                let m1 = ops::relu_forward(&merged);
                let post = ops::conv3x3_forward(
                    &m1,
                    store.tensor(ids.post.w),
                    store.tensor(ids.post.b),
                    1,
                );
                tcb_lat_mid[l] = mid;
                tcb_merged_relu[l] = m1;
                tcb_out[l] = ops::relu_forward(&post);
            }
            odm_raw = (0..levels)
                .map(|l| {
                    let ids = &self.odm[l];
                    ops::conv3x3_forward(&tcb_out[l], store.tensor(ids.w), store.tensor(ids.b), 1)
                })
                .collect();
        }

        ForwardState {
            image: image.clone(),
            trunk,
            pyramid,
            arm_raw,
            tcb_lat_mid,
            tcb_merged_relu,
            tcb_out,
            odm_raw,
        }
    }

    /// Propagates head-output gradients back to every parameter, accumulating
    /// into `grads` (aligned with the store's entry order). The state's
    /// activation gradient buffers are used as scratch, so pass a fresh
    /// forward state.
    pub fn backward(
        &self,
        state: &mut ForwardState,
        store: &ParameterStore,
        arm_grad: &[Vec<f64>],
        odm_grad: Option<&[Vec<f64>]>,
        grads: &mut [Vec<f64>],
    ) {
        let levels = self.level_convs.len();
        assert_eq!(arm_grad.len(), levels);

        // Second-stage heads feed the transfer-block outputs.
        if let Some(odm_grad) = odm_grad {
            assert!(
                !self.odm.is_empty(),
                "second-stage gradients without a second stage"
            );
            assert_eq!(odm_grad.len(), levels);
            for l in 0..levels {
                let ids = &self.odm[l];
                let (gw, gb) = grads_pair(grads, ids.w, ids.b);
                with_detached_grad(&mut state.tcb_out[l], |x, gx| {
                    ops::conv3x3_backward(x, store.tensor(ids.w), &odm_grad[l], 1, gx, gw, gb);
                });
            }
        }

        // Transfer blocks, finest level first: the top-down link pushes
        // gradient into the next-deeper output before that level runs.
        if !self.tcb.is_empty() {
            for l in 0..levels {
                let ids = &self.tcb[l];
                let g_post_out = relu_grad(&state.tcb_out[l]);
                {
                    let (gw, gb) = grads_pair(grads, ids.post.w, ids.post.b);
                    with_detached_grad(&mut state.tcb_merged_relu[l], |x, gx| {
                        ops::conv3x3_backward(
                            x,
                            store.tensor(ids.post.w),
                            &g_post_out,
                            1,
                            gx,
                            gw,
                            gb,
                        );
                    });
                }
                // The eltwise sum routes this gradient unchanged into both the
                // lateral branch and the top-down branch.
                let g_merged = relu_grad(&state.tcb_merged_relu[l]);
                if let Some(up_w) = ids.up {
                    let gw = &mut grads[up_w];
                    with_detached_grad(&mut state.tcb_out[l + 1], |x, gx| {
                        ops::deconv2x_backward(x, store.tensor(up_w), &g_merged, gx, gw);
                    });
                }
                {
                    let (gw, gb) = grads_pair(grads, ids.lat_b.w, ids.lat_b.b);
                    with_detached_grad(&mut state.tcb_lat_mid[l], |x, gx| {
                        ops::conv3x3_backward(x, store.tensor(ids.lat_b.w), &g_merged, 1, gx, gw, gb);
                    });
                }
                let g_lat_a = relu_grad(&state.tcb_lat_mid[l]);
                {
                    let (gw, gb) = grads_pair(grads, ids.lat_a.w, ids.lat_a.b);
                    with_detached_grad(&mut state.pyramid[l], |x, gx| {
                        ops::conv3x3_backward(x, store.tensor(ids.lat_a.w), &g_lat_a, 1, gx, gw, gb);
                    });
                }
            }
        }

        // First-stage heads read the pyramid directly.
        for l in 0..levels {
            let ids = &self.arm[l];
            let (gw, gb) = grads_pair(grads, ids.w, ids.b);
            with_detached_grad(&mut state.pyramid[l], |x, gx| {
                ops::conv3x3_backward(x, store.tensor(ids.w), &arm_grad[l], 1, gx, gw, gb);
            });
        }

        // Feature norms back into the trunk.
        let level_at = |l: usize| self.stem.len() + l;
        for l in 0..levels {
            let t_idx = level_at(l);
            let g_pyramid = std::mem::take(&mut state.pyramid[l].grad);
            match self.l2norm[l] {
                Some(id) => {
                    let gscale = &mut grads[id];
                    with_detached_grad(&mut state.trunk[t_idx], |x, gx| {
                        ops::l2norm_scale_backward(x, store.tensor(id), &g_pyramid, gx, gscale);
                    });
                }
                None => {
                    for (dst, src) in state.trunk[t_idx].grad.iter_mut().zip(&g_pyramid) {
                        *dst += *src;
                    }
                }
            }
            state.pyramid[l].grad = g_pyramid;
        }

        // Trunk chain, deepest first, down through the stem to the image.
        let chain: Vec<ConvIds> = self.stem.iter().chain(&self.level_convs).copied().collect();
        let mut image_grad = vec![0.0; state.image.len()];
        for i in (0..chain.len()).rev() {
            let ids = &chain[i];
            let g_pre = relu_grad(&state.trunk[i]);
            let (gw, gb) = grads_pair(grads, ids.w, ids.b);
            if i == 0 {
                ops::conv3x3_backward(
                    &state.image,
                    store.tensor(ids.w),
                    &g_pre,
                    2,
                    &mut image_grad,
                    gw,
                    gb,
                );
            } else {
                with_detached_grad(&mut state.trunk[i - 1], |x, gx| {
                    ops::conv3x3_backward(x, store.tensor(ids.w), &g_pre, 2, gx, gw, gb);
                });
            }
        }
    }
}

/// Gradient below a relu whose post-activation tensor carries its own
/// incoming gradient in `grad`.
fn relu_grad(y: &Tensor) -> Vec<f64> {
    let mut g = vec![0.0; y.len()];
    ops::relu_backward(y, &y.grad, &mut g);
    g
}

/// Runs `f` with the tensor's gradient buffer temporarily detached, so the
/// tensor's values can be read while its own gradient is written.
fn with_detached_grad<F: FnOnce(&Tensor, &mut [f64])>(t: &mut Tensor, f: F) {
    let mut g = std::mem::take(&mut t.grad);
    f(t, &mut g);
    t.grad = g;
}

/// Two distinct gradient buffers out of the shared slice.
fn grads_pair(grads: &mut [Vec<f64>], w: usize, b: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    assert_ne!(w, b);
    if w < b {
        let (lo, hi) = grads.split_at_mut(b);
        (&mut lo[w], &mut hi[0])
    } else {
        let (lo, hi) = grads.split_at_mut(w);
        (&mut hi[0], &mut lo[b])
    }
}

/// Every cached activation of one forward pass. Backward reuses the tensors'
/// gradient buffers as scratch.
pub struct ForwardState {
    pub image: Tensor,
    /// Post-relu activations of the stem and level convs, in chain order.
    pub trunk: Vec<Tensor>,
    /// Per-level head inputs (feature-normed on the finest levels).
    pub pyramid: Vec<Tensor>,
    pub arm_raw: Vec<Tensor>,
    pub tcb_lat_mid: Vec<Tensor>,
    pub tcb_merged_relu: Vec<Tensor>,
    pub tcb_out: Vec<Tensor>,
    pub odm_raw: Vec<Tensor>,
}

impl ForwardState {
    pub fn all_finite(&self) -> bool {
        self.trunk.iter().all(Tensor::all_finite)
            && self.pyramid.iter().all(Tensor::all_finite)
            && self.arm_raw.iter().all(Tensor::all_finite)
            && self.tcb_out.iter().all(Tensor::all_finite)
            && self.odm_raw.iter().all(Tensor::all_finite)
    }
}

/// Flat per-anchor view of one head's raw conv outputs, in anchor-grid order
/// (level-major, then row, column, ratio).
pub struct HeadView {
    /// Anchor-major class logits: entry anchor * classes + j.
    pub cls: Vec<f64>,
    /// Anchor-major regression outputs: entry anchor * 4 + d.
    pub deltas: Vec<f64>,
    pub classes: usize,
}

impl HeadView {
    pub fn num_anchors(&self) -> usize {
        self.deltas.len() / 4
    }

    pub fn delta(&self, anchor: usize) -> BoxDelta {
        BoxDelta {
            dx: self.deltas[anchor * 4],
            dy: self.deltas[anchor * 4 + 1],
            dw: self.deltas[anchor * 4 + 2],
            dh: self.deltas[anchor * 4 + 3],
        }
    }

    pub fn logits(&self, anchor: usize) -> &[f64] {
        &self.cls[anchor * self.classes..(anchor + 1) * self.classes]
    }
}

/// Gathers per-anchor predictions from per-level head tensors. Channel layout
/// per ratio block: class logits first, then the 4 delta coordinates.
pub fn extract_head(levels: &[Tensor], num_ratios: usize, classes: usize) -> HeadView {
    let block = classes + 4;
    let mut cls = Vec::new();
    let mut deltas = Vec::new();
    for t in levels {
        let (c, h, w) = t.dims3();
        assert_eq!(c, num_ratios * block, "head channel count mismatch");
        for row in 0..h {
            for col in 0..w {
                for k in 0..num_ratios {
                    let base = k * block;
                    for j in 0..classes {
                        cls.push(t.data[((base + j) * h + row) * w + col]);
                    }
                    for d in 0..4 {
                        deltas.push(t.data[((base + classes + d) * h + row) * w + col]);
                    }
                }
            }
        }
    }
    HeadView {
        cls,
        deltas,
        classes,
    }
}

/// Scatters per-anchor gradients back into per-level head-output buffers;
/// exact inverse indexing of `extract_head`.
pub fn scatter_head_grads(
    levels: &[Tensor],
    num_ratios: usize,
    classes: usize,
    g_cls: &[f64],
    g_deltas: &[f64],
) -> Vec<Vec<f64>> {
    let block = classes + 4;
    let mut out: Vec<Vec<f64>> = levels.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut anchor = 0;
    for (t, buf) in levels.iter().zip(&mut out) {
        let (c, h, w) = t.dims3();
        assert_eq!(c, num_ratios * block);
        for row in 0..h {
            for col in 0..w {
                for k in 0..num_ratios {
                    let base = k * block;
                    for j in 0..classes {
                        buf[((base + j) * h + row) * w + col] = g_cls[anchor * classes + j];
                    }
                    for d in 0..4 {
                        buf[((base + classes + d) * h + row) * w + col] = g_deltas[anchor * 4 + d];
                    }
                    anchor += 1;
                }
            }
        }
    }
    assert_eq!(anchor * classes, g_cls.len());
    assert_eq!(anchor * 4, g_deltas.len());
    out
}

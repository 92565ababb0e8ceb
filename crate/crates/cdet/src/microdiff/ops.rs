//! Forward and backward rules for every differentiable op in the network.
//!
//! Convolution is cross-correlation (no kernel flip). Backward functions
//! accumulate into the gradient buffers they are handed, so a buffer can
//! collect contributions from several consumers.

use super::tensor::Tensor;

/// 3x3 cross-correlation with pad 1 and stride 1 or 2.
/// Shapes: x (ci, h, w), weights (co, ci, 3, 3), bias (co).
/// Output spatial dims are ceil(in/stride).
pub fn conv3x3_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    assert!(stride == 1 || stride == 2, "conv3x3 stride must be 1 or 2");
    let (ci, h, wid) = x.dims3();
    let (co, wci, kh, kw) = w.dims4();
    assert_eq!(ci, wci, "conv3x3 channel mismatch");
    assert_eq!((kh, kw), (3, 3));
    assert_eq!(b.shape(), &[co]);
    let oh = h.div_ceil(stride);
    let ow = wid.div_ceil(stride);
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        let out_plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        out_plane.fill(b.data[o]);
        for i in 0..ci {
            let x_plane = &x.data[i * h * wid..(i + 1) * h * wid];
            let wbase = (o * ci + i) * 9;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let wk = w.data[wbase + ky * 3 + kx];
                    accumulate_shifted(out_plane, x_plane, wk, h, wid, oh, ow, ky, kx, stride);
                }
            }
        }
    }
    out
}

/// Adds wk * x[iy, ix] into out[oy, ox] for every in-range pair with
/// iy = oy*stride + ky - 1, ix = ox*stride + kx - 1.
#[allow(clippy::too_many_arguments)]
fn accumulate_shifted(
    out_plane: &mut [f64],
    x_plane: &[f64],
    wk: f64,
    h: usize,
    wid: usize,
    oh: usize,
    ow: usize,
    ky: usize,
    kx: usize,
    stride: usize,
) {
    let (ox_lo, ox_hi) = valid_range(wid, ow, kx, stride);
    if ox_lo >= ox_hi {
        return;
    }
    for oy in 0..oh {
        let iy = (oy * stride + ky) as isize - 1;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let x_row = &x_plane[iy as usize * wid..(iy as usize + 1) * wid];
        let out_row = &mut out_plane[oy * ow + ox_lo..oy * ow + ox_hi];
        let ix0 = ox_lo * stride + kx - 1;
        if stride == 1 {
            let src = &x_row[ix0..ix0 + (ox_hi - ox_lo)];
            for (d, s) in out_row.iter_mut().zip(src) {
                *d += wk * *s;
            }
        } else {
            for (d, s) in out_row.iter_mut().zip(x_row[ix0..].iter().step_by(2)) {
                *d += wk * *s;
            }
        }
    }
}

/// Output-column range [lo, hi) whose sampled input column stays in bounds.
fn valid_range(wid: usize, ow: usize, kx: usize, stride: usize) -> (usize, usize) {
    let lo = if kx == 0 { 1usize.div_ceil(stride) } else { 0 };
    if wid + 1 <= kx {
        return (0, 0);
    }
    // ix = ox*stride + kx - 1 <= wid - 1
    let hi = ((wid - kx) / stride + 1).min(ow);
    (lo.min(hi), hi)
}

/// Accumulates conv3x3 gradients for input, weights, and bias.
pub fn conv3x3_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &[f64],
    stride: usize,
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let (ci, h, wid) = x.dims3();
    let (co, _, _, _) = w.dims4();
    let oh = h.div_ceil(stride);
    let ow = wid.div_ceil(stride);
    assert_eq!(gy.len(), co * oh * ow);
    assert_eq!(gx.len(), x.len());
    assert_eq!(gw.len(), w.len());
    assert_eq!(gb.len(), co);
    for o in 0..co {
        let gy_plane = &gy[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += gy_plane.iter().sum::<f64>();
        for i in 0..ci {
            let x_plane = &x.data[i * h * wid..(i + 1) * h * wid];
            let gx_plane = &mut gx[i * h * wid..(i + 1) * h * wid];
            let wbase = (o * ci + i) * 9;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let (ox_lo, ox_hi) = valid_range(wid, ow, kx, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let wk = w.data[wbase + ky * 3 + kx];
                    let mut wgrad = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let gy_row = &gy_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        let ix0 = ox_lo * stride + kx - 1;
                        if stride == 1 {
                            let x_row = &x_plane[iy * wid + ix0..iy * wid + ix0 + gy_row.len()];
                            let gx_row = &mut gx_plane[iy * wid + ix0..iy * wid + ix0 + gy_row.len()];
                            for ((g, xs), gxs) in gy_row.iter().zip(x_row).zip(gx_row) {
                                wgrad += *g * *xs;
                                *gxs += wk * *g;
                            }
                        } else {
                            let base = iy * wid + ix0;
                            for (j, g) in gy_row.iter().enumerate() {
                                let idx = base + 2 * j;
                                wgrad += *g * x_plane[idx];
                                gx_plane[idx] += wk * *g;
                            }
                        }
                    }
                    gw[wbase + ky * 3 + kx] += wgrad;
                }
            }
        }
    }
}

/// Transposed convolution with a 2x2 kernel and stride 2; output spatial dims
/// are exactly twice the input. Bias-free. Weights are (ci, co, 2, 2).
pub fn deconv2x_forward(x: &Tensor, w: &Tensor) -> Tensor {
    let (ci, h, wid) = x.dims3();
    let (wci, co, kh, kw) = w.dims4();
    assert_eq!(ci, wci, "deconv2x channel mismatch");
    assert_eq!((kh, kw), (2, 2));
    let (oh, ow) = (2 * h, 2 * wid);
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for i in 0..ci {
        let x_plane = &x.data[i * h * wid..(i + 1) * h * wid];
        for o in 0..co {
            let out_plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
            let wbase = (i * co + o) * 4;
            for ky in 0..2usize {
                for kx in 0..2usize {
                    let wk = w.data[wbase + ky * 2 + kx];
                    for y in 0..h {
                        let x_row = &x_plane[y * wid..(y + 1) * wid];
                        let out_row = &mut out_plane[(2 * y + ky) * ow..(2 * y + ky + 1) * ow];
                        for (xv, pair) in x_row.iter().zip(out_row[kx..].chunks_mut(2)) {
                            pair[0] += wk * *xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates deconv2x gradients for input and weights.
pub fn deconv2x_backward(x: &Tensor, w: &Tensor, gy: &[f64], gx: &mut [f64], gw: &mut [f64]) {
    let (ci, h, wid) = x.dims3();
    let (_, co, _, _) = w.dims4();
    let (oh, ow) = (2 * h, 2 * wid);
    assert_eq!(gy.len(), co * oh * ow);
    for i in 0..ci {
        let x_plane = &x.data[i * h * wid..(i + 1) * h * wid];
        let gx_plane = &mut gx[i * h * wid..(i + 1) * h * wid];
        for o in 0..co {
            let gy_plane = &gy[o * oh * ow..(o + 1) * oh * ow];
            let wbase = (i * co + o) * 4;
            for ky in 0..2usize {
                for kx in 0..2usize {
                    let wk = w.data[wbase + ky * 2 + kx];
                    let mut wgrad = 0.0;
                    for y in 0..h {
                        let gy_row = &gy_plane[(2 * y + ky) * ow..(2 * y + ky + 1) * ow];
                        let x_row = &x_plane[y * wid..(y + 1) * wid];
                        let gx_row = &mut gx_plane[y * wid..(y + 1) * wid];
                        for ((xv, gxv), pair) in
                            x_row.iter().zip(gx_row.iter_mut()).zip(gy_row[kx..].chunks(2))
                        {
                            wgrad += *xv * pair[0];
                            *gxv += wk * pair[0];
                        }
                    }
                    gw[wbase + ky * 2 + kx] += wgrad;
                }
            }
        }
    }
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for (o, v) in out.data.iter_mut().zip(&x.data) {
        *o = v.max(0.0);
    }
    out
}

/// Passes gradient where the forward output was strictly positive; the kink
/// at zero gets gradient 0.
pub fn relu_backward(y: &Tensor, gy: &[f64], gx: &mut [f64]) {
    for ((g, yv), gxv) in gy.iter().zip(&y.data).zip(gx.iter_mut()) {
        if *yv > 0.0 {
            *gxv += *g;
        }
    }
}

pub fn eltwise_sum(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "eltwise_sum shape mismatch");
    let mut out = Tensor::zeros(a.shape());
    for ((o, av), bv) in out.data.iter_mut().zip(&a.data).zip(&b.data) {
        *o = av + bv;
    }
    out
}

/// Max-shifted softmax over one logit vector; entries sum to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Jacobian-vector product of softmax: gx_i = y_i * (gy_i - sum_j gy_j y_j).
pub fn softmax_backward(y: &[f64], gy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
    y.iter().zip(gy).map(|(yi, gi)| yi * (gi - dot)).collect()
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for (o, &v) in out.data.iter_mut().zip(&x.data) {
        *o = if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
    }
    out
}

pub fn sigmoid_backward(y: &Tensor, gy: &[f64], gx: &mut [f64]) {
    for ((g, yv), gxv) in gy.iter().zip(&y.data).zip(gx.iter_mut()) {
        *gxv += *g * *yv * (1.0 - *yv);
    }
}

const L2NORM_EPS_SQ: f64 = 1e-20;

/// Normalizes each spatial location's channel vector to unit L2 norm, then
/// multiplies per channel by a learned scale. The epsilon keeps zero vectors
/// at zero output.
pub fn l2norm_scale_forward(x: &Tensor, scale: &Tensor) -> Tensor {
    let (c, h, w) = x.dims3();
    assert_eq!(scale.shape(), &[c]);
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for p in 0..plane {
        let mut sum_sq = 0.0;
        for ch in 0..c {
            let v = x.data[ch * plane + p];
            sum_sq += v * v;
        }
        let inv_norm = 1.0 / (sum_sq + L2NORM_EPS_SQ).sqrt();
        for ch in 0..c {
            out.data[ch * plane + p] = scale.data[ch] * x.data[ch * plane + p] * inv_norm;
        }
    }
    out
}

/// Accumulates l2norm_scale gradients for the input and the per-channel scale.
pub fn l2norm_scale_backward(
    x: &Tensor,
    scale: &Tensor,
    gy: &[f64],
    gx: &mut [f64],
    gscale: &mut [f64],
) {
    let (c, h, w) = x.dims3();
    let plane = h * w;
    assert_eq!(gy.len(), x.len());
    for p in 0..plane {
        let mut sum_sq = 0.0;
        for ch in 0..c {
            let v = x.data[ch * plane + p];
            sum_sq += v * v;
        }
        let norm_sq = sum_sq + L2NORM_EPS_SQ;
        let inv_norm = 1.0 / norm_sq.sqrt();
        // dot = sum_c gy_c * scale_c * x_c
        let mut dot = 0.0;
        for ch in 0..c {
            dot += gy[ch * plane + p] * scale.data[ch] * x.data[ch * plane + p];
        }
        for ch in 0..c {
            let idx = ch * plane + p;
            let xv = x.data[idx];
            gscale[ch] += gy[idx] * xv * inv_norm;
            gx[idx] +=
                gy[idx] * scale.data[ch] * inv_norm - xv * dot * inv_norm / norm_sq;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdiff::gradcheck::{check_tensor_input_grad, weighted_sum, weights_for};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_data(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[1, 5, 5], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data[4] = 1.0; // center tap
        let b = Tensor::zeros(&[1]);
        let y = conv3x3_forward(&x, &w, &b, 1);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_zero_weights_yield_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[2, 4, 4], &mut rng);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::from_data(&[3], vec![0.5, -1.0, 2.0]);
        let y = conv3x3_forward(&x, &w, &b, 1);
        for o in 0..3 {
            for v in &y.data[o * 16..(o + 1) * 16] {
                assert_eq!(*v, b.data[o]);
            }
        }
    }

    #[test]
    fn conv_stride2_output_is_ceil_half() {
        let x = Tensor::zeros(&[1, 5, 7]);
        let w = Tensor::zeros(&[2, 1, 3, 3]);
        let b = Tensor::zeros(&[2]);
        let y = conv3x3_forward(&x, &w, &b, 2);
        assert_eq!(y.shape(), &[2, 3, 4]);
    }

    #[test]
    fn conv_matches_naive_reference() {
        // Triple-loop reference with explicit zero padding.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &stride in &[1usize, 2] {
            let (ci, co, h, wid) = (3, 4, 6, 5);
            let x = random_tensor(&[ci, h, wid], &mut rng);
            let w = random_tensor(&[co, ci, 3, 3], &mut rng);
            let b = random_tensor(&[co], &mut rng);
            let y = conv3x3_forward(&x, &w, &b, stride);
            let (oh, ow) = (h.div_ceil(stride), wid.div_ceil(stride));
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data[o];
                        for i in 0..ci {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wid as isize {
                                        acc += x.data[(i * h + iy as usize) * wid + ix as usize]
                                            * w.data[((o * ci + i) * 3 + ky) * 3 + kx];
                                    }
                                }
                            }
                        }
                        let got = y.data[(o * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12, "stride {stride} at {o},{oy},{ox}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &stride in &[1usize, 2] {
            let x = random_tensor(&[1, 6, 6], &mut rng);
            let w = random_tensor(&[2, 1, 3, 3], &mut rng);
            let b = random_tensor(&[2], &mut rng);
            let y0 = conv3x3_forward(&x, &w, &b, stride);
            let r = weights_for(y0.len(), 5);

            let mut gx = vec![0.0; x.len()];
            let mut gw = vec![0.0; w.len()];
            let mut gb = vec![0.0; b.len()];
            conv3x3_backward(&x, &w, &r, stride, &mut gx, &mut gw, &mut gb);

            let ex = check_tensor_input_grad(&x, &gx, |t| {
                weighted_sum(&conv3x3_forward(t, &w, &b, stride).data, &r)
            });
            let ew = check_tensor_input_grad(&w, &gw, |t| {
                weighted_sum(&conv3x3_forward(&x, t, &b, stride).data, &r)
            });
            let eb = check_tensor_input_grad(&b, &gb, |t| {
                weighted_sum(&conv3x3_forward(&x, &w, t, stride).data, &r)
            });
            assert!(ex < 1e-4 && ew < 1e-4 && eb < 1e-4, "{ex} {ew} {eb}");
        }
    }

    #[test]
    fn deconv_shape_doubles() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 2, 2]);
        let y = deconv2x_forward(&x, &w);
        assert_eq!(y.shape(), &[3, 8, 8]);
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ci, co, h, wid) = (3, 2, 4, 5);
        let x = random_tensor(&[ci, h, wid], &mut rng);
        let w = random_tensor(&[ci, co, 2, 2], &mut rng);
        let y = deconv2x_forward(&x, &w);
        let (oh, ow) = (2 * h, 2 * wid);
        let mut want = vec![0.0; co * oh * ow];
        for i in 0..ci {
            for o in 0..co {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wk = w.data[((i * co + o) * 2 + ky) * 2 + kx];
                        for yy in 0..h {
                            for xx in 0..wid {
                                want[(o * oh + 2 * yy + ky) * ow + 2 * xx + kx] +=
                                    wk * x.data[(i * h + yy) * wid + xx];
                            }
                        }
                    }
                }
            }
        }
        for (a, b) in y.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        let w = random_tensor(&[2, 3, 2, 2], &mut rng);
        let y0 = deconv2x_forward(&x, &w);
        let r = weights_for(y0.len(), 7);
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        deconv2x_backward(&x, &w, &r, &mut gx, &mut gw);
        let ex = check_tensor_input_grad(&x, &gx, |t| weighted_sum(&deconv2x_forward(t, &w).data, &r));
        let ew = check_tensor_input_grad(&w, &gw, |t| weighted_sum(&deconv2x_forward(&x, t).data, &r));
        assert!(ex < 1e-4 && ew < 1e-4, "{ex} {ew}");
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        // Inputs kept away from the kink at zero.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..48)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::from_data(&[3, 4, 4], data);
        let y0 = relu_forward(&x);
        let r = weights_for(y0.len(), 8);
        let mut gx = vec![0.0; x.len()];
        relu_backward(&y0, &r, &mut gx);
        let e = check_tensor_input_grad(&x, &gx, |t| weighted_sum(&relu_forward(t).data, &r));
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn eltwise_sum_with_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&[2, 3, 3], &mut rng);
        let z = Tensor::zeros(&[2, 3, 3]);
        assert_eq!(eltwise_sum(&x, &z).data, x.data);
    }

    #[test]
    fn softmax_uniform_and_normalized() {
        let y = softmax(&[0.25; 4]);
        for v in &y {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let y = softmax(&z);
            let s: f64 = y.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(y.iter().all(|v| v.is_finite()));
        }
        // Max-shift keeps huge logits finite.
        let y = softmax(&[1000.0, 999.0]);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = Tensor::from_data(&[5], (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let r = weights_for(5, 11);
        let y0 = softmax(&z.data);
        let gx = softmax_backward(&y0, &r);
        let e = check_tensor_input_grad(&z, &gx, |t| weighted_sum(&softmax(&t.data), &r));
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn sigmoid_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&[2, 3, 3], &mut rng);
        let y0 = sigmoid_forward(&x);
        let r = weights_for(x.len(), 13);
        let mut gx = vec![0.0; x.len()];
        sigmoid_backward(&y0, &r, &mut gx);
        let e = check_tensor_input_grad(&x, &gx, |t| weighted_sum(&sigmoid_forward(t).data, &r));
        assert!(e < 1e-4, "{e}");
        // Extremes stay finite and bounded.
        let wide = Tensor::from_data(&[2], vec![-500.0, 500.0]);
        let yw = sigmoid_forward(&wide);
        assert!(yw.data[0] >= 0.0 && yw.data[1] <= 1.0);
        assert!(yw.all_finite());
    }

    #[test]
    fn l2norm_rescales_to_scale_norm() {
        // Channel vector (3,4) has norm 5; scale 10 yields (6,8).
        let x = Tensor::from_data(&[2, 1, 1], vec![3.0, 4.0]);
        let scale = Tensor::from_data(&[2], vec![10.0, 10.0]);
        let y = l2norm_scale_forward(&x, &scale);
        assert!((y.data[0] - 6.0).abs() < 1e-9);
        assert!((y.data[1] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn l2norm_zero_vector_stays_zero() {
        let x = Tensor::zeros(&[3, 2, 2]);
        let scale = Tensor::from_data(&[3], vec![10.0, 10.0, 10.0]);
        let y = l2norm_scale_forward(&x, &scale);
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l2norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_tensor(&[3, 2, 2], &mut rng);
        let scale = Tensor::from_data(&[3], vec![10.0, 8.0, 2.5]);
        let y0 = l2norm_scale_forward(&x, &scale);
        let r = weights_for(y0.len(), 15);
        let mut gx = vec![0.0; x.len()];
        let mut gs = vec![0.0; 3];
        l2norm_scale_backward(&x, &scale, &r, &mut gx, &mut gs);
        let ex = check_tensor_input_grad(&x, &gx, |t| {
            weighted_sum(&l2norm_scale_forward(t, &scale).data, &r)
        });
        let es = check_tensor_input_grad(&scale, &gs, |t| {
            weighted_sum(&l2norm_scale_forward(&x, t).data, &r)
        });
        assert!(ex < 1e-4 && es < 1e-4, "{ex} {es}");
    }
}

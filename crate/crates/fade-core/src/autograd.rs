//! Reverse-mode gradients for the operator suite.
//!
//! There is no tape. Each operation has a hand-written vector-Jacobian
//! product (VJP), and composite operations chain them explicitly in reverse
//! order, recomputing the forward intermediates they need. That keeps every
//! gradient a pure function of its inputs and makes the evaluation order,
//! and therefore the bits, deterministic.
//!
//! Every rule is certified against central finite differences in f64 through
//! [`gradcheck_op`]; the checkable operations are listed in
//! [`GRADCHECK_OPS`].

// Multi-gradient returns are tuples on purpose: the arity mirrors the
// forward signature, and naming each combination would not add clarity.
#![allow(clippy::type_complexity)]
#![allow(clippy::needless_range_loop)]

use crate::kernel_gen::{gen_kernels_semishift, Corner, KernelGenParams};
use crate::rng::{init_conv, random_tensor, SplitMix64};
use crate::tensor::{conv2d, out_extent, ConvWeights, Element, OpError, Padding, Tensor4};
use crate::upsample::{gate_generate, gated_blend, reassemble_raw, FadeParams, FusionMode};

/// Gradient of [`conv2d`] with respect to the input, the kernel, and the
/// bias (when present). `grad_out` must have the forward output shape.
pub fn conv2d_vjp<T: Element>(
    input: &Tensor4<T>,
    weights: &ConvWeights<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvWeights<T>), OpError> {
    if stride == 0 {
        return Err(OpError::ZeroStride);
    }
    let (n, ci, ih, iw) = input.shape();
    if ci != weights.c_in() {
        return Err(OpError::ChannelMismatch {
            input: ci,
            weights: weights.c_in(),
        });
    }
    let co = weights.c_out();
    let (kh, kw) = (weights.k_h(), weights.k_w());
    let oh = out_extent(ih, padding.top, padding.bottom, kh, stride)?;
    let ow = out_extent(iw, padding.left, padding.right, kw, stride)?;
    if grad_out.shape() != (n, co, oh, ow) {
        return Err(OpError::ShapeMismatch {
            context: "gradient must match the convolution output",
            expected: (n, co, oh, ow),
            found: grad_out.shape(),
        });
    }

    let mut d_input = Tensor4::zeros(n, ci, ih, iw);
    let mut d_kernel = Tensor4::zeros(co, ci, kh, kw);
    let mut d_bias = weights.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
    for b in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                let y0 = (oy * stride) as isize - padding.top as isize;
                for ox in 0..ow {
                    let x0 = (ox * stride) as isize - padding.left as isize;
                    let g = grad_out.get(b, oc, oy, ox);
                    if let Some(db) = d_bias.as_mut() {
                        db[oc] += g;
                    }
                    for ic in 0..ci {
                        for ky in 0..kh {
                            let iy = y0 + ky as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = x0 + kx as isize;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let w = weights.kernel.get(oc, ic, ky, kx);
                                let v = input.get(b, ic, iy, ix);
                                *d_input.get_mut(b, ic, iy, ix) += g * w;
                                *d_kernel.get_mut(oc, ic, ky, kx) += g * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        d_input,
        ConvWeights {
            kernel: d_kernel,
            bias: d_bias,
        },
    ))
}

/// Gradient of nearest-neighbor ×2 upsampling: each input cell collects the
/// gradients of its four replicas.
#[must_use]
pub fn nn_interpolate_x2_vjp<T: Element>(grad_out: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h2, w2) = grad_out.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut d = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = T::zero();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += grad_out.get(b, ch, 2 * i + dy, 2 * j + dx);
                        }
                    }
                    d.set(b, ch, i, j, acc);
                }
            }
        }
    }
    d
}

/// Gradient of channel softmax given its output `y`: per position,
/// `d_x = y ⊙ (g - Σ_c g·y)`.
#[must_use]
pub fn softmax_channels_vjp<T: Element>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(y.shape(), grad_out.shape());
    let (n, c, h, w) = y.shape();
    let mut d = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let mut dot = T::zero();
                for ch in 0..c {
                    dot += grad_out.get(b, ch, yy, xx) * y.get(b, ch, yy, xx);
                }
                for ch in 0..c {
                    let v = y.get(b, ch, yy, xx) * (grad_out.get(b, ch, yy, xx) - dot);
                    d.set(b, ch, yy, xx, v);
                }
            }
        }
    }
    d
}

/// Gradient of the elementwise sigmoid given its output `y`:
/// `d_x = g · y · (1 - y)`.
#[must_use]
pub fn sigmoid_map_vjp<T: Element>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(y.shape(), grad_out.shape());
    let mut d = y.clone();
    let yd = y.data();
    let gd = grad_out.data();
    for (i, slot) in d.data_mut().iter_mut().enumerate() {
        *slot = gd[i] * yd[i] * (T::one() - yd[i]);
    }
    d
}

/// Gradient of ×2 pixel shuffle: the inverse channel/space permutation.
pub fn pixel_shuffle_x2_vjp<T: Element>(grad_out: &Tensor4<T>) -> Result<Tensor4<T>, OpError> {
    let (n, c, h2, w2) = grad_out.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(OpError::OddSpatialDims { h: h2, w: w2 });
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut d = Tensor4::zeros(n, 4 * c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = 4 * ch + 2 * dy + dx;
                    for i in 0..h {
                        for j in 0..w {
                            d.set(b, src, i, j, grad_out.get(b, ch, 2 * i + dy, 2 * j + dx));
                        }
                    }
                }
            }
        }
    }
    Ok(d)
}

/// Gradient of kernel reassembly with respect to the decoder feature and
/// the (unnormalized) kernel-map weights.
pub fn reassemble_vjp<T: Element>(
    dec: &Tensor4<T>,
    weights: &Tensor4<T>,
    kernel_size: usize,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>), OpError> {
    let (n, c, dh, dw) = dec.shape();
    let (wn, wc, wh, ww) = weights.shape();
    if wn != n || wh != 2 * dh || ww != 2 * dw || wc != kernel_size * kernel_size {
        return Err(OpError::ShapeMismatch {
            context: "kernel map must be (n, K², 2H, 2W) for a (n, C, H, W) input",
            expected: (n, kernel_size * kernel_size, 2 * dh, 2 * dw),
            found: (wn, wc, wh, ww),
        });
    }
    if grad_out.shape() != (n, c, wh, ww) {
        return Err(OpError::ShapeMismatch {
            context: "gradient must match the reassembled output",
            expected: (n, c, wh, ww),
            found: grad_out.shape(),
        });
    }
    let rk = kernel_size / 2;
    let mut d_dec = Tensor4::zeros(n, c, dh, dw);
    let mut d_weights = Tensor4::zeros(wn, wc, wh, ww);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..wh {
                for x in 0..ww {
                    let g = grad_out.get(b, ch, y, x);
                    let (py, px) = (y / 2, x / 2);
                    for u in 0..kernel_size {
                        let iy = py as isize + u as isize - rk as isize;
                        if iy < 0 || iy >= dh as isize {
                            continue;
                        }
                        for v in 0..kernel_size {
                            let ix = px as isize + v as isize - rk as isize;
                            if ix < 0 || ix >= dw as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            let m = u * kernel_size + v;
                            *d_weights.get_mut(b, m, y, x) += g * dec.get(b, ch, iy, ix);
                            *d_dec.get_mut(b, ch, iy, ix) += g * weights.get(b, m, y, x);
                        }
                    }
                }
            }
        }
    }
    Ok((d_dec, d_weights))
}

/// Gradient of the gated blend `enc·g + pre·(1-g)` with respect to all
/// three inputs; the gate gradient sums over feature channels.
pub fn gated_blend_vjp<T: Element>(
    enc: &Tensor4<T>,
    pre: &Tensor4<T>,
    gate: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>), OpError> {
    if enc.shape() != pre.shape() || enc.shape() != grad_out.shape() {
        return Err(OpError::ShapeMismatch {
            context: "blend gradient inputs must match",
            expected: enc.shape(),
            found: grad_out.shape(),
        });
    }
    let (n, c, h, w) = enc.shape();
    if gate.shape() != (n, 1, h, w) {
        return Err(OpError::ShapeMismatch {
            context: "gate must be a single channel at the blend resolution",
            expected: (n, 1, h, w),
            found: gate.shape(),
        });
    }
    let mut d_enc = Tensor4::zeros(n, c, h, w);
    let mut d_pre = Tensor4::zeros(n, c, h, w);
    let mut d_gate = Tensor4::zeros(n, 1, h, w);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let g = gate.get(b, 0, y, x);
                let mut acc = T::zero();
                for ch in 0..c {
                    let go = grad_out.get(b, ch, y, x);
                    d_enc.set(b, ch, y, x, go * g);
                    d_pre.set(b, ch, y, x, go * (T::one() - g));
                    acc += (enc.get(b, ch, y, x) - pre.get(b, ch, y, x)) * go;
                }
                d_gate.set(b, 0, y, x, acc);
            }
        }
    }
    Ok((d_enc, d_pre, d_gate))
}

/// Gradients of the semi-shift kernel generator parameters.
#[derive(Debug, Clone)]
pub struct KernelGenGrads<T> {
    pub alpha_en: ConvWeights<T>,
    pub alpha_de: ConvWeights<T>,
    pub beta: ConvWeights<T>,
}

fn extract_corner<T: Element>(t: &Tensor4<T>, corner: Corner) -> Tensor4<T> {
    let (n, c, h2, w2) = t.shape();
    let (dy, dx) = corner.offsets();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out.set(b, ch, i, j, t.get(b, ch, 2 * i + dy, 2 * j + dx));
                }
            }
        }
    }
    out
}

fn add_into<T: Element>(dst: &mut Tensor4<T>, src: &Tensor4<T>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

/// Gradient of [`gen_kernels_semishift`] with respect to both features and
/// all generator parameters, given the gradient of the normalized kernel
/// map. Backward mirrors the forward structure: softmax, then the decoder
/// branch once, then the four strided encoder passes.
pub fn gen_kernels_semishift_vjp<T: Element>(
    enc: &Tensor4<T>,
    dec: &Tensor4<T>,
    params: &KernelGenParams<T>,
    grad_weights: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, KernelGenGrads<T>), OpError> {
    let y = gen_kernels_semishift(enc, dec, params)?.weights;
    if grad_weights.shape() != y.shape() {
        return Err(OpError::ShapeMismatch {
            context: "gradient must match the kernel map",
            expected: y.shape(),
            found: grad_weights.shape(),
        });
    }
    let r = params.window / 2;
    let g_logits = softmax_channels_vjp(&y, grad_weights);

    // Decoder branch: logits -> beta conv -> compression.
    let g_dec_logits = nn_interpolate_x2_vjp(&g_logits);
    let dec_comp = conv2d(dec, &params.alpha_de, 1, Padding::ZERO)?;
    let (g_dec_comp, d_beta_dec) = conv2d_vjp(
        &dec_comp,
        &params.beta,
        1,
        Padding::uniform(r),
        &g_dec_logits,
    )?;
    let (d_dec, d_alpha_de) = conv2d_vjp(dec, &params.alpha_de, 1, Padding::ZERO, &g_dec_comp)?;

    // Encoder branch: four strided corner passes share beta and the
    // compressed map; their input gradients and kernel gradients sum.
    let enc_comp = conv2d(enc, &params.alpha_en, 1, Padding::ZERO)?;
    let beta_free = params.beta.without_bias();
    let mut g_enc_comp = Tensor4::zeros(enc_comp.n(), enc_comp.c(), enc_comp.h(), enc_comp.w());
    let mut d_beta_kernel = d_beta_dec.kernel;
    for corner in Corner::ALL {
        let g_corner = extract_corner(&g_logits, corner);
        let (gi, dw) = conv2d_vjp(
            &enc_comp,
            &beta_free,
            2,
            corner.encoder_padding(r),
            &g_corner,
        )?;
        add_into(&mut g_enc_comp, &gi);
        add_into(&mut d_beta_kernel, &dw.kernel);
    }
    let (d_enc, d_alpha_en) = conv2d_vjp(enc, &params.alpha_en, 1, Padding::ZERO, &g_enc_comp)?;

    Ok((
        d_enc,
        d_dec,
        KernelGenGrads {
            alpha_en: d_alpha_en,
            alpha_de: d_alpha_de,
            beta: ConvWeights {
                kernel: d_beta_kernel,
                bias: d_beta_dec.bias,
            },
        },
    ))
}

/// Gradients of the full forward pass.
#[derive(Debug, Clone)]
pub struct FadeGrads<T> {
    pub enc: Tensor4<T>,
    pub dec: Tensor4<T>,
    pub kernel_gen: KernelGenGrads<T>,
    /// Present only in gating mode.
    pub gate: Option<ConvWeights<T>>,
}

/// Gradient of [`crate::upsample::fade_forward`] with respect to both
/// features and every parameter, given the gradient of the fused output.
pub fn fade_forward_vjp<T: Element>(
    enc: &Tensor4<T>,
    dec: &Tensor4<T>,
    params: &FadeParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<FadeGrads<T>, OpError> {
    params.validate()?;
    let kernels = gen_kernels_semishift(enc, dec, &params.kernel_gen)?;
    if grad_out.shape() != enc.shape() {
        return Err(OpError::ShapeMismatch {
            context: "gradient must match the fused output",
            expected: enc.shape(),
            found: grad_out.shape(),
        });
    }

    let mut d_enc_direct: Option<Tensor4<T>> = None;
    let mut d_dec_gate: Option<Tensor4<T>> = None;
    let mut d_gate_params: Option<ConvWeights<T>> = None;
    let g_pre = match params.mode {
        FusionMode::None => grad_out.clone(),
        FusionMode::Skipping => {
            d_enc_direct = Some(grad_out.clone());
            grad_out.clone()
        }
        FusionMode::Gating => {
            let gate_params = params.gate.as_ref().ok_or(OpError::MissingGate)?;
            let gate = gate_generate(dec, gate_params)?;
            let pre = reassemble_raw(dec, &kernels.weights, kernels.kernel_size)?;
            let (de, dp, dg) = gated_blend_vjp(enc, &pre, &gate, grad_out)?;
            d_enc_direct = Some(de);
            let d_gate_logits = nn_interpolate_x2_vjp(&sigmoid_map_vjp(&gate, &dg));
            let (dd, dw) = conv2d_vjp(dec, &gate_params.weights, 1, Padding::ZERO, &d_gate_logits)?;
            d_dec_gate = Some(dd);
            d_gate_params = Some(dw);
            dp
        }
    };

    let (d_dec_re, g_kernel_weights) =
        reassemble_vjp(dec, &kernels.weights, kernels.kernel_size, &g_pre)?;
    let (d_enc_gen, d_dec_gen, kernel_gen) =
        gen_kernels_semishift_vjp(enc, dec, &params.kernel_gen, &g_kernel_weights)?;

    let mut d_enc = d_enc_gen;
    if let Some(direct) = &d_enc_direct {
        add_into(&mut d_enc, direct);
    }
    let mut d_dec = d_dec_re;
    add_into(&mut d_dec, &d_dec_gen);
    if let Some(gate_path) = &d_dec_gate {
        add_into(&mut d_dec, gate_path);
    }

    Ok(FadeGrads {
        enc: d_enc,
        dec: d_dec,
        kernel_gen,
        gate: d_gate_params,
    })
}

/// One gradient-descent update: `v = momentum·v + g`, `p -= lr·v`, or the
/// plain `p -= lr·g` when no velocity buffer is supplied.
pub fn sgd_step<T: Element>(
    param: &mut [T],
    grad: &[T],
    velocity: Option<&mut [T]>,
    lr: T,
    momentum: T,
) -> Result<(), OpError> {
    if param.len() != grad.len() {
        return Err(OpError::LengthMismatch {
            expected: param.len(),
            found: grad.len(),
        });
    }
    match velocity {
        Some(v) => {
            if v.len() != param.len() {
                return Err(OpError::LengthMismatch {
                    expected: param.len(),
                    found: v.len(),
                });
            }
            for i in 0..param.len() {
                v[i] = momentum * v[i] + grad[i];
                param[i] -= lr * v[i];
            }
        }
        None => {
            for i in 0..param.len() {
                param[i] -= lr * grad[i];
            }
        }
    }
    Ok(())
}

/// Compares an analytic gradient against central finite differences of a
/// scalar loss. `eps_i = 1e-4 · max(1, |θ_i|)` per coordinate; the relative
/// error denominator is `max(|analytic|, |numeric|, 1e-8)`. Returns the
/// maximum relative error over all coordinates.
pub fn finite_diff_check<F>(
    op: &'static str,
    theta: &[f64],
    analytic: &[f64],
    mut loss: F,
) -> Result<f64, OpError>
where
    F: FnMut(&[f64]) -> Result<f64, OpError>,
{
    if theta.len() != analytic.len() {
        return Err(OpError::LengthMismatch {
            expected: theta.len(),
            found: analytic.len(),
        });
    }
    let mut probe = theta.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..theta.len() {
        let eps = 1e-4 * theta[i].abs().max(1.0);
        probe[i] = theta[i] + eps;
        let up = loss(&probe)?;
        probe[i] = theta[i] - eps;
        let down = loss(&probe)?;
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        let exact = analytic[i];
        if !numeric.is_finite() || !exact.is_finite() {
            return Err(OpError::NonFiniteGradient { op });
        }
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Differentiable operations with a finite-difference certificate.
pub const GRADCHECK_OPS: [&str; 8] = [
    "conv2d",
    "nn_interpolate_x2",
    "softmax_channels",
    "sigmoid_map",
    "reassemble",
    "gated_blend",
    "gen_kernels_semishift",
    "fade_forward",
];

/// Outcome of one gradient certification run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

fn push_tensor(buf: &mut Vec<f64>, t: &Tensor4<f64>) {
    buf.extend_from_slice(t.data());
}

fn push_conv(buf: &mut Vec<f64>, w: &ConvWeights<f64>) {
    push_tensor(buf, &w.kernel);
    if let Some(b) = &w.bias {
        buf.extend_from_slice(b);
    }
}

/// Cursor that rebuilds tensors from a flat coordinate vector in the same
/// order they were packed.
struct Unpack<'a> {
    data: &'a [f64],
    off: usize,
}

impl<'a> Unpack<'a> {
    fn new(data: &'a [f64]) -> Self {
        Unpack { data, off: 0 }
    }

    fn tensor(&mut self, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
        let len = n * c * h * w;
        let slice = &self.data[self.off..self.off + len];
        self.off += len;
        Tensor4::new(n, c, h, w, slice.to_vec()).expect("packed length is exact")
    }

    fn conv(&mut self, co: usize, ci: usize, kh: usize, kw: usize, bias: bool) -> ConvWeights<f64> {
        let kernel = self.tensor(co, ci, kh, kw);
        let bias = bias.then(|| {
            let slice = &self.data[self.off..self.off + co];
            self.off += co;
            slice.to_vec()
        });
        ConvWeights { kernel, bias }
    }

    fn finish(self) {
        debug_assert_eq!(
            self.off,
            self.data.len(),
            "coordinate vector fully consumed"
        );
    }
}

fn sum_squares(t: &Tensor4<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

fn double(t: &Tensor4<f64>) -> Tensor4<f64> {
    t.map(|v| 2.0 * v)
}

/// Certifies one named operation's gradient at a random point: the loss is
/// the sum of squared outputs, its analytic gradient comes from the op's
/// VJP with `grad_out = 2·out`, and every input coordinate (features,
/// kernels, biases) is probed by central differences.
pub fn gradcheck_op(name: &str, seed: u64) -> Result<GradCheckReport, OpError> {
    let mut rng = SplitMix64::new(seed);
    let (theta, analytic, loss): (
        Vec<f64>,
        Vec<f64>,
        Box<dyn FnMut(&[f64]) -> Result<f64, OpError>>,
    ) = match name {
        "conv2d" => {
            let input = random_tensor(&mut rng, 1, 2, 6, 6, -1.0, 1.0);
            let weights = init_conv(&mut rng, 3, 2, 3, 3, true);
            let stride = 2;
            let pad = Padding {
                top: 1,
                bottom: 0,
                left: 1,
                right: 0,
            };
            let out = conv2d(&input, &weights, stride, pad)?;
            let (di, dw) = conv2d_vjp(&input, &weights, stride, pad, &double(&out))?;
            let mut theta = Vec::new();
            push_tensor(&mut theta, &input);
            push_conv(&mut theta, &weights);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &di);
            push_conv(&mut analytic, &dw);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let input = u.tensor(1, 2, 6, 6);
                let weights = u.conv(3, 2, 3, 3, true);
                u.finish();
                Ok(sum_squares(&conv2d(&input, &weights, stride, pad)?))
            };
            (theta, analytic, Box::new(loss))
        }
        "nn_interpolate_x2" => {
            let input = random_tensor(&mut rng, 1, 3, 3, 4, -1.0, 1.0);
            let out = crate::tensor::nn_interpolate_x2(&input);
            let di = nn_interpolate_x2_vjp(&double(&out));
            let mut theta = Vec::new();
            push_tensor(&mut theta, &input);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &di);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let input = u.tensor(1, 3, 3, 4);
                u.finish();
                Ok(sum_squares(&crate::tensor::nn_interpolate_x2(&input)))
            };
            (theta, analytic, Box::new(loss))
        }
        "softmax_channels" => {
            let input = random_tensor(&mut rng, 1, 5, 3, 3, -2.0, 2.0);
            let y = crate::tensor::softmax_channels(&input);
            let di = softmax_channels_vjp(&y, &double(&y));
            let mut theta = Vec::new();
            push_tensor(&mut theta, &input);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &di);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let input = u.tensor(1, 5, 3, 3);
                u.finish();
                Ok(sum_squares(&crate::tensor::softmax_channels(&input)))
            };
            (theta, analytic, Box::new(loss))
        }
        "sigmoid_map" => {
            let input = random_tensor(&mut rng, 1, 2, 4, 4, -3.0, 3.0);
            let y = crate::tensor::sigmoid_map(&input);
            let di = sigmoid_map_vjp(&y, &double(&y));
            let mut theta = Vec::new();
            push_tensor(&mut theta, &input);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &di);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let input = u.tensor(1, 2, 4, 4);
                u.finish();
                Ok(sum_squares(&crate::tensor::sigmoid_map(&input)))
            };
            (theta, analytic, Box::new(loss))
        }
        "reassemble" => {
            let dec = random_tensor(&mut rng, 1, 2, 3, 3, -1.0, 1.0);
            let weights = random_tensor(&mut rng, 1, 9, 6, 6, -1.0, 1.0);
            let out = reassemble_raw(&dec, &weights, 3)?;
            let (dd, dw) = reassemble_vjp(&dec, &weights, 3, &double(&out))?;
            let mut theta = Vec::new();
            push_tensor(&mut theta, &dec);
            push_tensor(&mut theta, &weights);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &dd);
            push_tensor(&mut analytic, &dw);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let dec = u.tensor(1, 2, 3, 3);
                let weights = u.tensor(1, 9, 6, 6);
                u.finish();
                Ok(sum_squares(&reassemble_raw(&dec, &weights, 3)?))
            };
            (theta, analytic, Box::new(loss))
        }
        "gated_blend" => {
            let enc = random_tensor(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
            let pre = random_tensor(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
            let gate = random_tensor(&mut rng, 1, 1, 4, 4, 0.05, 0.95);
            let out = gated_blend(&enc, &pre, &gate)?;
            let (de, dp, dg) = gated_blend_vjp(&enc, &pre, &gate, &double(&out))?;
            let mut theta = Vec::new();
            push_tensor(&mut theta, &enc);
            push_tensor(&mut theta, &pre);
            push_tensor(&mut theta, &gate);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &de);
            push_tensor(&mut analytic, &dp);
            push_tensor(&mut analytic, &dg);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let enc = u.tensor(1, 3, 4, 4);
                let pre = u.tensor(1, 3, 4, 4);
                let gate = u.tensor(1, 1, 4, 4);
                u.finish();
                Ok(sum_squares(&gated_blend(&enc, &pre, &gate)?))
            };
            (theta, analytic, Box::new(loss))
        }
        "gen_kernels_semishift" => {
            let enc = random_tensor(&mut rng, 1, 2, 6, 6, -1.0, 1.0);
            let dec = random_tensor(&mut rng, 1, 2, 3, 3, -1.0, 1.0);
            let params = KernelGenParams::random(&mut rng, 2, 3, 3, 3)?;
            let y = gen_kernels_semishift(&enc, &dec, &params)?.weights;
            let (de, dd, dk) = gen_kernels_semishift_vjp(&enc, &dec, &params, &double(&y))?;
            let mut theta = Vec::new();
            push_tensor(&mut theta, &enc);
            push_tensor(&mut theta, &dec);
            push_conv(&mut theta, &params.alpha_en);
            push_conv(&mut theta, &params.alpha_de);
            push_conv(&mut theta, &params.beta);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &de);
            push_tensor(&mut analytic, &dd);
            push_conv(&mut analytic, &dk.alpha_en);
            push_conv(&mut analytic, &dk.alpha_de);
            push_conv(&mut analytic, &dk.beta);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let enc = u.tensor(1, 2, 6, 6);
                let dec = u.tensor(1, 2, 3, 3);
                let params = KernelGenParams {
                    alpha_en: u.conv(3, 2, 1, 1, false),
                    alpha_de: u.conv(3, 2, 1, 1, true),
                    beta: u.conv(9, 3, 3, 3, true),
                    kernel_size: 3,
                    window: 3,
                    compressed: 3,
                };
                u.finish();
                Ok(sum_squares(
                    &gen_kernels_semishift(&enc, &dec, &params)?.weights,
                ))
            };
            (theta, analytic, Box::new(loss))
        }
        "fade_forward" => {
            let enc = random_tensor(&mut rng, 1, 2, 4, 6, -1.0, 1.0);
            let dec = random_tensor(&mut rng, 1, 2, 2, 3, -1.0, 1.0);
            let params = FadeParams::random(&mut rng, 2, 3, 3, 3, FusionMode::Gating)?;
            let out = crate::upsample::fade_forward(&enc, &dec, &params)?.output;
            let grads = fade_forward_vjp(&enc, &dec, &params, &double(&out))?;
            let gate = params.gate.as_ref().expect("gating mode");
            let d_gate = grads.gate.as_ref().expect("gating mode");
            let mut theta = Vec::new();
            push_tensor(&mut theta, &enc);
            push_tensor(&mut theta, &dec);
            push_conv(&mut theta, &params.kernel_gen.alpha_en);
            push_conv(&mut theta, &params.kernel_gen.alpha_de);
            push_conv(&mut theta, &params.kernel_gen.beta);
            push_conv(&mut theta, &gate.weights);
            let mut analytic = Vec::new();
            push_tensor(&mut analytic, &grads.enc);
            push_tensor(&mut analytic, &grads.dec);
            push_conv(&mut analytic, &grads.kernel_gen.alpha_en);
            push_conv(&mut analytic, &grads.kernel_gen.alpha_de);
            push_conv(&mut analytic, &grads.kernel_gen.beta);
            push_conv(&mut analytic, d_gate);
            let loss = move |v: &[f64]| {
                let mut u = Unpack::new(v);
                let enc = u.tensor(1, 2, 4, 6);
                let dec = u.tensor(1, 2, 2, 3);
                let params = FadeParams {
                    kernel_gen: KernelGenParams {
                        alpha_en: u.conv(3, 2, 1, 1, false),
                        alpha_de: u.conv(3, 2, 1, 1, true),
                        beta: u.conv(9, 3, 3, 3, true),
                        kernel_size: 3,
                        window: 3,
                        compressed: 3,
                    },
                    gate: Some(crate::upsample::GateParams {
                        weights: u.conv(1, 2, 1, 1, true),
                    }),
                    mode: FusionMode::Gating,
                };
                u.finish();
                Ok(sum_squares(
                    &crate::upsample::fade_forward(&enc, &dec, &params)?.output,
                ))
            };
            (theta, analytic, Box::new(loss))
        }
        other => {
            return Err(OpError::UnknownOp {
                name: other.to_string(),
            })
        }
    };

    let mut loss = loss;
    let op: &'static str = GRADCHECK_OPS
        .iter()
        .find(|n| **n == name)
        .copied()
        .expect("matched above");
    let max_rel_err = finite_diff_check(op, &theta, &analytic, &mut loss)?;
    Ok(GradCheckReport {
        op: name.to_string(),
        coords: theta.len(),
        max_rel_err,
    })
}

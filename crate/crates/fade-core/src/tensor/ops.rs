//! Primitive tensor operations. All of them are pure functions; the only
//! ambient input is the `FADE_FAULT_INJECT` environment variable, a test
//! hook that deliberately corrupts `softmax_channels` so the verification
//! harness can prove it notices.

// Indexed loops are deliberate here: indices couple input, kernel, and
// output coordinates, which iterator chains would obscure.
#![allow(clippy::needless_range_loop)]

use super::{ConvWeights, Element, OpError, Padding, Tensor4};

pub(crate) fn out_extent(
    extent: usize,
    p0: usize,
    p1: usize,
    kernel: usize,
    stride: usize,
) -> Result<usize, OpError> {
    let span = extent + p0 + p1;
    if span < kernel || !(span - kernel).is_multiple_of(stride) {
        return Err(OpError::NonIntegerOutputShape {
            extent,
            pad: (p0, p1),
            kernel,
            stride,
        });
    }
    Ok((span - kernel) / stride + 1)
}

/// 2-D convolution with zero padding. Padding is applied implicitly: taps
/// that fall outside the input contribute nothing, which is numerically the
/// zero-fill result without materializing a padded buffer.
///
/// Each output element accumulates in a fixed order: input channels, then
/// kernel rows, then kernel columns, then the bias. Identical inputs produce
/// bit-identical outputs.
pub fn conv2d<T: Element>(
    input: &Tensor4<T>,
    weights: &ConvWeights<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<T>, OpError> {
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

    let in_d = input.data();
    let k_d = weights.kernel.data();
    let mut out = Tensor4::zeros(n, co, oh, ow);

    // Pointwise fast path. The per-element accumulation order (channels
    // ascending, bias last) matches the general path exactly.
    if kh == 1 && kw == 1 && stride == 1 && padding == Padding::ZERO {
        let hw = ih * iw;
        let out_d = out.data_mut();
        for b in 0..n {
            for oc in 0..co {
                let orow = &mut out_d[(b * co + oc) * hw..][..hw];
                for ic in 0..ci {
                    let wv = k_d[oc * ci + ic];
                    let irow = &in_d[(b * ci + ic) * hw..][..hw];
                    for p in 0..hw {
                        orow[p] += wv * irow[p];
                    }
                }
                if let Some(bias) = &weights.bias {
                    let bv = bias[oc];
                    for v in orow.iter_mut() {
                        *v += bv;
                    }
                }
            }
        }
        return Ok(out);
    }

    let out_d = out.data_mut();
    for b in 0..n {
        for oc in 0..co {
            let bias_v = weights.bias.as_ref().map_or(T::zero(), |bv| bv[oc]);
            for oy in 0..oh {
                let iy0 = (oy * stride) as isize - padding.top as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = (ih as isize - iy0).clamp(0, kh as isize) as usize;
                for ox in 0..ow {
                    let ix0 = (ox * stride) as isize - padding.left as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = (iw as isize - ix0).clamp(0, kw as isize) as usize;
                    let mut acc = T::zero();
                    for ic in 0..ci {
                        let in_ch = (b * ci + ic) * ih;
                        let k_ch = (oc * ci + ic) * kh;
                        for ky in ky_lo..ky_hi {
                            let iy = (iy0 + ky as isize) as usize;
                            let irow = &in_d[(in_ch + iy) * iw..][..iw];
                            let krow = &k_d[(k_ch + ky) * kw..][..kw];
                            for kx in kx_lo..kx_hi {
                                let ix = (ix0 + kx as isize) as usize;
                                acc += krow[kx] * irow[ix];
                            }
                        }
                    }
                    out_d[((b * co + oc) * oh + oy) * ow + ox] = acc + bias_v;
                }
            }
        }
    }
    Ok(out)
}

/// Materializes zero padding around the spatial dims.
#[must_use]
pub fn pad2d<T: Element>(input: &Tensor4<T>, padding: Padding) -> Tensor4<T> {
    let (n, c, h, w) = input.shape();
    let oh = h + padding.vertical();
    let ow = w + padding.horizontal();
    let mut out = Tensor4::zeros(n, c, oh, ow);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(
                        b,
                        ch,
                        y + padding.top,
                        x + padding.left,
                        input.get(b, ch, y, x),
                    );
                }
            }
        }
    }
    out
}

/// Nearest-neighbor ×2 upsampling: each source pixel becomes a 2×2 block.
#[must_use]
pub fn nn_interpolate_x2<T: Element>(input: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = input.shape();
    let mut out = Tensor4::zeros(n, c, 2 * h, 2 * w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out.set(b, ch, y, x, input.get(b, ch, y / 2, x / 2));
                }
            }
        }
    }
    out
}

/// Bilinear ×2 upsampling with half-pixel centers: source coordinate for
/// output index `o` is `o/2 - 0.25`, and samples clamp at the borders. On
/// `[[0, 1]]` this yields `[[0, 0.25, 0.75, 1]]`.
#[must_use]
pub fn bilinear_x2<T: Element>(input: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = input.shape();
    let mut out = Tensor4::zeros(n, c, 2 * h, 2 * w);

    // (low index, high index, weight of the high sample) per output position
    let axis = |extent: usize, o: usize| -> (usize, usize, f64) {
        let src = (o as f64 + 0.5) / 2.0 - 0.5;
        let lo = src.floor();
        let frac = src - lo;
        let lo_i = lo.max(0.0) as usize;
        let hi_i = (lo + 1.0).clamp(0.0, extent as f64 - 1.0) as usize;
        let lo_i = lo_i.min(extent - 1);
        (lo_i, hi_i, frac)
    };

    for b in 0..n {
        for ch in 0..c {
            for y in 0..2 * h {
                let (y0, y1, fy) = axis(h, y);
                for x in 0..2 * w {
                    let (x0, x1, fx) = axis(w, x);
                    let v00 = input.get(b, ch, y0, x0).to_f64();
                    let v01 = input.get(b, ch, y0, x1).to_f64();
                    let v10 = input.get(b, ch, y1, x0).to_f64();
                    let v11 = input.get(b, ch, y1, x1).to_f64();
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bot = v10 * (1.0 - fx) + v11 * fx;
                    out.set(b, ch, y, x, T::from_f64(top * (1.0 - fy) + bot * fy));
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2. Requires even spatial dims.
pub fn maxpool_x2<T: Element>(input: &Tensor4<T>) -> Result<Tensor4<T>, OpError> {
    let (n, c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(OpError::OddSpatialDims { h, w });
    }
    let mut out = Tensor4::zeros(n, c, h / 2, w / 2);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let m = input
                        .get(b, ch, 2 * y, 2 * x)
                        .maximum(input.get(b, ch, 2 * y, 2 * x + 1))
                        .maximum(input.get(b, ch, 2 * y + 1, 2 * x))
                        .maximum(input.get(b, ch, 2 * y + 1, 2 * x + 1));
                    out.set(b, ch, y, x, m);
                }
            }
        }
    }
    Ok(out)
}

fn softmax_fault_active() -> bool {
    std::env::var_os("FADE_FAULT_INJECT").is_some_and(|v| v == "softmax")
}

/// Channelwise softmax at every spatial position, stabilized by subtracting
/// the per-position maximum before exponentiation.
///
/// When the environment variable `FADE_FAULT_INJECT=softmax` is set, the
/// shifted logits are negated before exponentiation. That deliberately wrong
/// variant still normalizes to 1, so only value-sensitive checks catch it;
/// the verification suite includes such a check by design.
#[must_use]
pub fn softmax_channels<T: Element>(input: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = input.shape();
    let fault = softmax_fault_active();
    let mut out = Tensor4::zeros(n, c, h, w);
    let hw = h * w;
    let in_d = input.data();
    let out_d = out.data_mut();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut m = in_d[base + p];
            for ch in 1..c {
                m = m.maximum(in_d[base + ch * hw + p]);
            }
            let mut sum = T::zero();
            for ch in 0..c {
                let mut shifted = in_d[base + ch * hw + p] - m;
                if fault {
                    shifted = -shifted;
                }
                let e = shifted.exp();
                out_d[base + ch * hw + p] = e;
                sum += e;
            }
            for ch in 0..c {
                out_d[base + ch * hw + p] = out_d[base + ch * hw + p] / sum;
            }
        }
    }
    out
}

/// Elementwise logistic sigmoid, computed in the overflow-free branch form.
#[must_use]
pub fn sigmoid_map<T: Element>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Rearranges groups of 4 channels into 2×2 spatial blocks:
/// `(n, 4c, h, w)` becomes `(n, c, 2h, 2w)`, where channel `4c + 2*dy + dx`
/// lands at spatial offset `(dy, dx)` inside each block.
pub fn pixel_shuffle_x2<T: Element>(input: &Tensor4<T>) -> Result<Tensor4<T>, OpError> {
    let (n, c4, h, w) = input.shape();
    if c4 % 4 != 0 {
        return Err(OpError::ChannelsNotDivisible {
            channels: c4,
            divisor: 4,
        });
    }
    let c = c4 / 4;
    let mut out = Tensor4::zeros(n, c, 2 * h, 2 * w);
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src_c = ch * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for x in 0..w {
                            out.set(b, ch, 2 * y + dy, 2 * x + dx, input.get(b, src_c, y, x));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concatenates along the channel axis; batch and spatial dims must agree.
pub fn concat_channels<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, OpError> {
    let (an, ac, ah, aw) = a.shape();
    let (bn, bc, bh, bw) = b.shape();
    if an != bn || ah != bh || aw != bw {
        return Err(OpError::ShapeMismatch {
            context: "concat_channels needs matching batch and spatial dims",
            expected: (an, ac, ah, aw),
            found: (bn, bc, bh, bw),
        });
    }
    let mut out = Tensor4::zeros(an, ac + bc, ah, aw);
    for bi in 0..an {
        for ch in 0..ac {
            for y in 0..ah {
                for x in 0..aw {
                    out.set(bi, ch, y, x, a.get(bi, ch, y, x));
                }
            }
        }
        for ch in 0..bc {
            for y in 0..ah {
                for x in 0..aw {
                    out.set(bi, ac + ch, y, x, b.get(bi, ch, y, x));
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, OpError> {
    if a.shape() != b.shape() {
        return Err(OpError::ShapeMismatch {
            context: "elementwise add needs identical shapes",
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data().iter()) {
        *o += *v;
    }
    Ok(out)
}

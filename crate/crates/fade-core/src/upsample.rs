//! Kernel-based ×2 feature upsampling and the fusion stage that combines
//! the upsampled feature with the encoder feature.
//!
//! [`reassemble`] applies a per-position kernel map: each high-res output is
//! a weighted sum over the K×K decoder neighborhood of its low-res parent.
//! With normalized kernels every output is a convex combination, so the
//! operator can sharpen or smooth but never overshoot the local value range.
//!
//! The optional gate ([`gate_generate`]) is a single sigmoid channel
//! predicted from the decoder feature; [`gated_blend`] mixes the encoder
//! feature and the upsampled feature per position, `enc·g + pre·(1-g)`.

use std::str::FromStr;

use crate::kernel_gen::{gen_kernels_semishift, KernelGenParams, KernelMap};
use crate::rng::{init_conv, SplitMix64};
use crate::tensor::{
    add, conv2d, nn_interpolate_x2, sigmoid_map, ConvWeights, Element, OpError, Padding, Tensor4,
};

/// Applies a normalized kernel map to the decoder feature.
///
/// Output `(b, c, y, x)` is `Σ_{u,v} weights[b][u·K+v][y][x] ·
/// dec[b][c][y/2 + u - K/2][x/2 + v - K/2]` with zero for taps outside the
/// map. Rejects maps whose `normalized` flag is unset: unnormalized weights
/// would silently rescale features.
pub fn reassemble<T: Element>(
    dec: &Tensor4<T>,
    kernels: &KernelMap<T>,
) -> Result<Tensor4<T>, OpError> {
    if !kernels.normalized {
        return Err(OpError::UnnormalizedKernels);
    }
    reassemble_raw(dec, &kernels.weights, kernels.kernel_size)
}

/// Reassembly without the normalization gate; the building block shared by
/// the public entry point and the gradient rules, which must evaluate the
/// same map on perturbed (hence unnormalized) weights.
pub(crate) fn reassemble_raw<T: Element>(
    dec: &Tensor4<T>,
    weights: &Tensor4<T>,
    kernel_size: usize,
) -> Result<Tensor4<T>, OpError> {
    let (n, c, dh, dw) = dec.shape();
    let (wn, wc, wh, ww) = weights.shape();
    if wn != n || wh != 2 * dh || ww != 2 * dw || wc != kernel_size * kernel_size {
        return Err(OpError::ShapeMismatch {
            context: "kernel map must be (n, K², 2H, 2W) for a (n, C, H, W) input",
            expected: (n, kernel_size * kernel_size, 2 * dh, 2 * dw),
            found: (wn, wc, wh, ww),
        });
    }
    let rk = kernel_size / 2;
    let mut out = Tensor4::zeros(n, c, wh, ww);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..wh {
                for x in 0..ww {
                    let (py, px) = (y / 2, x / 2);
                    let mut acc = T::zero();
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
                            acc += weights.get(b, u * kernel_size + v, y, x)
                                * dec.get(b, ch, iy as usize, ix as usize);
                        }
                    }
                    out.set(b, ch, y, x, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of the fusion gate: a 1×1 convolution from the decoder
/// channels to a single logit channel, with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub weights: ConvWeights<T>,
}

impl<T: Element> GateParams<T> {
    pub fn random(rng: &mut SplitMix64, channels: usize) -> Self {
        GateParams {
            weights: init_conv(rng, 1, channels, 1, 1, true),
        }
    }

    pub fn validate(&self) -> Result<(), OpError> {
        let w = &self.weights;
        if w.c_out() != 1 || w.k_h() != 1 || w.k_w() != 1 {
            return Err(OpError::ShapeMismatch {
                context: "gate must be a single-output 1×1 convolution",
                expected: (1, w.c_in(), 1, 1),
                found: (w.c_out(), w.c_in(), w.k_h(), w.k_w()),
            });
        }
        if w.bias.is_none() {
            return Err(OpError::BiasMismatch { bias: 0, c_out: 1 });
        }
        Ok(())
    }
}

/// Computes the gate map from the decoder feature: 1×1 logit convolution,
/// nearest-neighbor ×2 replication, sigmoid. Shape `(n, 1, 2H, 2W)`, values
/// in (0, 1).
pub fn gate_generate<T: Element>(
    dec: &Tensor4<T>,
    params: &GateParams<T>,
) -> Result<Tensor4<T>, OpError> {
    params.validate()?;
    let logits = conv2d(dec, &params.weights, 1, Padding::ZERO)?;
    Ok(sigmoid_map(&nn_interpolate_x2(&logits)))
}

/// Per-position convex blend `enc·gate + pre·(1 - gate)`, the gate channel
/// broadcast over feature channels.
pub fn gated_blend<T: Element>(
    enc: &Tensor4<T>,
    pre: &Tensor4<T>,
    gate: &Tensor4<T>,
) -> Result<Tensor4<T>, OpError> {
    if enc.shape() != pre.shape() {
        return Err(OpError::ShapeMismatch {
            context: "blend inputs must match",
            expected: enc.shape(),
            found: pre.shape(),
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
    let mut out = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let g = gate.get(b, 0, y, x);
                    let v = enc.get(b, ch, y, x) * g + pre.get(b, ch, y, x) * (T::one() - g);
                    out.set(b, ch, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// How the upsampled feature is combined with the encoder feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Return the upsampled feature unchanged.
    None,
    /// Add the encoder feature (plain skip connection).
    Skipping,
    /// Blend with the predicted gate: `enc·g + pre·(1 - g)`.
    Gating,
}

impl FusionMode {
    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Skipping => "skipping",
            FusionMode::Gating => "gating",
        }
    }
}

impl FromStr for FusionMode {
    type Err = OpError;

    fn from_str(s: &str) -> Result<Self, OpError> {
        match s {
            "none" => Ok(FusionMode::None),
            "skipping" => Ok(FusionMode::Skipping),
            "gating" => Ok(FusionMode::Gating),
            other => Err(OpError::UnknownKind {
                name: other.to_string(),
            }),
        }
    }
}

/// Complete parameter set of the upsampling operator.
#[derive(Debug, Clone, PartialEq)]
pub struct FadeParams<T> {
    pub kernel_gen: KernelGenParams<T>,
    pub gate: Option<GateParams<T>>,
    pub mode: FusionMode,
}

impl<T: Element> FadeParams<T> {
    /// Draws a full parameter set; the gate is always present so the same
    /// record layout serves every mode.
    pub fn random(
        rng: &mut SplitMix64,
        channels: usize,
        compressed: usize,
        kernel_size: usize,
        window: usize,
        mode: FusionMode,
    ) -> Result<Self, OpError> {
        let kernel_gen = KernelGenParams::random(rng, channels, compressed, kernel_size, window)?;
        let gate = GateParams::random(rng, channels);
        Ok(FadeParams {
            kernel_gen,
            gate: Some(gate),
            mode,
        })
    }

    pub fn validate(&self) -> Result<(), OpError> {
        self.kernel_gen.validate()?;
        if let Some(gate) = &self.gate {
            gate.validate()?;
            if gate.weights.c_in() != self.kernel_gen.channels() {
                return Err(OpError::ChannelMismatch {
                    input: self.kernel_gen.channels(),
                    weights: gate.weights.c_in(),
                });
            }
        }
        if self.mode == FusionMode::Gating && self.gate.is_none() {
            return Err(OpError::MissingGate);
        }
        Ok(())
    }
}

/// Everything the forward pass produces; intermediates are kept because
/// callers inspect them (tests, gradients, the command-line tool).
#[derive(Debug, Clone)]
pub struct FadeOutput<T> {
    pub output: Tensor4<T>,
    pub kernels: KernelMap<T>,
    pub gate: Option<Tensor4<T>>,
}

/// Full forward pass: semi-shift kernel generation, reassembly, fusion.
pub fn fade_forward<T: Element>(
    enc: &Tensor4<T>,
    dec: &Tensor4<T>,
    params: &FadeParams<T>,
) -> Result<FadeOutput<T>, OpError> {
    params.validate()?;
    let kernels = gen_kernels_semishift(enc, dec, &params.kernel_gen)?;
    let pre = reassemble(dec, &kernels)?;
    let (output, gate) = match params.mode {
        FusionMode::None => (pre, None),
        FusionMode::Skipping => (add(enc, &pre)?, None),
        FusionMode::Gating => {
            let gate_params = params.gate.as_ref().ok_or(OpError::MissingGate)?;
            let gate = gate_generate(dec, gate_params)?;
            (gated_blend(enc, &pre, &gate)?, Some(gate))
        }
    };
    Ok(FadeOutput {
        output,
        kernels,
        gate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::random_tensor;

    fn one_hot_map(n: usize, k: usize, h2: usize, w2: usize, u: usize, v: usize) -> KernelMap<f64> {
        let mut weights = Tensor4::zeros(n, k * k, h2, w2);
        for b in 0..n {
            for y in 0..h2 {
                for x in 0..w2 {
                    weights.set(b, u * k + v, y, x, 1.0);
                }
            }
        }
        KernelMap {
            weights,
            kernel_size: k,
            normalized: true,
        }
    }

    #[test]
    fn center_one_hot_kernels_reproduce_nearest_neighbor() {
        let mut rng = SplitMix64::new(7);
        let dec = random_tensor(&mut rng, 2, 3, 4, 5, -1.0, 1.0);
        let map = one_hot_map(2, 5, 8, 10, 2, 2);
        let out = reassemble(&dec, &map).unwrap();
        assert_eq!(out, nn_interpolate_x2(&dec));
    }

    #[test]
    fn shifted_one_hot_kernels_translate_and_zero_pad() {
        let mut rng = SplitMix64::new(9);
        let dec = random_tensor(&mut rng, 1, 1, 3, 3, -1.0, 1.0);
        // Tap (u, v) = (2, 1) reads one row below the parent.
        let map = one_hot_map(1, 3, 6, 6, 2, 1);
        let out = reassemble(&dec, &map).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let expect = if y / 2 + 1 < 3 {
                    dec.get(0, 0, y / 2 + 1, x / 2)
                } else {
                    0.0
                };
                assert_eq!(out.get(0, 0, y, x), expect);
            }
        }
    }

    #[test]
    fn normalized_kernels_stay_inside_the_value_range() {
        let mut rng = SplitMix64::new(21);
        let dec = random_tensor(&mut rng, 1, 2, 6, 6, -3.0, 5.0);
        let logits = random_tensor(&mut rng, 1, 25, 12, 12, -2.0, 2.0);
        let map = KernelMap::from_weights(crate::tensor::softmax_channels(&logits), true).unwrap();
        let out = reassemble(&dec, &map).unwrap();
        // Zero padding can pull sums toward zero, so the hull includes 0.
        for &v in out.data() {
            assert!((-3.0f64).min(0.0) <= v && v <= 5.0f64.max(0.0));
        }
    }

    #[test]
    fn unnormalized_maps_are_rejected() {
        let dec = Tensor4::<f64>::filled(1, 1, 2, 2, 1.0);
        let mut map = one_hot_map(1, 3, 4, 4, 1, 1);
        map.normalized = false;
        assert_eq!(
            reassemble(&dec, &map).unwrap_err(),
            OpError::UnnormalizedKernels
        );
    }

    #[test]
    fn blend_extremes_select_one_input() {
        let mut rng = SplitMix64::new(3);
        let enc = random_tensor(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
        let pre = random_tensor(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
        let zeros = Tensor4::filled(1, 1, 4, 4, 0.0);
        let ones = Tensor4::filled(1, 1, 4, 4, 1.0);
        assert_eq!(gated_blend(&enc, &pre, &zeros).unwrap(), pre);
        assert_eq!(gated_blend(&enc, &pre, &ones).unwrap(), enc);
    }

    #[test]
    fn gate_values_are_strictly_inside_the_unit_interval() {
        let mut rng = SplitMix64::new(17);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, 4, 3, 3, -1.0, 1.0);
        let params = GateParams::random(&mut rng, 4);
        let gate = gate_generate(&dec, &params).unwrap();
        assert_eq!(gate.shape(), (1, 1, 6, 6));
        for &g in gate.data() {
            assert!(g > 0.0 && g < 1.0);
        }
    }

    #[test]
    fn skipping_mode_adds_the_encoder_feature() {
        let mut rng = SplitMix64::new(29);
        let enc: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 8, 8, -1.0, 1.0);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 4, 4, -1.0, 1.0);
        let mut params = FadeParams::random(&mut rng, 2, 6, 5, 3, FusionMode::None).unwrap();
        let plain = fade_forward(&enc, &dec, &params).unwrap();
        params.mode = FusionMode::Skipping;
        let skip = fade_forward(&enc, &dec, &params).unwrap();
        assert_eq!(skip.output, add(&enc, &plain.output).unwrap());
        assert!(plain.gate.is_none() && skip.gate.is_none());
    }

    #[test]
    fn gating_mode_stays_between_encoder_and_upsampled_values() {
        let mut rng = SplitMix64::new(31);
        let enc: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 6, 6, -1.0, 1.0);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 3, 3, -1.0, 1.0);
        let params = FadeParams::random(&mut rng, 2, 6, 5, 3, FusionMode::Gating).unwrap();
        let out = fade_forward(&enc, &dec, &params).unwrap();
        let gate = out.gate.as_ref().expect("gating mode produces a gate");
        let pre = reassemble(&dec, &out.kernels).unwrap();
        for b in 0..1 {
            for c in 0..2 {
                for y in 0..6 {
                    for x in 0..6 {
                        let lo = enc.get(b, c, y, x).min(pre.get(b, c, y, x));
                        let hi = enc.get(b, c, y, x).max(pre.get(b, c, y, x));
                        let v = out.output.get(b, c, y, x);
                        assert!(lo <= v && v <= hi);
                    }
                }
            }
        }
        assert!(gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn gating_without_gate_parameters_is_rejected() {
        let mut rng = SplitMix64::new(5);
        let enc = Tensor4::<f64>::zeros(1, 2, 4, 4);
        let dec = Tensor4::<f64>::zeros(1, 2, 2, 2);
        let mut params = FadeParams::random(&mut rng, 2, 4, 3, 3, FusionMode::Gating).unwrap();
        params.gate = None;
        assert_eq!(
            fade_forward(&enc, &dec, &params).unwrap_err(),
            OpError::MissingGate
        );
    }

    #[test]
    fn fusion_mode_parsing_round_trips() {
        for mode in [FusionMode::None, FusionMode::Skipping, FusionMode::Gating] {
            assert_eq!(mode.name().parse::<FusionMode>().unwrap(), mode);
        }
        assert!(matches!(
            "bilinear".parse::<FusionMode>(),
            Err(OpError::UnknownKind { .. })
        ));
    }
}

//! Toy reconstruction benchmark for the upsampling operators.
//!
//! The task: given a binary high-resolution pattern (stripes or
//! checkerboards) as the encoder feature and its 2×2 max-pool as the decoder
//! feature, recover the original pattern by ×2 upsampling. Max pooling is
//! deliberately lossy here: a period-2 stripe pools to an all-ones map, so
//! any operator that only reassembles decoder values is pinned to the
//! convex hull of an all-ones window and cannot reconstruct the stripe. An
//! operator that can route the encoder feature through (the gated blend)
//! escapes that floor.
//!
//! Six arms train on the same data with the same budget: fixed bilinear
//! interpolation, decoder-only kernel prediction, encoder-only kernel
//! prediction, and the two-resolution generator without fusion, with a skip
//! connection, and with the gated blend.

// Gradient returns mirror the forward arity; see autograd.
#![allow(clippy::type_complexity)]

use std::str::FromStr;

use crate::autograd::{
    conv2d_vjp, fade_forward_vjp, pixel_shuffle_x2_vjp, reassemble_vjp, sgd_step,
    softmax_channels_vjp,
};
use crate::kernel_gen::{KernelMap, DEFAULT_KERNEL_SIZE, DEFAULT_WINDOW};
use crate::rng::{init_conv, SplitMix64, SPLITMIX_INCREMENT};
use crate::tensor::{
    bilinear_x2, conv2d, maxpool_x2, pixel_shuffle_x2, softmax_channels, ConvWeights, Element,
    OpError, Padding, Tensor4,
};
use crate::upsample::{fade_forward, FadeParams, FusionMode};

/// Compressed channel width for the toy generators; big models are beside
/// the point at 16×16.
pub const TOY_COMPRESSED: usize = 8;
/// Fewest epochs the training loop accepts.
pub const MIN_EPOCHS: usize = 50;

/// A batch of toy samples: the binary pattern at full resolution and its
/// 2×2 max-pool. The pattern itself doubles as the encoder feature and as
/// the reconstruction target.
#[derive(Debug, Clone)]
pub struct ToyBatch {
    pub image: Tensor4<f64>,
    pub pooled: Tensor4<f64>,
}

fn check_size(size: usize) -> Result<(), OpError> {
    if size < 8 || !size.is_multiple_of(2) {
        return Err(OpError::BadSize { size });
    }
    Ok(())
}

fn stripe_on(coord: usize, period: usize, phase: usize) -> bool {
    (coord + phase) % period < period.div_ceil(2)
}

/// Draws `count` random patterns: vertical stripes, horizontal stripes, or
/// checkerboards with equal probability. Stripe periods are 2..=6 with a
/// random phase; checkerboard cells are 1..=3. Per sample the draws are
/// pattern kind, then period/cell, then phase, so a given generator state
/// fixes the batch exactly.
pub fn toy_batch(rng: &mut SplitMix64, count: usize, size: usize) -> Result<ToyBatch, OpError> {
    check_size(size)?;
    if count == 0 {
        return Err(OpError::ZeroDim);
    }
    let mut image = Tensor4::zeros(count, 1, size, size);
    for s in 0..count {
        match rng.next_below(3) {
            0 | 1 => {
                let vertical = rng.next_below(2) == 0;
                let period = 2 + rng.next_below(5);
                let phase = rng.next_below(period);
                for y in 0..size {
                    for x in 0..size {
                        let coord = if vertical { x } else { y };
                        if stripe_on(coord, period, phase) {
                            image.set(s, 0, y, x, 1.0);
                        }
                    }
                }
            }
            _ => {
                let cell = 1 + rng.next_below(3);
                for y in 0..size {
                    for x in 0..size {
                        if (y / cell + x / cell).is_multiple_of(2) {
                            image.set(s, 0, y, x, 1.0);
                        }
                    }
                }
            }
        }
    }
    let pooled = maxpool_x2(&image)?;
    Ok(ToyBatch { image, pooled })
}

/// Deterministic batch of period-2 stripes, alternating phase and
/// orientation. Every sample max-pools to an all-ones map, which makes this
/// the worst case for operators that cannot see the encoder feature.
pub fn period2_batch(count: usize, size: usize) -> Result<ToyBatch, OpError> {
    check_size(size)?;
    if count == 0 {
        return Err(OpError::ZeroDim);
    }
    let mut image = Tensor4::zeros(count, 1, size, size);
    for s in 0..count {
        let phase = s % 2;
        let vertical = (s / 2) % 2 == 0;
        for y in 0..size {
            for x in 0..size {
                let coord = if vertical { x } else { y };
                if stripe_on(coord, 2, phase) {
                    image.set(s, 0, y, x, 1.0);
                }
            }
        }
    }
    let pooled = maxpool_x2(&image)?;
    Ok(ToyBatch { image, pooled })
}

/// Mean squared error over all elements.
#[must_use]
pub fn mse<T: Element>(out: &Tensor4<T>, target: &Tensor4<T>) -> f64 {
    debug_assert_eq!(out.shape(), target.shape());
    let sum: f64 = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| {
            let d = o.to_f64() - t.to_f64();
            d * d
        })
        .sum();
    sum / out.len() as f64
}

fn mse_and_grad(out: &Tensor4<f64>, target: &Tensor4<f64>) -> (f64, Tensor4<f64>) {
    let n = out.len() as f64;
    let mut grad = out.clone();
    let mut sum = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    (sum / n, grad)
}

/// Kernel prediction from the decoder feature alone: compress, expand the
/// kernel channels at low resolution, pixel-shuffle them to high
/// resolution, softmax.
#[derive(Debug, Clone)]
pub struct CarafeParams<T> {
    pub compress: ConvWeights<T>,
    pub content: ConvWeights<T>,
    pub kernel_size: usize,
    pub window: usize,
}

impl<T: Element> CarafeParams<T> {
    pub fn random(
        rng: &mut SplitMix64,
        channels: usize,
        compressed: usize,
        kernel_size: usize,
        window: usize,
    ) -> Self {
        CarafeParams {
            compress: init_conv(rng, compressed, channels, 1, 1, true),
            content: init_conv(
                rng,
                4 * kernel_size * kernel_size,
                compressed,
                window,
                window,
                true,
            ),
            kernel_size,
            window,
        }
    }
}

pub fn carafe_forward<T: Element>(
    dec: &Tensor4<T>,
    params: &CarafeParams<T>,
) -> Result<(Tensor4<T>, KernelMap<T>), OpError> {
    let r = params.window / 2;
    let comp = conv2d(dec, &params.compress, 1, Padding::ZERO)?;
    let logits = conv2d(&comp, &params.content, 1, Padding::uniform(r))?;
    let hi = pixel_shuffle_x2(&logits)?;
    let map = KernelMap::from_weights(softmax_channels(&hi), true)?;
    let out = crate::upsample::reassemble(dec, &map)?;
    Ok((out, map))
}

/// Gradient of [`carafe_forward`]'s output with respect to the parameters
/// (and the decoder feature, unused by training but returned for
/// completeness).
pub fn carafe_vjp<T: Element>(
    dec: &Tensor4<T>,
    params: &CarafeParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, CarafeParams<T>), OpError> {
    let r = params.window / 2;
    let comp = conv2d(dec, &params.compress, 1, Padding::ZERO)?;
    let logits = conv2d(&comp, &params.content, 1, Padding::uniform(r))?;
    let hi = pixel_shuffle_x2(&logits)?;
    let y = softmax_channels(&hi);

    let (d_dec_re, d_map) = reassemble_vjp(dec, &y, params.kernel_size, grad_out)?;
    let g_hi = softmax_channels_vjp(&y, &d_map);
    let g_logits = pixel_shuffle_x2_vjp(&g_hi)?;
    let (g_comp, d_content) =
        conv2d_vjp(&comp, &params.content, 1, Padding::uniform(r), &g_logits)?;
    let (d_dec_gen, d_compress) = conv2d_vjp(dec, &params.compress, 1, Padding::ZERO, &g_comp)?;

    let mut d_dec = d_dec_re;
    for (d, s) in d_dec.data_mut().iter_mut().zip(d_dec_gen.data()) {
        *d += *s;
    }
    Ok((
        d_dec,
        CarafeParams {
            compress: d_compress,
            content: d_content,
            kernel_size: params.kernel_size,
            window: params.window,
        },
    ))
}

/// Kernel prediction from the encoder feature alone, directly at high
/// resolution: compress, apply the content kernel, softmax.
#[derive(Debug, Clone)]
pub struct EncoderOnlyParams<T> {
    pub compress: ConvWeights<T>,
    pub content: ConvWeights<T>,
    pub kernel_size: usize,
    pub window: usize,
}

impl<T: Element> EncoderOnlyParams<T> {
    pub fn random(
        rng: &mut SplitMix64,
        channels: usize,
        compressed: usize,
        kernel_size: usize,
        window: usize,
    ) -> Self {
        EncoderOnlyParams {
            compress: init_conv(rng, compressed, channels, 1, 1, true),
            content: init_conv(
                rng,
                kernel_size * kernel_size,
                compressed,
                window,
                window,
                true,
            ),
            kernel_size,
            window,
        }
    }
}

pub fn encoder_only_forward<T: Element>(
    enc: &Tensor4<T>,
    dec: &Tensor4<T>,
    params: &EncoderOnlyParams<T>,
) -> Result<(Tensor4<T>, KernelMap<T>), OpError> {
    let r = params.window / 2;
    let comp = conv2d(enc, &params.compress, 1, Padding::ZERO)?;
    let logits = conv2d(&comp, &params.content, 1, Padding::uniform(r))?;
    let map = KernelMap::from_weights(softmax_channels(&logits), true)?;
    let out = crate::upsample::reassemble(dec, &map)?;
    Ok((out, map))
}

/// Gradient of [`encoder_only_forward`] with respect to the parameters and
/// both features.
pub fn encoder_only_vjp<T: Element>(
    enc: &Tensor4<T>,
    dec: &Tensor4<T>,
    params: &EncoderOnlyParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, EncoderOnlyParams<T>), OpError> {
    let r = params.window / 2;
    let comp = conv2d(enc, &params.compress, 1, Padding::ZERO)?;
    let logits = conv2d(&comp, &params.content, 1, Padding::uniform(r))?;
    let y = softmax_channels(&logits);

    let (d_dec, d_map) = reassemble_vjp(dec, &y, params.kernel_size, grad_out)?;
    let g_logits = softmax_channels_vjp(&y, &d_map);
    let (g_comp, d_content) =
        conv2d_vjp(&comp, &params.content, 1, Padding::uniform(r), &g_logits)?;
    let (d_enc, d_compress) = conv2d_vjp(enc, &params.compress, 1, Padding::ZERO, &g_comp)?;
    Ok((
        d_enc,
        d_dec,
        EncoderOnlyParams {
            compress: d_compress,
            content: d_content,
            kernel_size: params.kernel_size,
            window: params.window,
        },
    ))
}

/// The six arms of the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Bilinear,
    Carafe,
    EncoderOnly,
    FadeNoGate,
    FadeSkip,
    FadeFull,
}

impl ToyKind {
    pub const ALL: [ToyKind; 6] = [
        ToyKind::Bilinear,
        ToyKind::Carafe,
        ToyKind::EncoderOnly,
        ToyKind::FadeNoGate,
        ToyKind::FadeSkip,
        ToyKind::FadeFull,
    ];

    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            ToyKind::Bilinear => "bilinear",
            ToyKind::Carafe => "carafe",
            ToyKind::EncoderOnly => "encoder_only",
            ToyKind::FadeNoGate => "fade_no_gate",
            ToyKind::FadeSkip => "fade_skip",
            ToyKind::FadeFull => "fade_full",
        }
    }

    fn index(self) -> u64 {
        ToyKind::ALL
            .iter()
            .position(|k| *k == self)
            .expect("listed") as u64
    }
}

impl FromStr for ToyKind {
    type Err = OpError;

    fn from_str(s: &str) -> Result<Self, OpError> {
        ToyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| OpError::UnknownKind {
                name: s.to_string(),
            })
    }
}

/// Training configuration shared by every arm.
#[derive(Debug, Clone, Copy)]
pub struct ToyConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub size: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 42,
            epochs: 200,
            lr: 0.05,
            size: 16,
            n_train: 32,
            n_test: 8,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), OpError> {
        check_size(self.size)?;
        if self.epochs < MIN_EPOCHS {
            return Err(OpError::BudgetTooSmall {
                budget: self.epochs,
                minimum: MIN_EPOCHS,
            });
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(OpError::ZeroDim);
        }
        Ok(())
    }
}

/// Final losses of one trained arm.
#[derive(Debug, Clone)]
pub struct ToyResult {
    pub kind: ToyKind,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

fn step_conv(w: &mut ConvWeights<f64>, g: &ConvWeights<f64>, lr: f64) -> Result<(), OpError> {
    sgd_step(w.kernel.data_mut(), g.kernel.data(), None, lr, 0.0)?;
    if let (Some(b), Some(gb)) = (w.bias.as_mut(), g.bias.as_ref()) {
        sgd_step(b, gb, None, lr, 0.0)?;
    }
    Ok(())
}

/// Trains one arm on explicit batches. Every arm derives its weight
/// initialization stream from the seed and its own arm index, so arms are
/// independent of each other and of the data draws.
pub fn train_toy_on(
    kind: ToyKind,
    cfg: &ToyConfig,
    train: &ToyBatch,
    test: &ToyBatch,
) -> Result<ToyResult, OpError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed ^ (kind.index() + 1).wrapping_mul(SPLITMIX_INCREMENT));
    let result = |train_mse: f64, test_mse: f64| ToyResult {
        kind,
        final_train_mse: train_mse,
        final_test_mse: test_mse,
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed: cfg.seed,
    };

    match kind {
        ToyKind::Bilinear => {
            let train_mse = mse(&bilinear_x2(&train.pooled), &train.image);
            let test_mse = mse(&bilinear_x2(&test.pooled), &test.image);
            Ok(result(train_mse, test_mse))
        }
        ToyKind::Carafe => {
            let mut params = CarafeParams::random(
                &mut rng,
                1,
                TOY_COMPRESSED,
                DEFAULT_KERNEL_SIZE,
                DEFAULT_WINDOW,
            );
            for _ in 0..cfg.epochs {
                let (out, _) = carafe_forward(&train.pooled, &params)?;
                let (_, grad) = mse_and_grad(&out, &train.image);
                let (_, grads) = carafe_vjp(&train.pooled, &params, &grad)?;
                step_conv(&mut params.compress, &grads.compress, cfg.lr)?;
                step_conv(&mut params.content, &grads.content, cfg.lr)?;
            }
            let train_mse = mse(&carafe_forward(&train.pooled, &params)?.0, &train.image);
            let test_mse = mse(&carafe_forward(&test.pooled, &params)?.0, &test.image);
            Ok(result(train_mse, test_mse))
        }
        ToyKind::EncoderOnly => {
            let mut params = EncoderOnlyParams::random(
                &mut rng,
                1,
                TOY_COMPRESSED,
                DEFAULT_KERNEL_SIZE,
                DEFAULT_WINDOW,
            );
            for _ in 0..cfg.epochs {
                let (out, _) = encoder_only_forward(&train.image, &train.pooled, &params)?;
                let (_, grad) = mse_and_grad(&out, &train.image);
                let (_, _, grads) = encoder_only_vjp(&train.image, &train.pooled, &params, &grad)?;
                step_conv(&mut params.compress, &grads.compress, cfg.lr)?;
                step_conv(&mut params.content, &grads.content, cfg.lr)?;
            }
            let train_mse = mse(
                &encoder_only_forward(&train.image, &train.pooled, &params)?.0,
                &train.image,
            );
            let test_mse = mse(
                &encoder_only_forward(&test.image, &test.pooled, &params)?.0,
                &test.image,
            );
            Ok(result(train_mse, test_mse))
        }
        ToyKind::FadeNoGate | ToyKind::FadeSkip | ToyKind::FadeFull => {
            let mode = match kind {
                ToyKind::FadeNoGate => FusionMode::None,
                ToyKind::FadeSkip => FusionMode::Skipping,
                _ => FusionMode::Gating,
            };
            let mut params = FadeParams::random(
                &mut rng,
                1,
                TOY_COMPRESSED,
                DEFAULT_KERNEL_SIZE,
                DEFAULT_WINDOW,
                mode,
            )?;
            for _ in 0..cfg.epochs {
                let out = fade_forward(&train.image, &train.pooled, &params)?.output;
                let (_, grad) = mse_and_grad(&out, &train.image);
                let grads = fade_forward_vjp(&train.image, &train.pooled, &params, &grad)?;
                step_conv(
                    &mut params.kernel_gen.alpha_en,
                    &grads.kernel_gen.alpha_en,
                    cfg.lr,
                )?;
                step_conv(
                    &mut params.kernel_gen.alpha_de,
                    &grads.kernel_gen.alpha_de,
                    cfg.lr,
                )?;
                step_conv(&mut params.kernel_gen.beta, &grads.kernel_gen.beta, cfg.lr)?;
                if let (Some(gate), Some(g)) = (params.gate.as_mut(), grads.gate.as_ref()) {
                    step_conv(&mut gate.weights, g, cfg.lr)?;
                }
            }
            let train_mse = mse(
                &fade_forward(&train.image, &train.pooled, &params)?.output,
                &train.image,
            );
            let test_mse = mse(
                &fade_forward(&test.image, &test.pooled, &params)?.output,
                &test.image,
            );
            Ok(result(train_mse, test_mse))
        }
    }
}

/// Draws the datasets for a configuration (training batch first, then the
/// held-out batch) and trains one arm.
pub fn train_toy(kind: ToyKind, cfg: &ToyConfig) -> Result<ToyResult, OpError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let train = toy_batch(&mut rng, cfg.n_train, cfg.size)?;
    let test = toy_batch(&mut rng, cfg.n_test, cfg.size)?;
    train_toy_on(kind, cfg, &train, &test)
}

/// Trains all six arms on one shared pair of batches. Results match
/// [`train_toy`] called per arm with the same configuration.
pub fn ablation_suite(cfg: &ToyConfig) -> Result<Vec<ToyResult>, OpError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let train = toy_batch(&mut rng, cfg.n_train, cfg.size)?;
    let test = toy_batch(&mut rng, cfg.n_test, cfg.size)?;
    ToyKind::ALL
        .into_iter()
        .map(|kind| train_toy_on(kind, cfg, &train, &test))
        .collect()
}

pub const ABLATION_CSV_HEADER: &str = "kind,final_train_mse,final_test_mse,epochs,lr,seed";

/// Renders ablation results as CSV. All fields are deterministic functions
/// of the configuration, so repeated runs give identical bytes.
#[must_use]
pub fn ablation_csv(results: &[ToyResult]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.kind.name(),
            r.final_train_mse,
            r.final_test_mse,
            r.epochs,
            r.lr,
            r.seed,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check;

    #[test]
    fn batches_are_binary_and_pooled_consistently() {
        let mut rng = SplitMix64::new(42);
        let batch = toy_batch(&mut rng, 6, 10).unwrap();
        assert!(batch.image.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(batch.pooled, maxpool_x2(&batch.image).unwrap());
    }

    #[test]
    fn same_seed_same_batch() {
        let a = toy_batch(&mut SplitMix64::new(9), 4, 8).unwrap();
        let b = toy_batch(&mut SplitMix64::new(9), 4, 8).unwrap();
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn period2_patterns_saturate_the_pool() {
        let batch = period2_batch(4, 8).unwrap();
        assert!(batch.pooled.data().iter().all(|&v| v == 1.0));
        // Half the pixels are zero, so interpolating the all-ones pooled map
        // misses by exactly one half.
        let err = mse(&bilinear_x2(&batch.pooled), &batch.image);
        assert!((err - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bad_sizes_are_rejected() {
        let mut rng = SplitMix64::new(1);
        assert_eq!(
            toy_batch(&mut rng, 2, 7).unwrap_err(),
            OpError::BadSize { size: 7 }
        );
        assert_eq!(
            toy_batch(&mut rng, 2, 6).unwrap_err(),
            OpError::BadSize { size: 6 }
        );
    }

    #[test]
    fn tiny_budgets_are_rejected() {
        let cfg = ToyConfig {
            epochs: 10,
            ..ToyConfig::default()
        };
        assert_eq!(
            train_toy(ToyKind::Bilinear, &cfg).unwrap_err(),
            OpError::BudgetTooSmall {
                budget: 10,
                minimum: MIN_EPOCHS
            }
        );
    }

    #[test]
    fn toy_kind_names_round_trip() {
        for kind in ToyKind::ALL {
            assert_eq!(kind.name().parse::<ToyKind>().unwrap(), kind);
        }
        assert!(matches!(
            "nearest".parse::<ToyKind>(),
            Err(OpError::UnknownKind { .. })
        ));
    }

    #[test]
    fn carafe_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(33);
        let dec = crate::rng::random_tensor(&mut rng, 1, 1, 3, 3, -1.0, 1.0);
        let params = CarafeParams::random(&mut rng, 1, 2, 3, 3);

        let (out, _) = carafe_forward(&dec, &params).unwrap();
        let grad = out.map(|v| 2.0 * v);
        let (_, grads) = carafe_vjp(&dec, &params, &grad).unwrap();

        let mut theta = Vec::new();
        theta.extend_from_slice(params.compress.kernel.data());
        theta.extend_from_slice(params.compress.bias.as_ref().unwrap());
        theta.extend_from_slice(params.content.kernel.data());
        theta.extend_from_slice(params.content.bias.as_ref().unwrap());
        let mut analytic = Vec::new();
        analytic.extend_from_slice(grads.compress.kernel.data());
        analytic.extend_from_slice(grads.compress.bias.as_ref().unwrap());
        analytic.extend_from_slice(grads.content.kernel.data());
        analytic.extend_from_slice(grads.content.bias.as_ref().unwrap());

        let dec2 = dec.clone();
        let max_rel = finite_diff_check("carafe", &theta, &analytic, move |v| {
            let compress = ConvWeights {
                kernel: Tensor4::new(2, 1, 1, 1, v[0..2].to_vec()).unwrap(),
                bias: Some(v[2..4].to_vec()),
            };
            let content = ConvWeights {
                kernel: Tensor4::new(36, 2, 3, 3, v[4..652].to_vec()).unwrap(),
                bias: Some(v[652..688].to_vec()),
            };
            let p = CarafeParams {
                compress,
                content,
                kernel_size: 3,
                window: 3,
            };
            let (out, _) = carafe_forward(&dec2, &p)?;
            Ok(out.data().iter().map(|v| v * v).sum())
        })
        .unwrap();
        assert!(max_rel <= 1e-5, "max rel err {max_rel}");
    }

    #[test]
    fn encoder_only_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(35);
        let enc = crate::rng::random_tensor(&mut rng, 1, 1, 6, 6, -1.0, 1.0);
        let dec = crate::rng::random_tensor(&mut rng, 1, 1, 3, 3, -1.0, 1.0);
        let params = EncoderOnlyParams::random(&mut rng, 1, 2, 3, 3);

        let (out, _) = encoder_only_forward(&enc, &dec, &params).unwrap();
        let grad = out.map(|v| 2.0 * v);
        let (_, _, grads) = encoder_only_vjp(&enc, &dec, &params, &grad).unwrap();

        let mut theta = Vec::new();
        theta.extend_from_slice(params.compress.kernel.data());
        theta.extend_from_slice(params.compress.bias.as_ref().unwrap());
        theta.extend_from_slice(params.content.kernel.data());
        theta.extend_from_slice(params.content.bias.as_ref().unwrap());
        let mut analytic = Vec::new();
        analytic.extend_from_slice(grads.compress.kernel.data());
        analytic.extend_from_slice(grads.compress.bias.as_ref().unwrap());
        analytic.extend_from_slice(grads.content.kernel.data());
        analytic.extend_from_slice(grads.content.bias.as_ref().unwrap());

        let (enc2, dec2) = (enc.clone(), dec.clone());
        let max_rel = finite_diff_check("encoder_only", &theta, &analytic, move |v| {
            let compress = ConvWeights {
                kernel: Tensor4::new(2, 1, 1, 1, v[0..2].to_vec()).unwrap(),
                bias: Some(v[2..4].to_vec()),
            };
            let content = ConvWeights {
                kernel: Tensor4::new(9, 2, 3, 3, v[4..166].to_vec()).unwrap(),
                bias: Some(v[166..175].to_vec()),
            };
            let p = EncoderOnlyParams {
                compress,
                content,
                kernel_size: 3,
                window: 3,
            };
            let (out, _) = encoder_only_forward(&enc2, &dec2, &p)?;
            Ok(out.data().iter().map(|v| v * v).sum())
        })
        .unwrap();
        assert!(max_rel <= 1e-5, "max rel err {max_rel}");
    }

    #[test]
    fn training_reduces_the_carafe_loss() {
        let cfg = ToyConfig {
            seed: 7,
            epochs: MIN_EPOCHS,
            lr: 0.05,
            size: 8,
            n_train: 4,
            n_test: 2,
        };
        let mut rng = SplitMix64::new(cfg.seed);
        let train = toy_batch(&mut rng, cfg.n_train, cfg.size).unwrap();
        let test = toy_batch(&mut rng, cfg.n_test, cfg.size).unwrap();

        // Initial loss with the same weight stream the trainer will use.
        let mut wrng = SplitMix64::new(
            cfg.seed ^ (ToyKind::Carafe.index() + 1).wrapping_mul(SPLITMIX_INCREMENT),
        );
        let init = CarafeParams::random(
            &mut wrng,
            1,
            TOY_COMPRESSED,
            DEFAULT_KERNEL_SIZE,
            DEFAULT_WINDOW,
        );
        let before = mse(
            &carafe_forward(&train.pooled, &init).unwrap().0,
            &train.image,
        );

        let result = train_toy_on(ToyKind::Carafe, &cfg, &train, &test).unwrap();
        assert!(result.final_train_mse.is_finite());
        assert!(
            result.final_train_mse < before,
            "training went backwards: {} -> {}",
            before,
            result.final_train_mse
        );
    }

    #[test]
    fn suite_matches_individual_runs() {
        let cfg = ToyConfig {
            seed: 3,
            epochs: MIN_EPOCHS,
            lr: 0.05,
            size: 8,
            n_train: 2,
            n_test: 1,
        };
        let suite = ablation_suite(&cfg).unwrap();
        assert_eq!(suite.len(), 6);
        let solo = train_toy(ToyKind::Bilinear, &cfg).unwrap();
        assert_eq!(suite[0].final_test_mse, solo.final_test_mse);
        let solo = train_toy(ToyKind::FadeFull, &cfg).unwrap();
        assert_eq!(suite[5].final_test_mse, solo.final_test_mse);
    }

    #[test]
    fn csv_has_the_documented_columns() {
        let r = ToyResult {
            kind: ToyKind::Bilinear,
            final_train_mse: 0.25,
            final_test_mse: 0.5,
            epochs: 200,
            lr: 0.05,
            seed: 42,
        };
        let csv = ablation_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(ABLATION_CSV_HEADER));
        assert_eq!(lines.next(), Some("bilinear,0.25,0.5,200,0.05,42"));
    }
}

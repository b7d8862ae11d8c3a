//! Self-contained runtime verification: every library invariant that can be
//! checked from scratch in well under a second, each with a stable name and
//! a one-line PASS/FAIL verdict.
//!
//! The suite is value-sensitive, not just structure-sensitive: softmax, for
//! example, is checked against closed-form values, so a bug that corrupts
//! probabilities while preserving normalization still fails here.

use crate::autograd::gradcheck_op;
use crate::experiments::{mse, period2_batch};
use crate::kernel_gen::{
    gen_kernels_naive, gen_kernels_oracle, gen_kernels_semishift, semishift_subprocess, Corner,
    KernelGenParams, KernelMap,
};
use crate::profiler::{count_flops, OpDesc, OpKind};
use crate::rng::{random_tensor, SplitMix64};
use crate::tensor::{
    add, bilinear_x2, conv2d, decode_tensor, maxpool_x2, nn_interpolate_x2, pad2d,
    pixel_shuffle_x2, sigmoid_map, softmax_channels, write_tensor, ConvWeights, Padding, Tensor4,
};
use crate::upsample::{fade_forward, gated_blend, reassemble, FadeParams, FusionMode};

/// Result of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Runs every registered invariant. The seed fixes all random draws, so a
/// given seed produces the same verdicts and details on every run.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::new();

    // Elementwise operator identities.
    {
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, 7, 4, 4, -3.0, 3.0);
        let y = softmax_channels(&x);
        let mut worst = 0.0f64;
        for yy in 0..4 {
            for xx in 0..4 {
                let s: f64 = (0..7).map(|c| y.get(0, c, yy, xx)).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        out.push(check(
            "softmax_normalizes",
            worst <= 1e-12,
            format!("max |channel sum - 1| = {worst:.2e}"),
        ));

        // exp of [0, ln 2, ln 4] is [1, 2, 4], so the weights are sevenths.
        let logits = Tensor4::new(1, 3, 1, 1, vec![0.0, 2.0f64.ln(), 4.0f64.ln()]).unwrap();
        let got = softmax_channels(&logits);
        let expect = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        let worst = (0..3)
            .map(|c| (got.get(0, c, 0, 0) - expect[c]).abs())
            .fold(0.0, f64::max);
        out.push(check(
            "softmax_closed_form",
            worst <= 1e-12,
            format!("max |got - expected| = {worst:.2e}"),
        ));

        let shifted = softmax_channels(&x.map(|v| v + 17.25));
        let worst = y.max_abs_diff(&shifted);
        out.push(check(
            "softmax_shift_invariant",
            worst <= 1e-12,
            format!("max diff under +17.25 shift = {worst:.2e}"),
        ));

        let s = sigmoid_map(&x);
        let in_range = s.data().iter().all(|&v| v > 0.0 && v < 1.0);
        let at_zero = sigmoid_map(&Tensor4::<f64>::zeros(1, 1, 1, 1)).get(0, 0, 0, 0);
        out.push(check(
            "sigmoid_range_and_midpoint",
            in_range && at_zero == 0.5,
            format!("open unit interval: {in_range}, sigmoid(0) = {at_zero}"),
        ));

        let neg = sigmoid_map(&x.map(|v| -v));
        let worst = (0..s.len())
            .map(|i| (neg.data()[i] - (1.0 - s.data()[i])).abs())
            .fold(0.0, f64::max);
        out.push(check(
            "sigmoid_symmetry",
            worst <= 1e-12,
            format!("max |s(-x) - (1 - s(x))| = {worst:.2e}"),
        ));
    }

    // Resampling primitives.
    {
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 3, 5, -1.0, 1.0);
        let up = nn_interpolate_x2(&x);
        let mut exact = true;
        for c in 0..2 {
            for y in 0..6 {
                for xx in 0..10 {
                    exact &= up.get(0, c, y, xx) == x.get(0, c, y / 2, xx / 2);
                }
            }
        }
        out.push(check(
            "nn_replicates_parents",
            exact,
            "every child equals its parent".to_string(),
        ));

        let row = Tensor4::new(1, 1, 1, 2, vec![0.0, 1.0]).unwrap();
        let up = bilinear_x2(&row);
        let expect = [0.0f64, 0.25, 0.75, 1.0];
        let worst = (0..4)
            .map(|i| (up.get(0, 0, 0, i) - expect[i]).abs())
            .fold(0.0, f64::max);
        out.push(check(
            "bilinear_half_pixel_values",
            up.shape() == (1, 1, 2, 4) && worst <= 1e-12,
            format!("[0,1] row upsamples to [0, 0.25, 0.75, 1], max err {worst:.2e}"),
        ));

        let flat = Tensor4::<f64>::filled(1, 3, 4, 4, 0.37);
        let up = bilinear_x2(&flat);
        let constant = up.data().iter().all(|&v| v == 0.37);
        out.push(check(
            "bilinear_preserves_constants",
            constant,
            "constant input stays constant".to_string(),
        ));

        let x: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 6, 6, -2.0, 2.0);
        let pooled = maxpool_x2(&x).unwrap();
        let mut exact = true;
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let m = x
                        .get(0, c, 2 * i, 2 * j)
                        .max(x.get(0, c, 2 * i, 2 * j + 1))
                        .max(x.get(0, c, 2 * i + 1, 2 * j))
                        .max(x.get(0, c, 2 * i + 1, 2 * j + 1));
                    exact &= pooled.get(0, c, i, j) == m;
                }
            }
        }
        out.push(check(
            "maxpool_takes_block_maxima",
            exact,
            "each cell is its 2x2 block maximum".to_string(),
        ));

        // Constant 2x2 blocks make pooling lossless, so replicate-after-pool
        // is the identity.
        let lo: Tensor4<f64> = random_tensor(&mut rng, 1, 2, 3, 3, -1.0, 1.0);
        let blocks = nn_interpolate_x2(&lo);
        let roundtrip = nn_interpolate_x2(&maxpool_x2(&blocks).unwrap());
        out.push(check(
            "pool_inverts_on_constant_blocks",
            roundtrip == blocks,
            "nn after maxpool is identity on block-constant maps".to_string(),
        ));

        let x: Tensor4<f64> = random_tensor(&mut rng, 1, 8, 3, 3, -1.0, 1.0);
        let sh = pixel_shuffle_x2(&x).unwrap();
        let mut exact = true;
        for c in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    for i in 0..3 {
                        for j in 0..3 {
                            exact &= sh.get(0, c, 2 * i + dy, 2 * j + dx)
                                == x.get(0, 4 * c + 2 * dy + dx, i, j);
                        }
                    }
                }
            }
        }
        out.push(check(
            "pixel_shuffle_channel_layout",
            exact,
            "channel 4c+2dy+dx lands at spatial offset (dy, dx)".to_string(),
        ));
    }

    // Convolution identities.
    {
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, 3, 5, 5, -1.0, 1.0);
        let mut eye = Tensor4::zeros(3, 3, 1, 1);
        for c in 0..3 {
            eye.set(c, c, 0, 0, 1.0);
        }
        let w = ConvWeights::new(eye, None).unwrap();
        let same = conv2d(&x, &w, 1, Padding::ZERO).unwrap() == x;
        out.push(check(
            "conv_identity_kernel",
            same,
            "1x1 identity kernel reproduces the input".to_string(),
        ));

        let y: Tensor4<f64> = random_tensor(&mut rng, 1, 3, 5, 5, -1.0, 1.0);
        let w = ConvWeights::new(random_tensor(&mut rng, 4, 3, 3, 3, -1.0, 1.0), None).unwrap();
        let mixed = add(&x.map(|v| 2.0 * v), &y.map(|v| -3.0 * v)).unwrap();
        let lhs = conv2d(&mixed, &w, 1, Padding::uniform(1)).unwrap();
        let cx = conv2d(&x, &w, 1, Padding::uniform(1)).unwrap();
        let cy = conv2d(&y, &w, 1, Padding::uniform(1)).unwrap();
        let rhs = add(&cx.map(|v| 2.0 * v), &cy.map(|v| -3.0 * v)).unwrap();
        let worst = lhs.max_abs_diff(&rhs);
        out.push(check(
            "conv_linearity",
            worst <= 1e-10,
            format!("max |conv(2x - 3y) - (2conv(x) - 3conv(y))| = {worst:.2e}"),
        ));

        let pad = Padding {
            top: 1,
            bottom: 0,
            left: 2,
            right: 1,
        };
        let implicit = conv2d(&x, &w, 1, pad).unwrap();
        let explicit = conv2d(&pad2d(&x, pad), &w, 1, Padding::ZERO).unwrap();
        out.push(check(
            "implicit_padding_matches_explicit",
            implicit == explicit,
            "in-loop zero padding equals materialized padding".to_string(),
        ));
    }

    // Kernel generation invariants.
    {
        let enc: Tensor4<f64> = random_tensor(&mut rng, 1, 3, 8, 8, -1.0, 1.0);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
        let params = KernelGenParams::random(&mut rng, 3, 6, 5, 3).unwrap();

        let semi = gen_kernels_semishift(&enc, &dec, &params).unwrap();
        let mut worst_sum = 0.0f64;
        let mut in_range = true;
        for y in 0..8 {
            for x in 0..8 {
                let mut s = 0.0;
                for m in 0..25 {
                    let v = semi.weights.get(0, m, y, x);
                    in_range &= (0.0..=1.0).contains(&v);
                    s += v;
                }
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
        }
        out.push(check(
            "kernels_sum_to_one",
            worst_sum <= 1e-12 && in_range,
            format!("max |sum - 1| = {worst_sum:.2e}, weights in [0, 1]: {in_range}"),
        ));

        let slow = gen_kernels_oracle(&enc, &dec, &params).unwrap();
        let worst = semi.weights.max_abs_diff(&slow.weights);
        out.push(check(
            "semishift_matches_reference",
            worst <= 1e-12,
            format!("max |fast - positionwise| = {worst:.2e}"),
        ));

        let naive = gen_kernels_naive(&enc, &dec, &params).unwrap();
        let gap = naive.weights.max_abs_diff(&semi.weights);
        out.push(check(
            "strategies_genuinely_differ",
            gap > 1e-6,
            format!("naive vs semi-shift max diff = {gap:.2e}"),
        ));

        let mut interleaved = Tensor4::zeros(1, 25, 8, 8);
        for corner in Corner::ALL {
            let (dy, dx) = corner.offsets();
            let sub = semishift_subprocess(&enc, &dec, &params, corner).unwrap();
            for m in 0..25 {
                for i in 0..4 {
                    for j in 0..4 {
                        interleaved.set(0, m, 2 * i + dy, 2 * j + dx, sub.get(0, m, i, j));
                    }
                }
            }
        }
        let fused_equal = softmax_channels(&interleaved) == semi.weights;
        out.push(check(
            "corner_interleave_bit_exact",
            fused_equal,
            "fused pass equals interleaved corner passes bit for bit".to_string(),
        ));

        // The pre-softmax logits are affine in the feature pair: doubling
        // both features doubles logits measured from the zero-feature
        // baseline. Checked per window position across the map.
        let zero_e = Tensor4::zeros(1, 3, 8, 8);
        let zero_d = Tensor4::zeros(1, 3, 4, 4);
        let base = semishift_subprocess(&zero_e, &zero_d, &params, Corner::TopLeft).unwrap();
        let one = semishift_subprocess(&enc, &dec, &params, Corner::TopLeft).unwrap();
        let twice = semishift_subprocess(
            &enc.map(|v| 2.0 * v),
            &dec.map(|v| 2.0 * v),
            &params,
            Corner::TopLeft,
        )
        .unwrap();
        let mut worst = 0.0f64;
        let mut windows = 0usize;
        for m in 0..25 {
            for i in 0..4 {
                for j in 0..4 {
                    let b = base.get(0, m, i, j);
                    let lin = twice.get(0, m, i, j) - b;
                    let expect = 2.0 * (one.get(0, m, i, j) - b);
                    worst = worst.max((lin - expect).abs());
                    windows += 1;
                }
            }
        }
        out.push(check(
            "window_response_is_affine",
            worst <= 1e-10 && windows >= 50,
            format!("max deviation {worst:.2e} over {windows} windows"),
        ));

        let flat = Tensor4::filled(1, 3, 8, 8, 0.6);
        let map = gen_kernels_semishift(&flat, &dec, &params).unwrap();
        let mut interior_equal = true;
        for m in 0..25 {
            for i in 1..3 {
                for j in 1..3 {
                    let v = map.weights.get(0, m, 2 * i, 2 * j);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        interior_equal &=
                            map.weights.get(0, m, 2 * i + dy, 2 * j + dx).to_bits() == v.to_bits();
                    }
                }
            }
        }
        out.push(check(
            "constant_encoder_interior_groups_identical",
            interior_equal,
            "2x2 siblings share bits away from the border".to_string(),
        ));

        let zeroed = gen_kernels_semishift(&zero_e, &dec, &params).unwrap();
        let mut all_equal = true;
        for m in 0..25 {
            for i in 0..4 {
                for j in 0..4 {
                    let v = zeroed.weights.get(0, m, 2 * i, 2 * j);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        all_equal &= zeroed.weights.get(0, m, 2 * i + dy, 2 * j + dx).to_bits()
                            == v.to_bits();
                    }
                }
            }
        }
        out.push(check(
            "zero_encoder_groups_identical_everywhere",
            all_equal,
            "with a zero encoder every 2x2 group is uniform".to_string(),
        ));

        let mut far = dec.clone();
        far.set(0, 0, 3, 3, 50.0);
        let moved = gen_kernels_semishift(&enc, &far, &params).unwrap();
        let mut untouched = true;
        for m in 0..25 {
            untouched &=
                moved.weights.get(0, m, 0, 0).to_bits() == semi.weights.get(0, m, 0, 0).to_bits();
        }
        out.push(check(
            "kernels_are_window_local",
            untouched,
            "a distant decoder edit leaves a kernel bit-identical".to_string(),
        ));
    }

    // Reassembly and fusion identities.
    {
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, 3, 4, 4, -2.0, 2.0);
        let mut one_hot = Tensor4::zeros(1, 25, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                one_hot.set(0, 12, y, x, 1.0);
            }
        }
        let map = KernelMap {
            weights: one_hot,
            kernel_size: 5,
            normalized: true,
        };
        let same = reassemble(&dec, &map).unwrap() == nn_interpolate_x2(&dec);
        out.push(check(
            "center_tap_reassembly_is_nearest_neighbor",
            same,
            "one-hot center kernels replicate parents exactly".to_string(),
        ));

        let logits: Tensor4<f64> = random_tensor(&mut rng, 1, 25, 8, 8, -2.0, 2.0);
        let soft = KernelMap::from_weights(softmax_channels(&logits), true).unwrap();
        let outp = reassemble(&dec, &soft).unwrap();
        let lo = dec
            .data()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .min(0.0);
        let hi = dec
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        let hull = outp.data().iter().all(|&v| v >= lo && v <= hi);
        out.push(check(
            "reassembly_stays_in_the_value_hull",
            hull,
            format!("outputs within [{lo:.3}, {hi:.3}]"),
        ));

        let enc: Tensor4<f64> = random_tensor(&mut rng, 1, 3, 8, 8, -1.0, 1.0);
        let pre = reassemble(&dec, &soft).unwrap();
        let zeros = Tensor4::filled(1, 1, 8, 8, 0.0);
        let ones = Tensor4::filled(1, 1, 8, 8, 1.0);
        let picks_pre = gated_blend(&enc, &pre, &zeros).unwrap() == pre;
        let picks_enc = gated_blend(&enc, &pre, &ones).unwrap() == enc;
        out.push(check(
            "gate_extremes_select_inputs",
            picks_pre && picks_enc,
            format!("gate 0 keeps upsampled: {picks_pre}, gate 1 keeps encoder: {picks_enc}"),
        ));

        let params = FadeParams::random(&mut rng, 3, 6, 5, 3, FusionMode::None).unwrap();
        let plain = fade_forward(&enc, &dec, &params).unwrap().output;
        let mut skip_params = params.clone();
        skip_params.mode = FusionMode::Skipping;
        let skip = fade_forward(&enc, &dec, &skip_params).unwrap().output;
        let same = skip == add(&enc, &plain).unwrap();
        out.push(check(
            "skip_fusion_adds_encoder",
            same,
            "skipping output equals plain output plus encoder".to_string(),
        ));
    }

    // Gradient spot checks (full certification lives in the gradcheck
    // command; these keep verify sensitive to VJP regressions).
    {
        for op in ["softmax_channels", "reassemble"] {
            let outcome = gradcheck_op(op, seed ^ 0x5eed);
            let (passed, detail) = match outcome {
                Ok(r) => (
                    r.max_rel_err <= 1e-5,
                    format!("max rel err {:.2e} over {} coords", r.max_rel_err, r.coords),
                ),
                Err(e) => (false, format!("error: {e}")),
            };
            let name: &'static str = if op == "softmax_channels" {
                "gradcheck_softmax_spot"
            } else {
                "gradcheck_reassemble_spot"
            };
            out.push(check(name, passed, detail));
        }
    }

    // Cost model pins.
    {
        let semi = count_flops(&OpDesc::new(OpKind::FadeSemishift, 64, 112, 112)).unwrap();
        out.push(check(
            "cost_model_reference_point",
            semi.macs == 1_240_350_720,
            format!("semi-shift MACs at C=64, 112x112: {}", semi.macs),
        ));

        let semi = count_flops(&OpDesc::new(OpKind::FadeSemishift, 16, 56, 56)).unwrap();
        let naive = count_flops(&OpDesc::new(OpKind::FadeNaive, 16, 56, 56)).unwrap();
        out.push(check(
            "two_resolution_path_uses_less_memory",
            semi.peak_bytes < naive.peak_bytes,
            format!(
                "{} < {} bytes at the tightest point",
                semi.peak_bytes, naive.peak_bytes
            ),
        ));
    }

    // Reproducibility anchors.
    {
        let first = SplitMix64::new(0).next_u64();
        out.push(check(
            "rng_stream_is_frozen",
            first == 0xE220_A839_7B1D_CDAF,
            format!("first draw from seed 0: {first:#018x}"),
        ));

        let t: Tensor4<f32> = random_tensor(&mut rng, 2, 3, 4, 5, -1.0, 1.0);
        let mut bytes = Vec::new();
        write_tensor(&mut bytes, &t).expect("vec write cannot fail");
        let (back, used) = decode_tensor::<f32>(&bytes).unwrap();
        out.push(check(
            "tensor_io_round_trips",
            back == t && used == bytes.len(),
            format!("{} bytes round-tripped exactly", bytes.len()),
        ));

        let floor = {
            let batch = period2_batch(4, 16).unwrap();
            mse(&bilinear_x2(&batch.pooled), &batch.image)
        };
        out.push(check(
            "pooling_floor_is_material",
            close(floor, 0.5, 1e-12),
            format!("interpolation error on saturating stripes: {floor}"),
        ));
    }

    out
}

#[must_use]
pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

/// One line per check, `PASS`/`FAIL` first so the output greps cleanly.
#[must_use]
pub fn render(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{verdict} {} ({})\n", o.name, o.detail));
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    s.push_str(&format!("{passed}/{} checks passed\n", outcomes.len()));
    s
}

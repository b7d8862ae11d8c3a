//! Property tests over randomized shapes and values. Case counts are kept
//! small because each case runs several convolutions.

use proptest::prelude::*;

use fade_core::kernel_gen::{gen_kernels_semishift, KernelGenParams, KernelMap};
use fade_core::rng::{random_tensor, SplitMix64};
use fade_core::tensor::{
    bilinear_x2, conv2d, decode_tensor, maxpool_x2, nn_interpolate_x2, softmax_channels,
    write_tensor,
};
use fade_core::upsample::{gate_generate, gated_blend, reassemble, GateParams};
use fade_core::{ConvWeights, Padding, Tensor4};

fn small_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=3, 2usize..=5, 2usize..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_is_invariant_under_per_position_shifts(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
        shift in -20.0f64..20.0,
    ) {
        let mut rng = SplitMix64::new(seed);
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, c + 1, h, w, -4.0, 4.0);
        let base = softmax_channels(&x);
        let shifted = softmax_channels(&x.map(|v| v + shift));
        prop_assert!(base.max_abs_diff(&shifted) <= 1e-6);
    }

    #[test]
    fn nearest_neighbor_blocks_have_zero_variance(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
    ) {
        let mut rng = SplitMix64::new(seed);
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, c, h, w, -1.0, 1.0);
        let up = nn_interpolate_x2(&x);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = up.get(0, ch, 2 * i, 2 * j);
                    prop_assert_eq!(up.get(0, ch, 2 * i, 2 * j + 1), v);
                    prop_assert_eq!(up.get(0, ch, 2 * i + 1, 2 * j), v);
                    prop_assert_eq!(up.get(0, ch, 2 * i + 1, 2 * j + 1), v);
                }
            }
        }
    }

    #[test]
    fn interpolation_and_pooling_preserve_value_bounds(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
        lo in -3.0f64..0.0,
        span in 0.1f64..3.0,
    ) {
        let mut rng = SplitMix64::new(seed);
        let hi = lo + span;
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, c, 2 * h, 2 * w, lo, hi);
        for out in [bilinear_x2(&x), nn_interpolate_x2(&x), maxpool_x2(&x).unwrap()] {
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn generated_kernels_are_always_normalized(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
        d in 2usize..6,
    ) {
        let mut rng = SplitMix64::new(seed);
        let enc: Tensor4<f64> = random_tensor(&mut rng, 1, c, 2 * h, 2 * w, -2.0, 2.0);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, c, h, w, -2.0, 2.0);
        let params = KernelGenParams::random(&mut rng, c, d, 3, 3).unwrap();
        let map = gen_kernels_semishift(&enc, &dec, &params).unwrap();
        prop_assert!(map.normalized);
        for y in 0..2 * h {
            for x in 0..2 * w {
                let mut sum = 0.0;
                for m in 0..9 {
                    let v = map.weights.get(0, m, y, x);
                    prop_assert!((0.0..=1.0).contains(&v));
                    sum += v;
                }
                prop_assert!((sum - 1.0).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn reassembled_values_stay_in_the_window_hull(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
    ) {
        let mut rng = SplitMix64::new(seed);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, c, h, w, -2.0, 2.0);
        let logits: Tensor4<f64> = random_tensor(&mut rng, 1, 9, 2 * h, 2 * w, -3.0, 3.0);
        let map = KernelMap::from_weights(softmax_channels(&logits), true).unwrap();
        let out = reassemble(&dec, &map).unwrap();
        let lo = dec.data().iter().cloned().fold(0.0f64, f64::min);
        let hi = dec.data().iter().cloned().fold(0.0f64, f64::max);
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn gate_maps_are_blockwise_constant_and_open(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
    ) {
        let mut rng = SplitMix64::new(seed);
        let dec: Tensor4<f64> = random_tensor(&mut rng, 1, c, h, w, -2.0, 2.0);
        let params = GateParams::random(&mut rng, c);
        let gate = gate_generate(&dec, &params).unwrap();
        prop_assert_eq!(gate.shape(), (1, 1, 2 * h, 2 * w));
        for i in 0..h {
            for j in 0..w {
                let v = gate.get(0, 0, 2 * i, 2 * j);
                prop_assert!(v > 0.0 && v < 1.0);
                prop_assert_eq!(gate.get(0, 0, 2 * i, 2 * j + 1), v);
                prop_assert_eq!(gate.get(0, 0, 2 * i + 1, 2 * j), v);
                prop_assert_eq!(gate.get(0, 0, 2 * i + 1, 2 * j + 1), v);
            }
        }
    }

    #[test]
    fn blending_interpolates_pointwise(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
    ) {
        let mut rng = SplitMix64::new(seed);
        let enc: Tensor4<f64> = random_tensor(&mut rng, 1, c, h, w, -1.0, 1.0);
        let pre: Tensor4<f64> = random_tensor(&mut rng, 1, c, h, w, -1.0, 1.0);
        let gate: Tensor4<f64> = random_tensor(&mut rng, 1, 1, h, w, 0.0, 1.0);
        let out = gated_blend(&enc, &pre, &gate).unwrap();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let a = enc.get(0, ch, y, x);
                    let b = pre.get(0, ch, y, x);
                    let v = out.get(0, ch, y, x);
                    prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn convolution_is_linear_in_its_input(
        (c, h, w) in small_dims(),
        seed in 0u64..1 << 20,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mut rng = SplitMix64::new(seed);
        let x: Tensor4<f64> = random_tensor(&mut rng, 1, c, h + 2, w + 2, -1.0, 1.0);
        let y: Tensor4<f64> = random_tensor(&mut rng, 1, c, h + 2, w + 2, -1.0, 1.0);
        let weights = ConvWeights::new(random_tensor(&mut rng, 2, c, 3, 3, -1.0, 1.0), None).unwrap();
        let mixed = Tensor4::new(
            1, c, h + 2, w + 2,
            x.data().iter().zip(y.data()).map(|(&xv, &yv)| a * xv + b * yv).collect(),
        ).unwrap();
        let lhs = conv2d(&mixed, &weights, 1, Padding::uniform(1)).unwrap();
        let cx = conv2d(&x, &weights, 1, Padding::uniform(1)).unwrap();
        let cy = conv2d(&y, &weights, 1, Padding::uniform(1)).unwrap();
        let rhs = Tensor4::new(
            1, 2, h + 2, w + 2,
            cx.data().iter().zip(cy.data()).map(|(&xv, &yv)| a * xv + b * yv).collect(),
        ).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }

    #[test]
    fn tensor_files_round_trip_any_shape(
        (n, c, h, w) in (1usize..=2, 1usize..=4, 1usize..=5, 1usize..=5),
        seed in 0u64..1 << 20,
    ) {
        let mut rng = SplitMix64::new(seed);
        let t: Tensor4<f32> = random_tensor(&mut rng, n, c, h, w, -10.0, 10.0);
        let mut bytes = Vec::new();
        write_tensor(&mut bytes, &t).unwrap();
        let (back, used) = decode_tensor::<f32>(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(&back, &t);

        let mut twice = Vec::new();
        write_tensor(&mut twice, &t).unwrap();
        prop_assert_eq!(&bytes, &twice);
    }
}

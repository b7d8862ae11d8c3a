//! Analytic cost model and wall-clock benching for the upsampling
//! operators.
//!
//! Conventions, applied uniformly to every kind:
//!
//! * MACs: a convolution with output `(c_out, H_out, W_out)` over `c_in`
//!   input channels and a `k_h × k_w` kernel costs
//!   `c_out · H_out · W_out · c_in · k_h · k_w` multiply-accumulates; kernel
//!   reassembly costs `C · 4A · K²` where `A = H·W` is the decoder area.
//! * FLOPs: `2 · macs`, plus per-element costs for the nonlinear steps:
//!   softmax 5, sigmoid 4, bilinear interpolation 7 per output element,
//!   gated blend 4. Nearest-neighbor replication, pixel shuffle, and
//!   padding move data without arithmetic and count as zero.
//! * `peak_bytes`: the high-water mark of live intermediate buffers (f32,
//!   4 bytes per element) under each operator's documented evaluation
//!   schedule, excluding the operator inputs themselves. The naive pipeline
//!   must materialize the upsampled decoder feature and the 2C-channel
//!   concatenation at high resolution; the two-resolution pipeline never
//!   holds more than the compressed maps and one logit map.
//!
//! Batch size is fixed at 1: every model in this module is per-image.

use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use crate::kernel_gen::{
    gen_kernels_naive, gen_kernels_semishift, KernelGenParams, KernelMap, DEFAULT_COMPRESSED,
    DEFAULT_KERNEL_SIZE, DEFAULT_WINDOW,
};
use crate::rng::{init_conv, random_tensor, SplitMix64};
use crate::tensor::{
    bilinear_x2, conv2d, pixel_shuffle_x2, softmax_channels, OpError, Padding, Tensor4,
};
use crate::upsample::{fade_forward, reassemble, FadeParams, FusionMode};

/// The operator variants the cost model covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Fixed bilinear interpolation, no parameters.
    Bilinear,
    /// Content-aware reassembly with kernels predicted from the decoder
    /// feature alone (compress, spatially expand via pixel shuffle).
    Carafe,
    /// Kernels from the concatenated features at high resolution.
    FadeNaive,
    /// Kernels from the two-resolution semi-shift generator.
    FadeSemishift,
    /// Semi-shift generator plus the gated encoder blend.
    FadeFull,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Bilinear,
        OpKind::Carafe,
        OpKind::FadeNaive,
        OpKind::FadeSemishift,
        OpKind::FadeFull,
    ];

    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Bilinear => "bilinear",
            OpKind::Carafe => "carafe",
            OpKind::FadeNaive => "fade_naive",
            OpKind::FadeSemishift => "fade_semishift",
            OpKind::FadeFull => "fade_full",
        }
    }
}

impl FromStr for OpKind {
    type Err = OpError;

    fn from_str(s: &str) -> Result<Self, OpError> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| OpError::UnknownKind {
                name: s.to_string(),
            })
    }
}

/// One operator instance to be costed: decoder-resolution geometry plus the
/// generator hyperparameters. Batch size is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpDesc {
    pub kind: OpKind,
    pub channels: usize,
    /// Decoder height; the output is twice this.
    pub height: usize,
    /// Decoder width; the output is twice this.
    pub width: usize,
    pub kernel_size: usize,
    pub window: usize,
    pub compressed: usize,
}

impl OpDesc {
    /// Descriptor with the default hyperparameters (K=5, h=3, d=64).
    #[must_use]
    pub fn new(kind: OpKind, channels: usize, height: usize, width: usize) -> OpDesc {
        OpDesc {
            kind,
            channels,
            height,
            width,
            kernel_size: DEFAULT_KERNEL_SIZE,
            window: DEFAULT_WINDOW,
            compressed: DEFAULT_COMPRESSED,
        }
    }

    pub fn validate(&self) -> Result<(), OpError> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.compressed == 0 {
            return Err(OpError::ZeroDim);
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(OpError::UnsupportedWindow {
                size: self.kernel_size,
            });
        }
        if self.window.is_multiple_of(2) {
            return Err(OpError::UnsupportedWindow { size: self.window });
        }
        Ok(())
    }
}

/// Cost model output. `wall_ns_median` is filled only by [`bench_run`];
/// the analytic fields are exact integers, identical on every run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopReport {
    pub macs: u64,
    pub flops: u64,
    pub peak_bytes: u64,
    pub wall_ns_median: Option<u64>,
}

const F32_BYTES: u64 = 4;

/// Analytic MACs, FLOPs, and peak intermediate bytes for one descriptor.
pub fn count_flops(desc: &OpDesc) -> Result<FlopReport, OpError> {
    desc.validate()?;
    let a = (desc.height * desc.width) as u64;
    let c = desc.channels as u64;
    let d = desc.compressed as u64;
    let k2 = (desc.kernel_size * desc.kernel_size) as u64;
    let h2 = (desc.window * desc.window) as u64;

    let reassemble_macs = 4 * a * c * k2;
    let softmax_flops = 5 * 4 * a * k2;
    // Live-buffer schedules in units of A elements; see the module docs.
    let reassemble_stage = 4 * k2 + 4 * c;

    let (macs, flops, peak_units) = match desc.kind {
        OpKind::Bilinear => {
            let flops = 7 * 4 * a * c;
            (0, flops, 4 * c)
        }
        OpKind::Carafe => {
            let macs = a * c * d + 4 * a * d * k2 * h2 + reassemble_macs;
            let flops = 2 * macs + softmax_flops;
            let peak = (d + 4 * k2).max(8 * k2).max(reassemble_stage);
            (macs, flops, peak)
        }
        OpKind::FadeNaive => {
            let macs = 8 * a * c * d + 4 * a * d * k2 * h2 + reassemble_macs;
            let flops = 2 * macs + softmax_flops;
            let peak = (12 * c)
                .max(8 * c + 4 * d)
                .max(4 * d + 4 * k2)
                .max(8 * k2)
                .max(reassemble_stage);
            (macs, flops, peak)
        }
        OpKind::FadeSemishift | OpKind::FadeFull => {
            let mut macs = 5 * a * c * d + 5 * a * d * k2 * h2 + reassemble_macs;
            let mut peak = (d + k2)
                .max(5 * k2)
                .max(4 * d + 4 * k2)
                .max(8 * k2)
                .max(reassemble_stage);
            let mut extra_flops = softmax_flops;
            if desc.kind == OpKind::FadeFull {
                // Gate: 1x1 logit conv, sigmoid on the replicated map, and
                // the per-element blend; the blend stage holds the upsampled
                // feature, the gate, and the output.
                macs += a * c;
                extra_flops += 4 * 4 * a + 4 * 4 * a * c;
                peak = peak.max(8 * c + 4);
            }
            (macs, 2 * macs + extra_flops, peak)
        }
    };
    Ok(FlopReport {
        macs,
        flops,
        peak_bytes: F32_BYTES * a * peak_units,
        wall_ns_median: None,
    })
}

/// The standard comparison grid: a channel sweep at one resolution and two
/// resolution sweeps at fixed channel widths, `(channels, side)` pairs.
pub const SWEEP_POINTS: [(usize, usize); 13] = [
    (16, 56),
    (32, 56),
    (64, 56),
    (128, 56),
    (256, 56),
    (64, 14),
    (64, 28),
    (64, 56),
    (64, 112),
    (256, 14),
    (256, 28),
    (256, 56),
    (256, 112),
];

/// Descriptors for one kind across the whole standard grid.
#[must_use]
pub fn standard_sweep(kind: OpKind) -> Vec<OpDesc> {
    SWEEP_POINTS
        .iter()
        .map(|&(c, side)| OpDesc::new(kind, c, side, side))
        .collect()
}

/// Runs one descriptor `trials` times on seeded random inputs and fills in
/// the median wall time. The analytic fields are unaffected by timing, so
/// everything except `wall_ns_median` is reproducible across runs.
pub fn bench_run(desc: &OpDesc, trials: usize, seed: u64) -> Result<FlopReport, OpError> {
    if trials < 3 {
        return Err(OpError::TooFewTrials { trials });
    }
    let mut report = count_flops(desc)?;

    let mut rng = SplitMix64::new(seed);
    let c = desc.channels;
    let (h, w) = (desc.height, desc.width);
    let enc: Tensor4<f32> = random_tensor(&mut rng, 1, c, 2 * h, 2 * w, -1.0, 1.0);
    let dec: Tensor4<f32> = random_tensor(&mut rng, 1, c, h, w, -1.0, 1.0);

    let mut run: Box<dyn FnMut() -> Result<Tensor4<f32>, OpError>> = match desc.kind {
        OpKind::Bilinear => Box::new(move || Ok(bilinear_x2(&dec))),
        OpKind::Carafe => {
            let compress = init_conv(&mut rng, desc.compressed, c, 1, 1, true);
            let content = init_conv(
                &mut rng,
                4 * desc.kernel_size * desc.kernel_size,
                desc.compressed,
                desc.window,
                desc.window,
                true,
            );
            let r = desc.window / 2;
            Box::new(move || {
                let comp = conv2d(&dec, &compress, 1, Padding::ZERO)?;
                let logits = conv2d(&comp, &content, 1, Padding::uniform(r))?;
                let hi = pixel_shuffle_x2(&logits)?;
                let map = KernelMap::from_weights(softmax_channels(&hi), true)?;
                reassemble(&dec, &map)
            })
        }
        OpKind::FadeNaive | OpKind::FadeSemishift => {
            let params = KernelGenParams::random(
                &mut rng,
                c,
                desc.compressed,
                desc.kernel_size,
                desc.window,
            )?;
            let naive = desc.kind == OpKind::FadeNaive;
            Box::new(move || {
                let map = if naive {
                    gen_kernels_naive(&enc, &dec, &params)?
                } else {
                    gen_kernels_semishift(&enc, &dec, &params)?
                };
                reassemble(&dec, &map)
            })
        }
        OpKind::FadeFull => {
            let params = FadeParams::random(
                &mut rng,
                c,
                desc.compressed,
                desc.kernel_size,
                desc.window,
                FusionMode::Gating,
            )?;
            Box::new(move || Ok(fade_forward(&enc, &dec, &params)?.output))
        }
    };

    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let out = run()?;
        black_box(out.data().last().copied());
        times.push(start.elapsed().as_nanos() as u64);
    }
    times.sort_unstable();
    report.wall_ns_median = Some(times[trials / 2]);
    Ok(report)
}

pub const BENCH_CSV_HEADER: &str = "kind,C,H,W,K,h,d,macs,flops,peak_bytes,wall_ns_median";

/// Renders bench rows as CSV. The final column is empty for reports that
/// were never timed; every other column is a pure function of the
/// descriptor, so two runs of the same grid differ only in that column.
#[must_use]
pub fn bench_csv(rows: &[(OpDesc, FlopReport)]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for (desc, report) in rows {
        let wall = report
            .wall_ns_median
            .map(|ns| ns.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            desc.kind.name(),
            desc.channels,
            desc.height,
            desc.width,
            desc.kernel_size,
            desc.window,
            desc.compressed,
            report.macs,
            report.flops,
            report.peak_bytes,
            wall,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_costs_at_the_reference_point() {
        // C=64, 112x112 decoder, defaults K=5, h=3, d=64. The compression
        // term A*C*d alone is 112*112*64*64 = 51_380_224; the totals below
        // follow from the documented formulas.
        let semi = count_flops(&OpDesc::new(OpKind::FadeSemishift, 64, 112, 112)).unwrap();
        assert_eq!(semi.macs, 1_240_350_720);
        let naive = count_flops(&OpDesc::new(OpKind::FadeNaive, 64, 112, 112)).unwrap();
        assert_eq!(naive.macs, 1_213_857_792);
    }

    #[test]
    fn generation_cost_crossover_sits_at_three_k_squared() {
        // With h=3 the two strategies trade 3*A*C*d of compression work
        // against A*d*K²*h² of duplicated window work, so the
        // two-resolution path wins exactly when C > 3K².
        for c in [16, 32, 64, 75, 76, 128, 256, 512] {
            let semi = count_flops(&OpDesc::new(OpKind::FadeSemishift, c, 8, 8)).unwrap();
            let naive = count_flops(&OpDesc::new(OpKind::FadeNaive, c, 8, 8)).unwrap();
            if c > 75 {
                assert!(semi.macs < naive.macs, "C={c}");
            } else {
                assert!(semi.macs >= naive.macs, "C={c}");
            }
        }
    }

    #[test]
    fn peak_memory_prefers_the_two_resolution_path_everywhere() {
        for &(c, side) in &SWEEP_POINTS {
            let semi = count_flops(&OpDesc::new(OpKind::FadeSemishift, c, side, side)).unwrap();
            let naive = count_flops(&OpDesc::new(OpKind::FadeNaive, c, side, side)).unwrap();
            assert!(
                semi.peak_bytes < naive.peak_bytes,
                "C={c} side={side}: semi {} vs naive {}",
                semi.peak_bytes,
                naive.peak_bytes
            );
        }
    }

    #[test]
    fn pinned_peak_units_at_the_tightest_point() {
        // C=16, d=64, K=5: naive peaks at the compression stage
        // (8C + 4d = 384 A-units), the two-resolution path at its
        // compression stage (4d + 4K² = 356 A-units).
        let a = 56u64 * 56;
        let semi = count_flops(&OpDesc::new(OpKind::FadeSemishift, 16, 56, 56)).unwrap();
        assert_eq!(semi.peak_bytes, 4 * a * 356);
        let naive = count_flops(&OpDesc::new(OpKind::FadeNaive, 16, 56, 56)).unwrap();
        assert_eq!(naive.peak_bytes, 4 * a * 384);
    }

    #[test]
    fn bilinear_needs_no_macs() {
        let r = count_flops(&OpDesc::new(OpKind::Bilinear, 8, 10, 10)).unwrap();
        assert_eq!(r.macs, 0);
        assert_eq!(r.flops, 7 * 4 * 100 * 8);
        assert_eq!(r.peak_bytes, 4 * 100 * 4 * 8);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in OpKind::ALL {
            assert_eq!(kind.name().parse::<OpKind>().unwrap(), kind);
        }
        assert!(matches!(
            "nearest".parse::<OpKind>(),
            Err(OpError::UnknownKind { .. })
        ));
    }

    #[test]
    fn too_few_trials_is_rejected() {
        let desc = OpDesc::new(OpKind::Bilinear, 2, 4, 4);
        assert_eq!(
            bench_run(&desc, 2, 1).unwrap_err(),
            OpError::TooFewTrials { trials: 2 }
        );
    }

    #[test]
    fn bench_fills_the_median_and_keeps_analytic_fields() {
        let desc = OpDesc {
            kind: OpKind::FadeSemishift,
            channels: 3,
            height: 4,
            width: 4,
            kernel_size: 3,
            window: 3,
            compressed: 4,
        };
        let timed = bench_run(&desc, 3, 7).unwrap();
        let pure = count_flops(&desc).unwrap();
        assert!(timed.wall_ns_median.is_some());
        assert_eq!(timed.macs, pure.macs);
        assert_eq!(timed.flops, pure.flops);
        assert_eq!(timed.peak_bytes, pure.peak_bytes);
    }

    #[test]
    fn every_kind_runs_under_the_bench_harness() {
        for kind in OpKind::ALL {
            let desc = OpDesc {
                kind,
                channels: 3,
                height: 4,
                width: 4,
                kernel_size: 3,
                window: 3,
                compressed: 4,
            };
            let r = bench_run(&desc, 3, 11).unwrap();
            assert!(r.wall_ns_median.is_some(), "{}", kind.name());
        }
    }

    #[test]
    fn csv_is_stable_except_for_the_time_column() {
        let desc = OpDesc::new(OpKind::FadeSemishift, 16, 8, 8);
        let strip = |csv: &str| -> String {
            csv.lines()
                .map(|line| {
                    line.rsplit_once(',')
                        .map(|(head, _)| head.to_string())
                        .unwrap()
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let a = bench_csv(&[(desc, bench_run(&desc, 3, 5).unwrap())]);
        let b = bench_csv(&[(desc, bench_run(&desc, 3, 5).unwrap())]);
        assert_eq!(strip(&a), strip(&b));
        assert!(a.starts_with(BENCH_CSV_HEADER));
    }

    #[test]
    fn standard_sweep_covers_every_point_once() {
        let descs = standard_sweep(OpKind::FadeNaive);
        assert_eq!(descs.len(), SWEEP_POINTS.len());
        assert!(descs.iter().all(|d| d.kind == OpKind::FadeNaive));
    }
}

//! `fade`: command-line front end for the fade upsampling library.
//!
//! Subcommands map one-to-one onto the library's surfaces: `verify` runs
//! the invariant suite, `bench` writes the analytic cost sweep, `gradcheck`
//! certifies gradients against finite differences, `toy` runs the
//! reconstruction benchmark, and `upsample` applies the operator to tensors
//! on disk.
//!
//! Exit codes are a stable contract: 0 success, 1 a verification or
//! certification failure, 2 usage or input errors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fade_core::autograd::{gradcheck_op, GRADCHECK_OPS};
use fade_core::experiments::{ablation_csv, ablation_suite, train_toy, ToyConfig, ToyKind};
use fade_core::kernel_gen::{
    KernelGenParams, DEFAULT_COMPRESSED, DEFAULT_KERNEL_SIZE, DEFAULT_WINDOW,
};
use fade_core::profiler::{bench_csv, bench_run, count_flops, FlopReport, OpDesc, OpKind};
use fade_core::rng::SplitMix64;
use fade_core::tensor::{decode_tensor, save_tensor, TensorIoError};
use fade_core::upsample::{fade_forward, FadeParams, FusionMode, GateParams};
use fade_core::{ConvWeights, Element, OpError, Tensor4};

const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug)]
enum CliError {
    Io(std::io::Error),
    Tensor(TensorIoError),
    Op(OpError),
    BadInput(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Tensor(e) => write!(f, "tensor file error: {e}"),
            CliError::Op(e) => write!(f, "{e}"),
            CliError::BadInput(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<TensorIoError> for CliError {
    fn from(e: TensorIoError) -> Self {
        CliError::Tensor(e)
    }
}

impl From<OpError> for CliError {
    fn from(e: OpError) -> Self {
        CliError::Op(e)
    }
}

#[derive(Parser)]
#[command(
    name = "fade",
    version,
    about = "Dynamic x2 feature upsampling toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the library's invariant suite and report one line per check.
    Verify(VerifyArgs),
    /// Emit the analytic cost sweep (and optionally wall times) as CSV.
    Bench(BenchArgs),
    /// Certify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the toy reconstruction benchmark.
    Toy(ToyArgs),
    /// Upsample a decoder tensor guided by an encoder tensor.
    Upsample(UpsampleArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed for the randomized checks.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BenchGrid {
    /// Decoder fixed at 56x56, channels swept over {16, 32, 64, 128, 256}.
    Channels,
    /// 64 channels, decoder sizes {14, 28, 56, 112}.
    Res64,
    /// 256 channels, decoder sizes {14, 28, 56, 112}.
    Res256,
    /// One point given by --channels and --size.
    Custom,
}

#[derive(Args)]
struct BenchArgs {
    /// Which sweep to run.
    #[arg(long, value_enum, default_value_t = BenchGrid::Channels)]
    grid: BenchGrid,
    /// Channel count for --grid custom.
    #[arg(long)]
    channels: Option<usize>,
    /// Decoder side length for --grid custom.
    #[arg(long)]
    size: Option<usize>,
    /// Wall-clock trials per row; the median is reported.
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Skip wall-clock timing; rows are then bit-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Seed for the timing input tensors.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Base seed; trial t uses seed + t.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Random trials per operation.
    #[arg(long, default_value_t = 5)]
    trials: usize,
}

#[derive(Args)]
struct ToyArgs {
    /// Train all six arms on the shared dataset.
    #[arg(long, conflicts_with = "kind")]
    ablation: bool,
    /// Train a single arm: bilinear, carafe, encoder_only, fade_no_gate,
    /// fade_skip or fade_full.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// High-resolution pattern side length, even and at least 8.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Training patterns per epoch.
    #[arg(long, default_value_t = 32)]
    train: usize,
    /// Held-out patterns.
    #[arg(long, default_value_t = 8)]
    test: usize,
    /// Write the result CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UpsampleArgs {
    /// Encoder feature tensor, FTEN, dims exactly double the decoder's.
    #[arg(long)]
    enc: PathBuf,
    /// Decoder feature tensor, FTEN.
    #[arg(long)]
    dec: PathBuf,
    /// Either `random:SEED` or a path to a packed parameter file.
    #[arg(long, default_value = "random:42")]
    params: String,
    /// Fusion mode: none, skipping or gating.
    #[arg(long, default_value = "gating")]
    mode: String,
    /// Compressed channel count for random parameters.
    #[arg(long, default_value_t = DEFAULT_COMPRESSED)]
    compressed: usize,
    /// Reassembly kernel side length K for random parameters.
    #[arg(long, default_value_t = DEFAULT_KERNEL_SIZE)]
    kernel_size: usize,
    /// Content window side length h for random parameters.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Output tensor path, FTEN.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(args) => Ok(cmd_verify(&args)),
        Command::Bench(args) => cmd_bench(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Toy(args) => cmd_toy(&args),
        Command::Upsample(args) => cmd_upsample(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_verify(args: &VerifyArgs) -> u8 {
    let outcomes = fade_core::verify::run_all(args.seed);
    print!("{}", fade_core::verify::render(&outcomes));
    if fade_core::verify::all_passed(&outcomes) {
        0
    } else {
        1
    }
}

fn grid_points(args: &BenchArgs) -> Result<Vec<(usize, usize)>, CliError> {
    match args.grid {
        BenchGrid::Channels => Ok(vec![(16, 56), (32, 56), (64, 56), (128, 56), (256, 56)]),
        BenchGrid::Res64 => Ok(vec![(64, 14), (64, 28), (64, 56), (64, 112)]),
        BenchGrid::Res256 => Ok(vec![(256, 14), (256, 28), (256, 56), (256, 112)]),
        BenchGrid::Custom => {
            let (Some(c), Some(s)) = (args.channels, args.size) else {
                return Err(CliError::BadInput(
                    "--grid custom requires --channels and --size".to_string(),
                ));
            };
            Ok(vec![(c, s)])
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, CliError> {
    let points = grid_points(args)?;
    let mut rows: Vec<(OpDesc, FlopReport)> = Vec::new();
    for &(c, s) in &points {
        for kind in OpKind::ALL {
            let desc = OpDesc::new(kind, c, s, s);
            let report = if args.no_timing {
                count_flops(&desc)?
            } else {
                bench_run(&desc, args.trials, args.seed)?
            };
            rows.push((desc, report));
        }
    }
    let csv = bench_csv(&rows);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<u8, CliError> {
    if args.trials == 0 {
        return Err(CliError::BadInput(
            "--trials must be at least 1".to_string(),
        ));
    }
    let mut worst: f64 = 0.0;
    let mut failed = false;
    for op in GRADCHECK_OPS {
        let mut op_worst: f64 = 0.0;
        let mut note = None;
        for t in 0..args.trials {
            match gradcheck_op(op, args.seed.wrapping_add(t as u64)) {
                Ok(report) => op_worst = op_worst.max(report.max_rel_err),
                Err(e) => {
                    note = Some(e.to_string());
                    break;
                }
            }
        }
        match note {
            Some(msg) => {
                println!("{op:<24} error: {msg}");
                failed = true;
            }
            None => {
                println!(
                    "{op:<24} max rel err {op_worst:.3e} over {} trials",
                    args.trials
                );
                worst = worst.max(op_worst);
            }
        }
    }
    println!("worst {worst:.3e}, tolerance {GRAD_TOLERANCE:.0e}");
    Ok(if failed || worst > GRAD_TOLERANCE {
        1
    } else {
        0
    })
}

fn toy_config(args: &ToyArgs) -> ToyConfig {
    ToyConfig {
        seed: args.seed,
        epochs: args.epochs,
        lr: args.lr,
        size: args.size,
        n_train: args.train,
        n_test: args.test,
    }
}

fn cmd_toy(args: &ToyArgs) -> Result<u8, CliError> {
    let cfg = toy_config(args);
    if args.ablation {
        let results = ablation_suite(&cfg)?;
        println!("{:<14} {:>14} {:>14}", "kind", "train mse", "test mse");
        for r in &results {
            println!(
                "{:<14} {:>14.6} {:>14.6}",
                r.kind.name(),
                r.final_train_mse,
                r.final_test_mse
            );
        }
        if let Some(path) = &args.out {
            fs::write(path, ablation_csv(&results))?;
            println!("wrote {} rows to {}", results.len(), path.display());
        }
        return Ok(0);
    }
    let Some(kind_name) = &args.kind else {
        return Err(CliError::BadInput(
            "pass --ablation or --kind NAME".to_string(),
        ));
    };
    let kind = ToyKind::from_str(kind_name)?;
    let result = train_toy(kind, &cfg)?;
    println!(
        "{} final train mse {:.6}, test mse {:.6} after {} epochs",
        result.kind.name(),
        result.final_train_mse,
        result.final_test_mse,
        result.epochs
    );
    if let Some(path) = &args.out {
        fs::write(path, ablation_csv(std::slice::from_ref(&result)))?;
        println!("wrote 1 row to {}", path.display());
    }
    Ok(0)
}

fn dtype_code(path: &Path) -> Result<u32, CliError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(CliError::Tensor(TensorIoError::TruncatedFile {
            needed: 12,
            got: bytes.len(),
        }));
    }
    Ok(u32::from_le_bytes([
        bytes[8], bytes[9], bytes[10], bytes[11],
    ]))
}

fn integer_sqrt(v: usize) -> Option<usize> {
    let r = (v as f64).sqrt().round() as usize;
    (r * r == v).then_some(r)
}

fn bias_vec<T: Element>(t: &Tensor4<T>, record: &str) -> Result<Vec<T>, CliError> {
    let (n, c, h, w) = t.shape();
    if c != 1 || h != 1 || w != 1 {
        return Err(CliError::BadInput(format!(
            "{record} record must have shape (len, 1, 1, 1), found ({n}, {c}, {h}, {w})"
        )));
    }
    Ok(t.data().to_vec())
}

/// Packed parameter file: seven FTEN records back to back, all one dtype.
///
/// 1. encoder compressor kernel  (d, C, 1, 1)
/// 2. decoder compressor kernel  (d, C, 1, 1)
/// 3. decoder compressor bias    (d, 1, 1, 1)
/// 4. content kernel             (K^2, d, h, h)
/// 5. content bias               (K^2, 1, 1, 1)
/// 6. gate kernel                (1, C, 1, 1)
/// 7. gate bias                  (1, 1, 1, 1)
fn read_params_file<T: Element>(bytes: &[u8], mode: FusionMode) -> Result<FadeParams<T>, CliError> {
    let mut offset = 0usize;
    let mut next = |what: &str| -> Result<Tensor4<T>, CliError> {
        let (tensor, used) = decode_tensor::<T>(&bytes[offset..])
            .map_err(|e| CliError::BadInput(format!("parameter record {what}: {e}")))?;
        offset += used;
        Ok(tensor)
    };
    let alpha_en = next("encoder compressor kernel")?;
    let alpha_de = next("decoder compressor kernel")?;
    let alpha_de_bias = next("decoder compressor bias")?;
    let beta = next("content kernel")?;
    let beta_bias = next("content bias")?;
    let gate_kernel = next("gate kernel")?;
    let gate_bias = next("gate bias")?;
    if offset != bytes.len() {
        return Err(CliError::BadInput(format!(
            "{} unexpected bytes after the last parameter record",
            bytes.len() - offset
        )));
    }

    let (k2, compressed, window, window_w) = beta.shape();
    if window != window_w {
        return Err(CliError::BadInput(format!(
            "content kernel window must be square, found {window}x{window_w}"
        )));
    }
    let kernel_size = integer_sqrt(k2).ok_or_else(|| {
        CliError::BadInput(format!(
            "content kernel output count {k2} is not a perfect square"
        ))
    })?;

    let kernel_gen = KernelGenParams {
        alpha_en: ConvWeights::new(alpha_en, None)?,
        alpha_de: ConvWeights::new(
            alpha_de,
            Some(bias_vec(&alpha_de_bias, "decoder compressor bias")?),
        )?,
        beta: ConvWeights::new(beta, Some(bias_vec(&beta_bias, "content bias")?))?,
        kernel_size,
        window,
        compressed,
    };
    let gate = GateParams {
        weights: ConvWeights::new(gate_kernel, Some(bias_vec(&gate_bias, "gate bias")?))?,
    };
    let params = FadeParams {
        kernel_gen,
        gate: Some(gate),
        mode,
    };
    Ok(params)
}

fn load_params<T: Element>(
    spec: &str,
    mode: FusionMode,
    channels: usize,
    args: &UpsampleArgs,
) -> Result<FadeParams<T>, CliError> {
    if let Some(seed) = spec.strip_prefix("random:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| CliError::BadInput(format!("bad seed in --params {spec}")))?;
        let mut rng = SplitMix64::new(seed);
        let params = FadeParams::random(
            &mut rng,
            channels,
            args.compressed,
            args.kernel_size,
            args.window,
            mode,
        )?;
        return Ok(params);
    }
    let bytes = fs::read(spec)?;
    read_params_file(&bytes, mode)
}

fn run_upsample<T: Element>(args: &UpsampleArgs, mode: FusionMode) -> Result<u8, CliError> {
    let enc: Tensor4<T> = fade_core::tensor::load_tensor(&args.enc)?;
    let dec: Tensor4<T> = fade_core::tensor::load_tensor(&args.dec)?;
    let params = load_params::<T>(&args.params, mode, dec.c(), args)?;
    let result = fade_forward(&enc, &dec, &params)?;
    save_tensor(&args.out, &result.output)?;
    let (n, c, h, w) = result.output.shape();
    println!(
        "wrote ({n}, {c}, {h}, {w}) {} tensor to {}",
        T::NAME,
        args.out.display()
    );
    Ok(0)
}

fn cmd_upsample(args: &UpsampleArgs) -> Result<u8, CliError> {
    let mode = FusionMode::from_str(&args.mode)?;
    match dtype_code(&args.enc)? {
        1 => run_upsample::<f32>(args, mode),
        2 => run_upsample::<f64>(args, mode),
        other => Err(CliError::Tensor(TensorIoError::UnsupportedDtype {
            found: other,
        })),
    }
}

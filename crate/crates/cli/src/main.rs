//! Batch CLI for the recurrent image prior: train, sample, degrade, sense,
//! recover, evaluate. Every command takes one `--seed` and derives all of its
//! internal randomness from it, and every command writes a manifest next to
//! its primary output with the fully resolved configuration.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{manifest_path, Manifest};
use ride_core::error::Error;
use ride_core::grid::Grid2D;
use ride_core::imgio;
use ride_core::mask::PixelMask;
use ride_core::metrics::{self, MetricConfig};
use ride_core::model::{ModelConfig, RideModel, TrainConfig};
use ride_core::recover::{self, Init, RecoveryConfig};
use ride_core::rng::{derive_seed, SeededRng};
use ride_core::sensing::{MeasurementOperator, Measurements};
use ride_core::slstm::CausalWindow;
use ride_core::Result;

/// Dense Gaussian operators above this pixel count would need gigabytes;
/// larger problems go through the matrix-free Walsh-Hadamard operator.
const DENSE_PIXEL_LIMIT: usize = 16384;

#[derive(Parser)]
#[command(
    name = "ride",
    about = "Recurrent generative image prior: training, sampling, inpainting and compressive recovery",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of grayscale images.
    Train(TrainArgs),
    /// Draw an image from a trained model by ancestral sampling.
    Sample(SampleArgs),
    /// Remove a random fraction of pixels from an image.
    Mask(MaskArgs),
    /// Fill missing pixels by gradient ascent on the prior.
    Inpaint(InpaintArgs),
    /// Synthesize compressive measurements of an image.
    Sense(SenseArgs),
    /// Reconstruct an image from compressive measurements.
    Recover(RecoverArgs),
    /// Compare a reconstruction against a reference (PSNR/SSIM).
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training images (.pgm/.png).
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    patch_start: usize,
    #[arg(long, default_value_t = 22)]
    patch_end: usize,
    #[arg(long, default_value_t = 2)]
    patch_step: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 512)]
    patches_per_epoch: usize,
    #[arg(long, default_value_t = 12)]
    components: usize,
    #[arg(long, default_value_t = 4)]
    scales: usize,
    /// Rank of the gate quadratic forms; defaults to the hidden size.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Skip the U(0,1/255) dequantization noise on training patches.
    #[arg(long)]
    no_dequantize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output size as HxW, e.g. 64x64.
    #[arg(long)]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Fraction of pixels to remove.
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Degraded image (missing pixels set to black).
    #[arg(long)]
    out_masked: PathBuf,
    /// Mask image (white = observed, black = missing).
    #[arg(long)]
    out_mask: PathBuf,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 5e-3)]
    eta: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Entropy threshold in nats.
    #[arg(long, default_value_t = 3.5)]
    tau: f64,
    /// Disable entropy thresholding.
    #[arg(long)]
    no_tau: bool,
    /// Use a single scan direction instead of averaging all four.
    #[arg(long)]
    single_direction: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpKindArg {
    Gaussian,
    Fwht,
}

#[derive(Args)]
struct SenseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    op: OpKindArg,
    /// Measurement rate in (0, 1].
    #[arg(long)]
    mr: f64,
    /// Measurement noise std.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_y: PathBuf,
    #[arg(long)]
    out_op: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecoverMode {
    /// Hard constraint: project onto the measurement-consistent set.
    Project,
    /// Soft constraint: quadratic data penalty with weight lambda.
    Soft,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    op: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to 300 at measurement rates >= 0.25, 400 below.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 5e-3)]
    eta: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 3.5)]
    tau: f64,
    #[arg(long)]
    no_tau: bool,
    /// Soft-constraint weight; requires --mode soft.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<RecoverMode>,
    #[arg(long)]
    single_direction: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 2)]
    trim: usize,
    #[arg(long)]
    out: PathBuf,
    /// Row identifier; defaults to the test file stem.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "")]
    mr: String,
    #[arg(long, default_value = "")]
    method: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Mask(args) => cmd_mask(args),
        Command::Inpaint(args) => cmd_inpaint(args),
        Command::Sense(args) => cmd_sense(args),
        Command::Recover(args) => cmd_recover(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut m = Manifest::new("train");
    let images = load_image_dir(&args.data)?;
    let model_cfg = ModelConfig {
        components: args.components,
        scales: args.scales,
        rank: args.rank,
        hidden: args.hidden,
        window: CausalWindow::default_four(),
        dequantize: !args.no_dequantize,
    };
    let train_cfg = TrainConfig {
        patch_start: args.patch_start,
        patch_end: args.patch_end,
        patch_step: args.patch_step,
        epochs: args.epochs,
        initial_lr: args.lr,
        batch_size: args.batch_size,
        patches_per_epoch: args.patches_per_epoch,
        seed: derive_seed(args.seed, "train"),
    };
    let mut model = RideModel::new(&model_cfg, derive_seed(args.seed, "init"));
    let trace = model.train(&images, &train_cfg)?;
    model.save(&args.out)?;

    for (epoch, ll) in trace.avg_loglik_per_pixel.iter().enumerate() {
        println!(
            "epoch {epoch}: patch {}, lr {:.2e}, avg log-likelihood/pixel {ll:.4}",
            trace.patch_sizes[epoch], trace.learning_rates[epoch]
        );
    }

    m.add_path("input.data", &args.data);
    m.add("param.images", images.len());
    m.add("param.epochs", args.epochs);
    m.add("param.patch_start", args.patch_start);
    m.add("param.patch_end", args.patch_end);
    m.add("param.patch_step", args.patch_step);
    m.add("param.lr", args.lr);
    m.add("param.batch_size", args.batch_size);
    m.add("param.patches_per_epoch", args.patches_per_epoch);
    m.add("param.components", args.components);
    m.add("param.scales", args.scales);
    m.add("param.rank", args.rank.unwrap_or(args.hidden));
    m.add("param.hidden", args.hidden);
    m.add("param.dequantize", !args.no_dequantize);
    m.add("seed", args.seed);
    m.add_path("output.model", &args.out);
    m.add_file_hash("model.fnv1a64", &args.out)?;
    m.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mut m = Manifest::new("sample");
    let model = RideModel::load(&args.model)?;
    let (rows, cols) = parse_size(&args.size)?;
    let mut rng = SeededRng::new(derive_seed(args.seed, "init"));
    let img = model.sample(rows, cols, &mut rng)?;
    imgio::write_image(&img, &args.out)?;

    m.add_path("input.model", &args.model);
    m.add_file_hash("model.fnv1a64", &args.model)?;
    m.add("param.size", format!("{rows}x{cols}"));
    m.add("seed", args.seed);
    m.add_path("output.image", &args.out);
    m.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_mask(args: MaskArgs) -> Result<()> {
    let mut m = Manifest::new("mask");
    let img = imgio::read_image(&args.input)?;
    let mut rng = SeededRng::new(derive_seed(args.seed, "mask"));
    let mask = PixelMask::random(img.rows(), img.cols(), args.fraction, &mut rng)?;
    let mut masked = img.clone();
    for r in 0..img.rows() {
        for c in 0..img.cols() {
            if !mask.is_observed(r, c) {
                masked.set(r, c, 0.0);
            }
        }
    }
    imgio::write_image(&masked, &args.out_masked)?;
    imgio::write_image(&mask.to_grid(), &args.out_mask)?;

    m.add_path("input.image", &args.input);
    m.add("param.fraction", args.fraction);
    m.add("param.missing", mask.missing_count());
    m.add("seed", args.seed);
    m.add_path("output.masked", &args.out_masked);
    m.add_path("output.mask", &args.out_mask);
    m.write(&manifest_path(&args.out_masked))?;
    Ok(())
}

fn cmd_inpaint(args: InpaintArgs) -> Result<()> {
    let mut m = Manifest::new("inpaint");
    let model = RideModel::load(&args.model)?;
    let observed = imgio::read_image(&args.input)?;
    let mask = PixelMask::from_grid(&imgio::read_image(&args.mask)?);
    let tau = threshold(args.tau, args.no_tau)?;
    let cfg = RecoveryConfig {
        step_size: args.eta,
        momentum: args.momentum,
        iterations: args.iters,
        entropy_threshold: tau,
        lambda: 0.0,
        noise_sigma: 0.0,
        init: Init::Random {
            seed: derive_seed(args.seed, "init"),
        },
        clamp: (0.0, 1.0),
        four_directions: !args.single_direction,
    };
    let (out, trace) = recover::inpaint(&model, &observed, &mask, &cfg)?;
    imgio::write_image(&out, &args.out)?;
    if let Some(tp) = &args.trace {
        write_trace(&trace, tp)?;
    }

    m.add_path("input.model", &args.model);
    m.add_file_hash("model.fnv1a64", &args.model)?;
    m.add_path("input.image", &args.input);
    m.add_path("input.mask", &args.mask);
    m.add("param.iters", args.iters);
    m.add("param.eta", args.eta);
    m.add("param.momentum", args.momentum);
    m.add("param.tau", tau.map_or("disabled".into(), |t| t.to_string()));
    m.add("param.four_directions", !args.single_direction);
    m.add("seed", args.seed);
    m.add_path("output.image", &args.out);
    if let Some(tp) = &args.trace {
        m.add_path("output.trace", tp);
    }
    m.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_sense(args: SenseArgs) -> Result<()> {
    let mut m = Manifest::new("sense");
    let img = imgio::read_image(&args.input)?;
    let n = img.len();
    if !(args.mr > 0.0 && args.mr <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "measurement rate must lie in (0,1], got {}",
            args.mr
        )));
    }
    let meas = ((args.mr * n as f64).round() as usize).clamp(1, n);
    let op = match args.op {
        OpKindArg::Gaussian => {
            if n > DENSE_PIXEL_LIMIT {
                return Err(Error::InvalidArg(format!(
                    "image has {n} pixels; dense Gaussian operators are limited to \
                     {DENSE_PIXEL_LIMIT} (use --op fwht for larger images)"
                )));
            }
            MeasurementOperator::gaussian(n, meas, derive_seed(args.seed, "operator"))?
        }
        OpKindArg::Fwht => MeasurementOperator::fwht(n, meas, derive_seed(args.seed, "operator"))?,
    };
    let mut rng = SeededRng::new(derive_seed(args.seed, "noise"));
    let y = op.measure(&img, args.sigma, &mut rng)?;
    op.save(&args.out_op)?;
    y.save(&args.out_y)?;

    m.add_path("input.image", &args.input);
    m.add(
        "param.op",
        match args.op {
            OpKindArg::Gaussian => "gaussian",
            OpKindArg::Fwht => "fwht",
        },
    );
    m.add("param.mr", args.mr);
    m.add("param.m", meas);
    m.add("param.n", n);
    m.add("param.sigma", args.sigma);
    m.add("seed", args.seed);
    m.add_path("output.y", &args.out_y);
    m.add_path("output.op", &args.out_op);
    m.write(&manifest_path(&args.out_y))?;
    Ok(())
}

fn cmd_recover(args: RecoverArgs) -> Result<()> {
    let mut m = Manifest::new("recover");
    let model = RideModel::load(&args.model)?;
    let op = MeasurementOperator::load(&args.op)?;
    let y = Measurements::load(&args.y)?;
    let rate = op.measurement_rate();
    let iters = args.iters.unwrap_or_else(|| RecoveryConfig::iterations_for_rate(rate));
    let tau = threshold(args.tau, args.no_tau)?;

    let mode = match (args.mode, args.lambda) {
        (Some(RecoverMode::Project) | None, None) => RecoverMode::Project,
        (Some(RecoverMode::Soft) | None, Some(l)) if l > 0.0 => RecoverMode::Soft,
        (Some(RecoverMode::Project), Some(_)) => {
            return Err(Error::InvalidArg(
                "--lambda contradicts --mode project: the hard constraint has no soft term"
                    .into(),
            ))
        }
        (Some(RecoverMode::Soft), None) => {
            return Err(Error::InvalidArg("--mode soft requires --lambda > 0".into()))
        }
        (_, Some(l)) => {
            return Err(Error::InvalidArg(format!("--lambda must be positive, got {l}")))
        }
    };

    let cfg = RecoveryConfig {
        step_size: args.eta,
        momentum: args.momentum,
        iterations: iters,
        entropy_threshold: tau,
        lambda: args.lambda.unwrap_or(0.0),
        noise_sigma: y.sigma,
        init: Init::Random {
            seed: derive_seed(args.seed, "init"),
        },
        clamp: (0.0, 1.0),
        four_directions: !args.single_direction,
    };
    let (out, trace) = match mode {
        RecoverMode::Project => recover::cs_recover(&model, &op, &y, &cfg)?,
        RecoverMode::Soft => recover::cs_recover_noisy(&model, &op, &y, &cfg)?,
    };
    imgio::write_image(&out, &args.out)?;
    if let Some(tp) = &args.trace {
        write_trace(&trace, tp)?;
    }

    m.add_path("input.model", &args.model);
    m.add_file_hash("model.fnv1a64", &args.model)?;
    m.add_path("input.y", &args.y);
    m.add_path("input.op", &args.op);
    m.add("param.mode", match mode {
        RecoverMode::Project => "project",
        RecoverMode::Soft => "soft",
    });
    m.add("param.mr", format!("{rate:.6}"));
    m.add("param.iters", iters);
    m.add("param.eta", args.eta);
    m.add("param.momentum", args.momentum);
    m.add("param.tau", tau.map_or("disabled".into(), |t| t.to_string()));
    m.add("param.lambda", args.lambda.unwrap_or(0.0));
    m.add("param.sigma", y.sigma);
    m.add("param.four_directions", !args.single_direction);
    m.add("seed", args.seed);
    m.add_path("output.image", &args.out);
    if let Some(tp) = &args.trace {
        m.add_path("output.trace", tp);
    }
    m.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut m = Manifest::new("eval");
    let reference = imgio::read_image(&args.reference)?;
    let test = imgio::read_image(&args.test)?;
    let cfg = MetricConfig {
        trim: args.trim,
        ..MetricConfig::default()
    };
    let psnr = metrics::psnr(&reference, &test, &cfg)?;
    let ssim = metrics::ssim(&reference, &test, &cfg)?;
    let id = args.id.clone().unwrap_or_else(|| {
        args.test
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let psnr_text = if psnr.is_infinite() { "inf".to_string() } else { format!("{psnr:.6}") };
    let csv = format!(
        "image_id,mr,method,psnr_db,ssim\n{id},{},{},{psnr_text},{ssim:.6}\n",
        args.mr, args.method
    );
    std::fs::write(&args.out, csv)?;
    println!("psnr_db {psnr_text}  ssim {ssim:.6}");

    m.add_path("input.ref", &args.reference);
    m.add_path("input.test", &args.test);
    m.add("param.trim", args.trim);
    m.add("result.psnr_db", &psnr_text);
    m.add("result.ssim", format!("{ssim:.6}"));
    m.add_path("output.csv", &args.out);
    m.write(&manifest_path(&args.out))?;
    Ok(())
}

fn threshold(tau: f64, disabled: bool) -> Result<Option<f64>> {
    if disabled {
        return Ok(None);
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArg(format!(
            "--tau must be positive (got {tau}); use --no-tau to disable thresholding"
        )));
    }
    Ok(Some(tau))
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidArg(format!("size must look like 64x64, got '{s}'")))?;
    let rows = h
        .parse::<usize>()
        .map_err(|_| Error::InvalidArg(format!("bad height in size '{s}'")))?;
    let cols = w
        .parse::<usize>()
        .map_err(|_| Error::InvalidArg(format!("bad width in size '{s}'")))?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArg("size must be at least 1x1".into()));
    }
    Ok((rows, cols))
}

fn load_image_dir(dir: &Path) -> Result<Vec<Grid2D>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("png")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArg(format!(
            "no .pgm or .png images found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| imgio::read_image(p)).collect()
}

fn write_trace(trace: &ride_core::recover::RecoveryTrace, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

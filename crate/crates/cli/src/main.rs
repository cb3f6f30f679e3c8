//! Command-line entry point for the burst deblurring toolkit.
//!
//! Exit codes: 0 success, 2 usage error, 3 runtime or numeric failure.
//! Every flag can also be supplied through `--config <file>` holding
//! `key = value` lines (the key is the long flag name); explicit flags win
//! over config values, and unknown keys are rejected by name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use burstdeblur::datagen::{self, BurstSynth, DatagenConfig};
use burstdeblur::gradcheck::{self, CheckScope, CHECK_TOLERANCE};
use burstdeblur::image::Image;
use burstdeblur::net::BurstNet;
use burstdeblur::pipeline::{self, DeployConfig};
use burstdeblur::psf::{self, GpSampler};
use burstdeblur::trainer::{self, TrainConfig, TrainData, TrainSampler};
use burstdeblur::{nn, ppm, Error};

#[derive(Parser)]
#[command(
    name = "burstdeblur",
    about = "Multi-frame blind deconvolution: restore a sharp image from a blurry burst",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore a sharp image from a burst with a trained model
    Deblur(DeblurArgs),
    /// Fuse a burst with the magnitude-weighted frequency-domain baseline
    Fba(FbaArgs),
    /// Train a model on synthetic bursts
    Train(TrainArgs),
    /// Generate a binary dataset of synthetic bursts from photographs
    GenData(GenDataArgs),
    /// Synthesize a blurry burst from a sharp image
    SynthBlur(SynthBlurArgs),
    /// Evaluate a model checkpoint on a dataset (prints mean MSE / PSNR)
    Eval(EvalArgs),
    /// Verify every backward pass against finite differences
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct DeblurArgs {
    /// Directory or glob of burst frames (PPM/PGM)
    #[arg(long)]
    burst: Option<String>,
    /// Trained model checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output image path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Patch grid stride in pixels [default: 5]
    #[arg(long)]
    stride: Option<usize>,
    /// Fusion weight smoothing sigma in frequency bins [default: 2.0]
    #[arg(long)]
    sigma: Option<f64>,
    /// Skip integer-shift alignment [default: false]
    #[arg(long)]
    no_align: bool,
    /// Skip the Lab chroma transfer from the baseline [default: false]
    #[arg(long)]
    no_color_transfer: bool,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FbaArgs {
    /// Directory or glob of burst frames (PPM/PGM)
    #[arg(long)]
    burst: Option<String>,
    /// Output image path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weight exponent on coefficient magnitudes [default: 11]
    #[arg(long)]
    p: Option<f64>,
    /// Weight smoothing sigma in frequency bins [default: 2.0]
    #[arg(long)]
    sigma: Option<f64>,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Image directory (bursts synthesized on the fly) or a .bdds dataset
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output checkpoint path (the CSV log lands next to it)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of optimization steps [default: 5000]
    #[arg(long)]
    steps: Option<u64>,
    /// Trunk width scale in (0, 1] [default: 0.0625]
    #[arg(long)]
    width_scale: Option<f64>,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian noise variance on [0,1] pixels [default: 0.1]
    #[arg(long)]
    noise_var: Option<f64>,
    /// Initial learning rate; the step decay (x0.8 every 5000 steps) always
    /// applies [default: 2.0]
    #[arg(long)]
    lr: Option<f64>,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory of source photographs (PPM/PGM)
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output dataset path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of examples to generate [default: 2048]
    #[arg(long)]
    count: Option<usize>,
    /// Minimum gradient energy for a sharp crop [default: 0.001]
    #[arg(long)]
    threshold: Option<f64>,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian noise variance on [0,1] pixels [default: 0.1]
    #[arg(long)]
    noise_var: Option<f64>,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthBlurArgs {
    /// Sharp source image (PPM/PGM)
    #[arg(long)]
    image: Option<PathBuf>,
    /// Output directory for frames and kernel files
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of frames to synthesize [default: 14]
    #[arg(long)]
    frames: Option<usize>,
    /// Apply spatially varying blur from trajectory fragments [default: false]
    #[arg(long)]
    spatially_varying: bool,
    /// Region grid for spatially varying blur, ROWSxCOLS [default: 2x4]
    #[arg(long)]
    grid: Option<String>,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset file to evaluate on
    #[arg(long)]
    data: Option<PathBuf>,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Which checks to run: all, nn, fba, deconvnet [default: all]
    #[arg(long)]
    module: Option<String>,
    /// Config file with key = value overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Usage-level failure (exit 2) as opposed to runtime failure (exit 3).
struct UsageError(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Deblur(a) => run_deblur(a),
        Command::Fba(a) => run_fba(a),
        Command::Train(a) => run_train(a),
        Command::GenData(a) => run_gen_data(a),
        Command::SynthBlur(a) => run_synth_blur(a),
        Command::Eval(a) => run_eval(a),
        Command::GradCheck(a) => run_grad_check(a),
    };
    match result {
        Ok(code) => code,
        Err(either) => match either {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Runtime(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        },
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

type CliResult = Result<ExitCode, CliError>;

/// Parse a `key = value` config file against the allowed key set.
fn load_config(
    path: &Path,
    allowed: &[&str],
) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(e.into()))?;
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            UsageError(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !allowed.contains(&key.as_str()) {
            return Err(UsageError(format!(
                "{}: unknown config key {key:?}",
                path.display()
            ))
            .into());
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse_cfg<T: std::str::FromStr>(
    cfg: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match cfg.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| UsageError(format!("config key {key:?} has invalid value {v:?}")).into()),
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| UsageError(format!("missing required --{flag}")).into())
}

/// Resolve a burst source: a directory of PPM/PGM files (sorted) or a glob
/// with a single `*` in the file name.
fn load_burst(spec: &str) -> Result<Vec<Image>, CliError> {
    let path = Path::new(spec);
    let mut files: Vec<PathBuf> = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path).map_err(|e| CliError::Runtime(e.into()))? {
            let p = entry.map_err(|e| CliError::Runtime(e.into()))?.path();
            if p.extension().map(|e| e == "ppm" || e == "pgm").unwrap_or(false) {
                files.push(p);
            }
        }
    } else if spec.contains('*') {
        let (dir, pattern) = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => (d.to_path_buf(), path.file_name()),
            _ => (PathBuf::from("."), path.file_name()),
        };
        let pattern = pattern
            .and_then(|p| p.to_str())
            .ok_or_else(|| UsageError(format!("bad burst glob {spec:?}")))?;
        let (prefix, suffix) = pattern
            .split_once('*')
            .ok_or_else(|| UsageError(format!("bad burst glob {spec:?}")))?;
        for entry in std::fs::read_dir(&dir).map_err(|e| CliError::Runtime(e.into()))? {
            let p = entry.map_err(|e| CliError::Runtime(e.into()))?.path();
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                if name.starts_with(prefix) && name.ends_with(suffix) {
                    files.push(p);
                }
            }
        }
    } else {
        files.push(path.to_path_buf());
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Runtime(Error::EmptyDataset(format!(
            "no burst frames matched {spec:?}"
        ))));
    }
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(ppm::read_image(f).map_err(CliError::Runtime)?);
    }
    Ok(frames)
}

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e)
}

fn run_deblur(args: DeblurArgs) -> CliResult {
    let allowed = ["burst", "model", "out", "stride", "sigma", "no-align", "no-color-transfer"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let burst_spec = require(args.burst.or(parse_cfg(&cfg, "burst")?), "burst")?;
    let model = require(args.model.or(parse_cfg(&cfg, "model")?), "model")?;
    let out = require(args.out.or(parse_cfg(&cfg, "out")?), "out")?;
    let stride = args.stride.or(parse_cfg(&cfg, "stride")?).unwrap_or(5);
    let sigma = args.sigma.or(parse_cfg(&cfg, "sigma")?).unwrap_or(2.0);
    let no_align = args.no_align || parse_cfg(&cfg, "no-align")?.unwrap_or(false);
    let no_color = args.no_color_transfer || parse_cfg(&cfg, "no-color-transfer")?.unwrap_or(false);

    let frames = load_burst(&burst_spec)?;
    let net = BurstNet::from_params(nn::load_checkpoint(&model).map_err(runtime)?)?;
    let deploy = DeployConfig {
        stride,
        burst: net.burst_len(),
        smoothing_sigma: sigma,
        align: !no_align,
        color_transfer: !no_color,
        ..Default::default()
    };
    let result = pipeline::deblur_burst(&frames, &net, &deploy)?;
    ppm::write_image(&out, &result.image).map_err(runtime)?;
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_fba(args: FbaArgs) -> CliResult {
    let allowed = ["burst", "out", "p", "sigma"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let burst_spec = require(args.burst.or(parse_cfg(&cfg, "burst")?), "burst")?;
    let out = require(args.out.or(parse_cfg(&cfg, "out")?), "out")?;
    let p = args.p.or(parse_cfg(&cfg, "p")?).unwrap_or(11.0);
    let sigma = args.sigma.or(parse_cfg(&cfg, "sigma")?).unwrap_or(2.0);

    let frames = load_burst(&burst_spec)?;
    let fused = pipeline::fba_only(&frames, p, sigma, true)?;
    ppm::write_image(&out, &fused).map_err(runtime)?;
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_train(args: TrainArgs) -> CliResult {
    let allowed = ["data", "out", "steps", "width-scale", "seed", "noise-var", "lr"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let data_path: PathBuf = require(args.data.or(parse_cfg(&cfg, "data")?), "data")?;
    let out: PathBuf = require(args.out.or(parse_cfg(&cfg, "out")?), "out")?;
    let steps = args.steps.or(parse_cfg(&cfg, "steps")?).unwrap_or(5000);
    let width_scale = args
        .width_scale
        .or(parse_cfg(&cfg, "width-scale")?)
        .unwrap_or(0.0625);
    let seed = args.seed.or(parse_cfg(&cfg, "seed")?).unwrap_or(0);
    let noise_var = args.noise_var.or(parse_cfg(&cfg, "noise-var")?).unwrap_or(0.1);
    let lr = args.lr.or(parse_cfg(&cfg, "lr")?).unwrap_or(2.0);

    let train_cfg = TrainConfig {
        max_steps: steps,
        width_scale,
        seed,
        base_lr: lr,
        ..Default::default()
    };
    let data = build_train_data(&data_path, noise_var, seed)?;
    let log_path = out.with_extension("log.csv");
    let log = trainer::train(&train_cfg, &data, &out, Some(&log_path))?;
    eprintln!(
        "trained {steps} steps ({} skipped); best validation MSE {:.6e}",
        log.skipped_batches, log.best_val_mse
    );
    eprintln!("checkpoint {}, log {}", out.display(), log_path.display());
    Ok(ExitCode::SUCCESS)
}

/// Build training and validation data. A directory harvests sharp crops and
/// synthesizes bursts on the fly (validation uses a fixed held-out stream,
/// seed 0xC0C0); a `.bdds` file is split into a small validation head and a
/// training remainder.
fn build_train_data(path: &Path, noise_var: f64, seed: u64) -> Result<TrainData, CliError> {
    let datagen_cfg = DatagenConfig { noise_variance: noise_var, ..Default::default() };
    if path.is_dir() {
        let mut rng = ChaCha8Rng::seed_from_u64(datagen::stream_seed(seed, 0x11A57)); // harvest stream
        let mut pool =
            datagen::harvest_patches(path, datagen_cfg.gradient_threshold, 2048 + 256, &mut rng)
                .map_err(runtime)?;
        let synth = BurstSynth::new(datagen_cfg).map_err(runtime)?;
        let val_pool: Vec<_> = pool.split_off(pool.len().saturating_sub(256.min(pool.len() / 2)));
        let val = val_pool
            .iter()
            .enumerate()
            .map(|(i, sharp)| {
                let mut r = ChaCha8Rng::seed_from_u64(datagen::stream_seed(0xC0C0, i as u64));
                synth.make_burst(sharp, &mut r)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(runtime)?;
        Ok(TrainData { sampler: TrainSampler::Synthetic { pool, synth }, val })
    } else {
        let examples = datagen::read_dataset(path).map_err(runtime)?;
        if examples.is_empty() {
            return Err(CliError::Runtime(Error::EmptyDataset(
                "dataset holds no examples".into(),
            )));
        }
        let val_n = (examples.len() / 4).clamp(1, 128);
        let val = examples[..val_n].to_vec();
        let train = examples[val_n..].to_vec();
        let train = if train.is_empty() { val.clone() } else { train };
        Ok(TrainData { sampler: TrainSampler::Fixed(train), val })
    }
}

fn run_gen_data(args: GenDataArgs) -> CliResult {
    let allowed = ["images", "out", "count", "threshold", "seed", "noise-var"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let images: PathBuf = require(args.images.or(parse_cfg(&cfg, "images")?), "images")?;
    let out: PathBuf = require(args.out.or(parse_cfg(&cfg, "out")?), "out")?;
    let count = args.count.or(parse_cfg(&cfg, "count")?).unwrap_or(2048);
    let threshold = args.threshold.or(parse_cfg(&cfg, "threshold")?).unwrap_or(1e-3);
    let seed = args.seed.or(parse_cfg(&cfg, "seed")?).unwrap_or(0);
    let noise_var = args.noise_var.or(parse_cfg(&cfg, "noise-var")?).unwrap_or(0.1);

    let mut rng = ChaCha8Rng::seed_from_u64(datagen::stream_seed(seed, 0x11A57));
    let pool = datagen::harvest_patches(&images, threshold, count, &mut rng).map_err(runtime)?;
    let synth = BurstSynth::new(DatagenConfig { noise_variance: noise_var, ..Default::default() })
        .map_err(runtime)?;
    let examples = pool
        .iter()
        .enumerate()
        .map(|(i, sharp)| {
            let mut r = ChaCha8Rng::seed_from_u64(datagen::stream_seed(seed, i as u64));
            let sharp = datagen::augment(sharp, &mut r);
            synth.make_burst(&sharp, &mut r)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    datagen::write_dataset(&out, &examples).map_err(runtime)?;
    eprintln!("wrote {} examples to {}", examples.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_grid(spec: &str) -> Result<(usize, usize), CliError> {
    let (r, c) = spec
        .split_once('x')
        .ok_or_else(|| UsageError(format!("grid must be ROWSxCOLS, got {spec:?}")))?;
    let rows = r
        .parse()
        .map_err(|_| UsageError(format!("bad grid rows {r:?}")))?;
    let cols = c
        .parse()
        .map_err(|_| UsageError(format!("bad grid cols {c:?}")))?;
    Ok((rows, cols))
}

fn run_synth_blur(args: SynthBlurArgs) -> CliResult {
    let allowed = ["image", "out-dir", "frames", "spatially-varying", "grid", "seed"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let image: PathBuf = require(args.image.or(parse_cfg(&cfg, "image")?), "image")?;
    let out_dir: PathBuf = require(args.out_dir.or(parse_cfg(&cfg, "out-dir")?), "out-dir")?;
    let frames = args.frames.or(parse_cfg(&cfg, "frames")?).unwrap_or(14);
    let varying =
        args.spatially_varying || parse_cfg(&cfg, "spatially-varying")?.unwrap_or(false);
    let grid_spec = args.grid.or(parse_cfg(&cfg, "grid")?).unwrap_or_else(|| "2x4".into());
    let seed = args.seed.or(parse_cfg(&cfg, "seed")?).unwrap_or(0);
    let (rows, cols) = parse_grid(&grid_spec)?;

    let sharp = ppm::read_image(&image).map_err(runtime)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Runtime(e.into()))?;
    let gp = GpSampler::new(Default::default()).map_err(runtime)?;
    let ext = if sharp.channels() == 3 { "ppm" } else { "pgm" };
    for t in 0..frames {
        let mut rng = ChaCha8Rng::seed_from_u64(datagen::stream_seed(seed, t as u64));
        let traj = gp.sample_trajectory(&mut rng);
        let blurred = if varying {
            let kernels = psf::split_trajectory(&traj, rows * cols)?;
            for (i, k) in kernels.iter().enumerate() {
                psf::write_kernel(
                    &out_dir.join(format!("kernel_{t:02}_{i}.txt")),
                    k,
                )
                .map_err(runtime)?;
            }
            psf::eff_blur(&sharp, &kernels, rows, cols)?
        } else {
            let kernel = psf::rasterize(&traj, 17)?;
            psf::write_kernel(&out_dir.join(format!("kernel_{t:02}.txt")), &kernel)
                .map_err(runtime)?;
            kernel.apply(&sharp, burstdeblur::fourier::Boundary::ReflectPad)?
        };
        let mut frame = blurred;
        frame.clamp01();
        ppm::write_image(&out_dir.join(format!("frame_{t:02}.{ext}")), &frame)
            .map_err(runtime)?;
    }
    eprintln!("wrote {frames} frames to {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn run_eval(args: EvalArgs) -> CliResult {
    let allowed = ["model", "data"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let model: PathBuf = require(args.model.or(parse_cfg(&cfg, "model")?), "model")?;
    let data: PathBuf = require(args.data.or(parse_cfg(&cfg, "data")?), "data")?;
    let net = BurstNet::from_params(nn::load_checkpoint(&model).map_err(runtime)?)?;
    let examples = datagen::read_dataset(&data).map_err(runtime)?;
    let (mse, psnr) = trainer::evaluate(&net, &examples)?;
    println!("mean MSE: {mse:.6e}");
    println!("mean PSNR: {psnr:.3} dB");
    Ok(ExitCode::SUCCESS)
}

fn run_grad_check(args: GradCheckArgs) -> CliResult {
    let allowed = ["module"];
    let cfg = match &args.config {
        Some(p) => load_config(p, &allowed)?,
        None => BTreeMap::new(),
    };
    let module = args
        .module
        .or(parse_cfg(&cfg, "module")?)
        .unwrap_or_else(|| "all".into());
    let scope = CheckScope::parse(&module)
        .ok_or_else(|| UsageError(format!("unknown module {module:?} (want all|nn|fba|deconvnet)")))?;
    let reports = gradcheck::run_battery(scope)?;
    let mut failed = false;
    for r in &reports {
        println!("{:<16} max rel err {:.3e}", r.name, r.max_rel_err);
        failed |= !(r.max_rel_err < CHECK_TOLERANCE);
    }
    if failed {
        eprintln!("gradient check FAILED (tolerance {CHECK_TOLERANCE:.0e})");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

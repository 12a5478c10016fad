//! Command-line front end: dataset generation, training, detection, and
//! BER sweeps, glued together with reproducible seeds and JSON configs.
//!
//! Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical
//! or training failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use onebit_core::baselines::{
    brute_force_mle, grid_search_step, nml_detect, relaxed_mle_detect, DEFAULT_STEP_GRID,
};
use onebit_core::channel::{
    export_channel, generate_dataset, ground_truth_params, import_channel, load_dataset,
    sample_rayleigh_channel, save_dataset, ChannelKind, Dataset,
};
use onebit_core::harness::{ber, per_layer_ber, sweep_snr, sweep_train_size, BerReport,
    DetectorSpec, SweepConfig};
use onebit_core::training::{train, TrainConfig, TrainMode};
use onebit_core::unfolded::{detect, load_checkpoint, save_checkpoint, Checkpoint};
use onebit_core::{Constellation, SystemParams};

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "onebit",
    about = "One-bit blind symbol detection: simulate, train, detect, sweep",
    version
)]
struct Cli {
    /// Worker-count cap. Accepted for interface stability; execution is
    /// sequential so results never depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled one-bit dataset at a controlled SNR.
    Generate(GenerateArgs),
    /// Train the unfolded detector and write a checkpoint plus a log.
    Train(TrainArgs),
    /// Run a detector over a dataset and write symbol estimates.
    Detect(DetectArgs),
    /// Monte-Carlo BER sweeps over SNR, training size, or layer index.
    Sweep(SweepArgs),
}

// -------------------------------------------------------------------------
// generate

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// Number of samples.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Import the channel matrix instead of sampling one.
    #[arg(long)]
    channel_file: Option<PathBuf>,
    /// Also export the channel matrix used.
    #[arg(long)]
    channel_out: Option<PathBuf>,
    /// JSON config mirroring these flags; flags win over config values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct GenerateFileConfig {
    m: Option<usize>,
    n: Option<usize>,
    snr_db: Option<f64>,
    batch: Option<usize>,
    seed: Option<u64>,
}

// -------------------------------------------------------------------------
// train

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TwoStage,
    OneStage,
    Alternating,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> TrainMode {
        match m {
            ModeArg::TwoStage => TrainMode::TwoStage,
            ModeArg::OneStage => TrainMode::OneStage,
            ModeArg::Alternating => TrainMode::Alternating,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_bool(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset path.
    #[arg(long)]
    data: PathBuf,
    /// Optional held-out dataset for periodic evaluation.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lr1: Option<f64>,
    #[arg(long)]
    lr2: Option<f64>,
    #[arg(long)]
    epochs1: Option<usize>,
    #[arg(long)]
    epochs2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learn the noise scales instead of assuming them known.
    #[arg(long, value_enum)]
    train_c: Option<Switch>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Newline-JSON training log path (default: OUT with .log.ndjson).
    #[arg(long)]
    log: Option<PathBuf>,
    /// JSON config mirroring these flags; flags win over config values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct TrainFileConfig {
    mode: Option<TrainMode>,
    layers: Option<usize>,
    delta: Option<f64>,
    lr1: Option<f64>,
    lr2: Option<f64>,
    epochs1: Option<usize>,
    epochs2: Option<usize>,
    batch_size: Option<usize>,
    train_c: Option<bool>,
    seed: Option<u64>,
}

// -------------------------------------------------------------------------
// detect

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    Lordnet,
    Nml,
    Bruteforce,
    Relaxed,
}

impl DetectorArg {
    fn name(self) -> &'static str {
        match self {
            DetectorArg::Lordnet => "lordnet",
            DetectorArg::Nml => "nml",
            DetectorArg::Bruteforce => "bruteforce",
            DetectorArg::Relaxed => "relaxed",
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Trained checkpoint (required for lordnet; optional source of system
    /// parameters for the model-based detectors).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "lordnet")]
    detector: DetectorArg,
    /// True channel matrix for coherent model-based detection.
    #[arg(long)]
    channel_file: Option<PathBuf>,
    /// Descent iterations for nml/relaxed.
    #[arg(long, default_value_t = 700)]
    iters: usize,
    /// Step size for nml/relaxed; grid-searched when omitted.
    #[arg(long)]
    step: Option<f64>,
    /// Symbol-estimates output path.
    #[arg(long)]
    out: PathBuf,
}

// -------------------------------------------------------------------------
// sweep

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Snr,
    TrainSize,
    Layer,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepDetectorArg {
    Lordnet,
    Nml,
    Relaxed,
    Delta,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated SNR points in dB (axis snr).
    #[arg(long, value_delimiter = ',')]
    snr_list: Vec<f64>,
    /// Comma-separated training sizes (axis train-size).
    #[arg(long, value_delimiter = ',')]
    size_list: Vec<usize>,
    /// Fixed SNR for the train-size axis.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Training-set size per point (axes snr, layer-free detectors).
    #[arg(long)]
    train_size: Option<usize>,
    /// Test-set size per point.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, default_value = "lordnet")]
    detector: SweepDetectorArg,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report output path; the CSV twin lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Trained checkpoint (axis layer).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test dataset (axis layer).
    #[arg(long)]
    data: Option<PathBuf>,
    // Training knobs for the lordnet detector.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lr1: Option<f64>,
    #[arg(long)]
    lr2: Option<f64>,
    #[arg(long)]
    epochs1: Option<usize>,
    #[arg(long)]
    epochs2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Descent iterations for nml/relaxed.
    #[arg(long, default_value_t = 700)]
    iters: usize,
    /// Step size for nml/relaxed; grid-searched when omitted.
    #[arg(long)]
    step: Option<f64>,
    /// JSON config mirroring these flags; flags win over config values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SweepFileConfig {
    m: Option<usize>,
    n: Option<usize>,
    snr_list: Option<Vec<f64>>,
    size_list: Option<Vec<usize>>,
    snr_db: Option<f64>,
    train_size: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    mode: Option<TrainMode>,
    layers: Option<usize>,
    delta: Option<f64>,
    lr1: Option<f64>,
    lr2: Option<f64>,
    epochs1: Option<usize>,
    epochs2: Option<usize>,
    batch_size: Option<usize>,
}

// -------------------------------------------------------------------------
// error plumbing

/// A missing value that neither flags nor the config file supplied.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if let Some(core) = err.downcast_ref::<onebit_core::Error>() {
        return match core {
            onebit_core::Error::Training { .. } | onebit_core::Error::Numerical { .. } => {
                EXIT_NUMERICAL
            }
            _ => EXIT_VALIDATION,
        };
    }
    EXIT_VALIDATION
}

fn require<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| UsageError(format!("--{flag} is required (flag or config)")).into())
}

fn load_file_config<T: Default + for<'de> Deserialize<'de>>(
    path: &Option<PathBuf>,
) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Writes the fully resolved configuration next to the primary artifact and
/// echoes it to stdout; every command calls this.
fn log_resolved_config(out: &Path, resolved: &serde_json::Value) -> anyhow::Result<()> {
    let pretty = serde_json::to_string_pretty(resolved)?;
    println!("resolved config: {pretty}");
    let sidecar = sidecar_path(out, "config.json");
    fs::write(&sidecar, format!("{pretty}\n"))
        .with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(())
}

fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

// -------------------------------------------------------------------------
// command bodies

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let file: GenerateFileConfig = load_file_config(&args.config)?;
    let m = require(args.m.or(file.m), "m")?;
    let n = require(args.n.or(file.n), "n")?;
    let snr_db = require(args.snr_db.or(file.snr_db), "snr-db")?;
    let batch = require(args.batch.or(file.batch), "batch")?;
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let (h, kind) = match &args.channel_file {
        Some(path) => {
            let h = import_channel(path)?;
            if h.nrows() != m || h.ncols() != n {
                return Err(onebit_core::Error::Validation(format!(
                    "channel file is {}x{}, flags say {}x{}",
                    h.nrows(),
                    h.ncols(),
                    m,
                    n
                ))
                .into());
            }
            (h, ChannelKind::Imported)
        }
        None => (sample_rayleigh_channel(m, n, seed)?, ChannelKind::Rayleigh),
    };
    let theta = ground_truth_params(h, snr_db)?;
    let constellation = Constellation::bpsk();
    let dataset = generate_dataset(&theta, &constellation, batch, snr_db, seed, kind)?;
    save_dataset(&dataset, &args.out)?;
    if let Some(path) = &args.channel_out {
        export_channel(&theta.h, path)?;
    }
    log_resolved_config(
        &args.out,
        &json!({
            "command": "generate",
            "m": m, "n": n, "snr-db": snr_db, "batch": batch, "seed": seed,
            "channel-file": args.channel_file,
            "channel-out": args.channel_out,
            "out": args.out,
        }),
    )?;
    println!(
        "wrote {}: m={m} n={n} snr_db={snr_db} samples={batch} seed={seed}",
        args.out.display()
    );
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let file: TrainFileConfig = load_file_config(&args.config)?;
    let d = TrainConfig::default();
    Ok(TrainConfig {
        layers: args.layers.or(file.layers).unwrap_or(d.layers),
        delta: args.delta.or(file.delta).unwrap_or(d.delta),
        lr_stage1: args.lr1.or(file.lr1).unwrap_or(d.lr_stage1),
        lr_stage2: args.lr2.or(file.lr2).unwrap_or(d.lr_stage2),
        epochs_stage1: args.epochs1.or(file.epochs1).unwrap_or(d.epochs_stage1),
        epochs_stage2: args.epochs2.or(file.epochs2).unwrap_or(d.epochs_stage2),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        train_h: true,
        train_c: args
            .train_c
            .map(Switch::as_bool)
            .or(file.train_c)
            .unwrap_or(d.train_c),
        mode: args.mode.map(TrainMode::from).or(file.mode).unwrap_or(d.mode),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        stage2_layers: None,
    })
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let config = resolve_train_config(&args)?;
    let dataset = load_dataset(&args.data)?;
    let heldout = match &args.heldout {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let resolved = serde_json::to_value(&config)?;
    let resolved = json!({
        "command": "train",
        "data": args.data,
        "heldout": args.heldout,
        "out": args.out,
        "config": resolved,
    });
    let model = train(&dataset, &config, heldout.as_ref())?;

    let mut flags: Vec<&str> = vec!["w"];
    if config.train_h {
        flags.push("h");
    }
    if config.train_c {
        flags.push("sigma");
    }
    let ckpt = Checkpoint::from_model(&model.theta, &model.phi, &flags, Some(resolved.clone()));
    save_checkpoint(&ckpt, &args.out)?;

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| sidecar_path(&args.out, "log.ndjson"));
    let mut log_file = fs::File::create(&log_path)
        .with_context(|| format!("writing {}", log_path.display()))?;
    writeln!(log_file, "{}", serde_json::to_string(&resolved)?)?;
    for record in &model.log {
        writeln!(log_file, "{}", serde_json::to_string(record)?)?;
    }
    log_resolved_config(&args.out, &resolved)?;
    println!(
        "wrote {} (final training loss {:.6e}); log at {}",
        args.out.display(),
        model.final_loss,
        log_path.display()
    );
    Ok(())
}

/// System parameters for the model-based detectors: prefer the checkpoint,
/// fall back to a channel file plus the dataset's SNR.
fn coherent_theta(
    args: &DetectArgs,
    dataset: &Dataset,
) -> anyhow::Result<SystemParams> {
    if let Some(path) = &args.checkpoint {
        let ckpt = load_checkpoint(path)?;
        let (theta, _) = ckpt.to_model()?;
        return Ok(theta);
    }
    if let Some(path) = &args.channel_file {
        let h = import_channel(path)?;
        return Ok(ground_truth_params(h, dataset.meta.snr_db)?);
    }
    Err(onebit_core::Error::Validation(
        "model-based detection needs --checkpoint or --channel-file".into(),
    )
    .into())
}

fn cmd_detect(args: DetectArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.data)?;
    let constellation = Constellation::bpsk();
    let mut estimates = ndarray::Array2::<f64>::zeros(dataset.x_true.dim());

    match args.detector {
        DetectorArg::Lordnet => {
            let path = args.checkpoint.as_ref().ok_or_else(|| {
                UsageError("--detector lordnet requires --checkpoint".into())
            })?;
            let ckpt = load_checkpoint(path)?;
            let (theta, phi) = ckpt.to_model()?;
            if theta.m() != dataset.meta.m || theta.n() != dataset.meta.n {
                return Err(onebit_core::Error::Validation(format!(
                    "checkpoint is {}x{}, dataset is {}x{}",
                    theta.m(),
                    theta.n(),
                    dataset.meta.m,
                    dataset.meta.n
                ))
                .into());
            }
            for p in 0..dataset.len() {
                let r = dataset.observation(p)?;
                estimates
                    .row_mut(p)
                    .assign(&detect(&r, &theta, &phi, &constellation)?);
            }
        }
        DetectorArg::Nml | DetectorArg::Relaxed => {
            let theta = coherent_theta(&args, &dataset)?;
            check_dims(&theta, &dataset)?;
            let step = match args.step {
                Some(s) => s,
                None => {
                    let validation = dataset.slice(0, dataset.len().min(128));
                    grid_search_step(
                        &theta,
                        &validation,
                        &constellation,
                        args.iters,
                        &DEFAULT_STEP_GRID,
                    )?
                }
            };
            for p in 0..dataset.len() {
                let r = dataset.observation(p)?;
                let sym = if args.detector == DetectorArg::Nml {
                    nml_detect(&r, &theta, &constellation, args.iters, step)?
                } else {
                    relaxed_mle_detect(&r, &theta, &constellation, args.iters, step)?.1
                };
                estimates.row_mut(p).assign(&sym);
            }
        }
        DetectorArg::Bruteforce => {
            let theta = coherent_theta(&args, &dataset)?;
            check_dims(&theta, &dataset)?;
            for p in 0..dataset.len() {
                let r = dataset.observation(p)?;
                estimates
                    .row_mut(p)
                    .assign(&brute_force_mle(&r, &theta, &constellation)?);
            }
        }
    }

    write_estimates(&args.out, &estimates, args.detector.name(), &dataset)?;
    let measured = ber(&estimates, &dataset.x_true)?;
    log_resolved_config(
        &args.out,
        &json!({
            "command": "detect",
            "detector": args.detector.name(),
            "checkpoint": args.checkpoint,
            "channel-file": args.channel_file,
            "data": args.data,
            "iters": args.iters,
            "step": args.step,
            "out": args.out,
        }),
    )?;
    println!("ber={measured}");
    Ok(())
}

fn check_dims(theta: &SystemParams, dataset: &Dataset) -> anyhow::Result<()> {
    if theta.m() != dataset.meta.m || theta.n() != dataset.meta.n {
        return Err(onebit_core::Error::Validation(format!(
            "system parameters are {}x{}, dataset is {}x{}",
            theta.m(),
            theta.n(),
            dataset.meta.m,
            dataset.meta.n
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimatesHeader<'a> {
    format_version: u32,
    m: usize,
    n: usize,
    num_samples: usize,
    detector: &'a str,
}

fn write_estimates(
    path: &Path,
    estimates: &ndarray::Array2<f64>,
    detector: &str,
    dataset: &Dataset,
) -> anyhow::Result<()> {
    let header = EstimatesHeader {
        format_version: 1,
        m: dataset.meta.m,
        n: dataset.meta.n,
        num_samples: estimates.nrows(),
        detector,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for row in estimates.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn resolve_sweep_train_config(args: &SweepArgs, file: &SweepFileConfig) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        layers: args.layers.or(file.layers).unwrap_or(d.layers),
        delta: args.delta.or(file.delta).unwrap_or(d.delta),
        lr_stage1: args.lr1.or(file.lr1).unwrap_or(d.lr_stage1),
        lr_stage2: args.lr2.or(file.lr2).unwrap_or(d.lr_stage2),
        epochs_stage1: args.epochs1.or(file.epochs1).unwrap_or(d.epochs_stage1),
        epochs_stage2: args.epochs2.or(file.epochs2).unwrap_or(d.epochs_stage2),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        train_h: true,
        train_c: d.train_c,
        mode: args.mode.map(TrainMode::from).or(file.mode).unwrap_or(d.mode),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        stage2_layers: None,
    }
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let file: SweepFileConfig = load_file_config(&args.config)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let trials = args.trials.or(file.trials).unwrap_or(2048);

    let report = match args.axis {
        AxisArg::Layer => {
            let ckpt_path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| UsageError("--axis layer requires --checkpoint".into()))?;
            let data_path = args
                .data
                .as_ref()
                .ok_or_else(|| UsageError("--axis layer requires --data".into()))?;
            let ckpt = load_checkpoint(ckpt_path)?;
            let (theta, phi) = ckpt.to_model()?;
            let test_set = load_dataset(data_path)?;
            check_dims_sweep(&theta, &test_set)?;
            per_layer_ber(&theta, &phi, &test_set, seed)?
        }
        AxisArg::Snr | AxisArg::TrainSize => {
            let m = require(args.m.or(file.m), "m")?;
            let n = require(args.n.or(file.n), "n")?;
            let train_cfg = resolve_sweep_train_config(&args, &file);
            let train_size = args
                .train_size
                .or(file.train_size)
                .unwrap_or(train_cfg.batch_size);
            let spec = match args.detector {
                SweepDetectorArg::Lordnet => DetectorSpec::Unfolded(train_cfg.clone()),
                SweepDetectorArg::Nml => DetectorSpec::Nml {
                    iters: args.iters,
                    step: args.step,
                },
                SweepDetectorArg::Relaxed => DetectorSpec::Relaxed {
                    iters: args.iters,
                    step: args.step.unwrap_or(0.03),
                },
                SweepDetectorArg::Delta => DetectorSpec::DeltaPolicy {
                    layers: train_cfg.layers,
                    delta: train_cfg.delta,
                },
            };
            let sweep_cfg = SweepConfig {
                m,
                n,
                train_size,
                seed,
            };
            if args.axis == AxisArg::Snr {
                let snr_list = if !args.snr_list.is_empty() {
                    args.snr_list.clone()
                } else {
                    file.snr_list.clone().unwrap_or_default()
                };
                if snr_list.is_empty() {
                    return Err(UsageError("--axis snr requires --snr-list".into()).into());
                }
                sweep_snr(&spec, &snr_list, trials, &sweep_cfg)?
            } else {
                let size_list = if !args.size_list.is_empty() {
                    args.size_list.clone()
                } else {
                    file.size_list.clone().unwrap_or_default()
                };
                if size_list.is_empty() {
                    return Err(
                        UsageError("--axis train-size requires --size-list".into()).into()
                    );
                }
                let snr_db = require(args.snr_db.or(file.snr_db), "snr-db")?;
                sweep_train_size(&spec, &size_list, snr_db, trials, &sweep_cfg)?
            }
        }
    };

    write_report(&args.out, &report)?;
    log_resolved_config(
        &args.out,
        &json!({
            "command": "sweep",
            "axis": match args.axis {
                AxisArg::Snr => "snr",
                AxisArg::TrainSize => "train-size",
                AxisArg::Layer => "layer",
            },
            "detector": report.context.detector_name,
            "m": report.context.m,
            "n": report.context.n,
            "trials": trials,
            "seed": seed,
            "out": args.out,
        }),
    )?;
    println!(
        "wrote {} ({} points)",
        args.out.display(),
        report.points.len()
    );
    Ok(())
}

fn check_dims_sweep(theta: &SystemParams, dataset: &Dataset) -> anyhow::Result<()> {
    if theta.m() != dataset.meta.m || theta.n() != dataset.meta.n {
        return Err(onebit_core::Error::Validation(format!(
            "checkpoint is {}x{}, dataset is {}x{}",
            theta.m(),
            theta.n(),
            dataset.meta.m,
            dataset.meta.n
        ))
        .into());
    }
    Ok(())
}

fn write_report(out: &Path, report: &BerReport) -> anyhow::Result<()> {
    let json_text = serde_json::to_string_pretty(report)?;
    fs::write(out, format!("{json_text}\n"))
        .with_context(|| format!("writing {}", out.display()))?;
    let csv_path = if out.extension().map(|e| e == "json").unwrap_or(false) {
        out.with_extension("csv")
    } else {
        sidecar_path(out, "csv")
    };
    fs::write(&csv_path, report.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(())
}

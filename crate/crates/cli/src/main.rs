//! `rose`: synthesize data, train, detect and evaluate singular points.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rose_core::detect::{Detector, NmsParams};
use rose_core::eval::{evaluate, PointKind, DEFAULT_MATCH_RADIUS, DEFAULT_NMS_MIN, DEFAULT_NMS_RADIUS};
use rose_core::image::{draw_overlay, load_image, save_pgm};
use rose_core::loss::HeatmapConfig;
use rose_core::net::{load_weights_inferred, save_weights, NetworkConfig};
use rose_core::synth::{generate_dataset, SynthSpec};
use rose_core::train::{load_dataset, train_with, AdamConfig, TrainConfig, SIZE_MULTIPLE};

#[derive(Parser)]
#[command(name = "rose", version, about = "Fingerprint singular point detection with multi-scale spatial attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic fingerprints and their annotation file.
    Synth(SynthArgs),
    /// Train a detector from annotated images.
    Train(TrainArgs),
    /// Detect cores and deltas in one image.
    Detect(DetectArgs),
    /// Score a detector against annotated images.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Image side in pixels; a multiple of 16.
    #[arg(long, default_value_t = 128, value_parser = parse_size)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    cores: usize,
    #[arg(long, default_value_t = 1)]
    deltas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding the images named in the annotation file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0.01, value_parser = parse_positive)]
    lr: f64,
    /// Standard deviation of the ground-truth Gaussians, in pixels.
    #[arg(long, default_value_t = 6.0, value_parser = parse_positive)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weights file; the loss log goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Extractor filters per scale, e.g. `8,16,32,32,64` [default: 32,64,128,256,512].
    #[arg(long, value_parser = parse_widths)]
    widths: Option<[usize; 5]>,
    /// Overwrite `--out` with the current weights every N optimizer steps.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    /// PGM or grayscale PNG.
    #[arg(long)]
    image: PathBuf,
    /// Write a copy of the image with detections burned in (PGM).
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Also write the detection JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NMS_RADIUS, value_parser = parse_non_negative)]
    nms_radius: f64,
    #[arg(long, default_value_t = DEFAULT_NMS_MIN, value_parser = parse_unit)]
    nms_min: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MATCH_RADIUS, value_parser = parse_non_negative)]
    match_radius: f64,
}

fn parse_size(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 || !v.is_multiple_of(SIZE_MULTIPLE) {
        return Err(format!("must be a positive multiple of {SIZE_MULTIPLE}"));
    }
    Ok(v)
}

fn parse_float(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !v.is_finite() {
        return Err("must be finite".into());
    }
    Ok(v)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v = parse_float(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v = parse_float(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err("must not be negative".into())
    }
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v = parse_float(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must be in [0,1]".into())
    }
}

fn parse_widths(s: &str) -> Result<[usize; 5], String> {
    let widths: Vec<usize> =
        s.split(',').map(|w| w.trim().parse::<usize>().map_err(|e| format!("{w:?}: {e}"))).collect::<Result<_, _>>()?;
    match <[usize; 5]>::try_from(widths) {
        Ok(w) if w.iter().all(|&c| c > 0) => Ok(w),
        _ => Err("expected five positive comma-separated widths".into()),
    }
}

/// Why a command stopped.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<rose_core::Error> for Failure {
    fn from(e: rose_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Serialize)]
struct DetectedPoint {
    x: i64,
    y: i64,
    kind: PointKind,
    score: f64,
}

/// JSON emitted by `detect`; coordinates are in the original image frame.
#[derive(Serialize)]
struct DetectionOutput {
    image: String,
    points: Vec<DetectedPoint>,
    time_ms: f64,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec { size: args.size, n_cores: args.cores, n_deltas: args.deltas, ..SynthSpec::default() };
    if let Err(e) = spec.validate() {
        return Err(Failure::Usage(e.to_string()));
    }
    let records = generate_dataset(args.count, &spec, args.seed, &args.out)?;
    eprintln!("wrote {} images to {}", records.len(), args.out.display());
    Ok(())
}

fn loss_log_path(weights: &Path) -> PathBuf {
    weights.with_extension("loss.csv")
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let dataset = load_dataset(&args.ann, &args.data)?;
    if dataset.is_empty() {
        return Err(Failure::Usage(format!("{} lists no images", args.ann.display())));
    }
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        heatmap: HeatmapConfig { sigma: args.sigma, ..HeatmapConfig::default() },
        adam: AdamConfig { lr: args.lr, ..AdamConfig::default() },
        network: args.widths.map(NetworkConfig::with_scale_widths).unwrap_or_default(),
        checkpoint_interval: args.checkpoint_every,
        checkpoint_path: (args.checkpoint_every > 0).then(|| args.out.clone()),
        ..TrainConfig::default()
    };
    if let Err(e) = config.validate() {
        return Err(Failure::Usage(e.to_string()));
    }
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let outcome = train_with(&dataset, &config, |step, loss| {
        if step % steps_per_epoch == 0 {
            eprintln!("epoch {} step {step} loss {loss:.6}", step / steps_per_epoch);
        }
    })?;
    save_weights(&outcome.weights, &args.out)?;
    let mut log = String::from("step,loss\n");
    for (i, loss) in outcome.losses.iter().enumerate() {
        log.push_str(&format!("{},{loss}\n", i + 1));
    }
    write_file(&loss_log_path(&args.out), log.as_bytes())?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn detect(args: DetectArgs) -> Result<(), Failure> {
    let weights = load_weights_inferred(&args.weights)?;
    let mut image = load_image(&args.image)?;
    let nms = NmsParams { radius: args.nms_radius, min_value: args.nms_min };
    let detector = Detector::new(weights, nms)?;
    let found = detector.detect(&image)?;
    let output = DetectionOutput {
        image: args.image.display().to_string(),
        points: found
            .points
            .iter()
            .map(|p| DetectedPoint { x: p.x.round() as i64, y: p.y.round() as i64, kind: p.kind, score: p.score })
            .collect(),
        time_ms: found.time_ms,
    };
    let json = serde_json::to_string_pretty(&output).context("serializing detections")? + "\n";
    if let Some(path) = &args.json {
        write_file(path, json.as_bytes())?;
    }
    if let Some(path) = &args.overlay {
        draw_overlay(&mut image, &found.points);
        save_pgm(&image, path)?;
    }
    std::io::stdout().write_all(json.as_bytes()).context("writing to stdout")?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let dataset = load_dataset(&args.ann, &args.data)?;
    if dataset.is_empty() {
        return Err(Failure::Usage(format!("{} lists no images", args.ann.display())));
    }
    let detector = Detector::new(load_weights_inferred(&args.weights)?, NmsParams::default())?;
    let outputs = detector.detect_samples(&dataset)?;
    let records: Vec<_> = dataset.into_iter().map(|s| s.record).collect();
    let report = evaluate(&outputs, &records, args.match_radius);
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

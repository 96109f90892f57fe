//! `train`: fit the restoration network on a folder of clean images.
//!
//! The trainer synthesizes degraded inputs on the fly (per-iteration seeds
//! derive from the config seed), so the dataset is just clean PNGs, given
//! either as a directory or as the clean side of a dataset manifest. Every
//! run echoes its effective configuration first; `--print-config` stops
//! there. Checkpoints land in the output directory and `--resume` picks up
//! from `latest.ckpt` with a loss trace identical to an uninterrupted run.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;

use xrestormer::model::{load_checkpoint, ModelState};
use xrestormer::train::{train, OptimizerState, TRACE_CSV_HEADER};
use xrestormer::{Dataset, Error, ModelConfig, Result, Tensor, TrainConfig, TrainTask};

use crate::manifest::Manifest;
use crate::pngio::read_png;

#[derive(Args)]
pub struct TrainArgs {
    /// Directory of clean PNG training images.
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Dataset manifest; training uses its clean images.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for checkpoints and the loss trace.
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration TOML; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Desk-scale preset: tiny model, 64-pixel patches, batch of 2.
    #[arg(long)]
    pub tiny: bool,
    /// Seed for parameter initialization and the data stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train a single task ("denoise", "sr4", ...) or "all" for the
    /// all-in-one mixture.
    #[arg(long)]
    pub task: Option<TrainTask>,
    /// Optimizer steps to run in this invocation, on top of any resumed
    /// progress (default: run the schedule out).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from `<out>/latest.ckpt` instead of initializing fresh.
    #[arg(long)]
    pub resume: bool,
    /// Echo the effective configuration and exit without training.
    #[arg(long)]
    pub print_config: bool,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if args.tiny {
        cfg.patch = 64;
        cfg.batch = 2;
        cfg.log_every = 1;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(task) = args.task {
        cfg.task = task;
    }
    cfg.validate()?;

    println!("training configuration:");
    print!("{}", cfg.to_toml()?);
    if args.print_config {
        return Ok(());
    }

    let images = load_clean_images(&args)?;
    let dataset = Dataset::new(images)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let latest = args.out.join("latest.ckpt");
    let (mut model, mut opt) = if args.resume {
        let ckpt = load_checkpoint::<f32>(&latest)?;
        let moments = ckpt.moments.ok_or_else(|| {
            Error::Contract(format!(
                "{} carries no optimizer moments; cannot resume from it",
                latest.display()
            ))
        })?;
        let opt = OptimizerState::from_parts(moments.m, moments.v, ckpt.step)?;
        println!("resuming from {} at step {}", latest.display(), ckpt.step);
        (ckpt.state, opt)
    } else {
        let model_cfg = if args.tiny { ModelConfig::tiny() } else { ModelConfig::full() };
        let model = ModelState::<f32>::init(&model_cfg, cfg.seed)?;
        let opt = OptimizerState::new(&model);
        (model, opt)
    };

    let steps = args.steps.unwrap_or(u64::MAX);
    let trace = train(&mut model, &mut opt, &dataset, &cfg, steps, Some(&args.out))?;

    let trace_path = args.out.join("trace.csv");
    let fresh = !trace_path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&trace_path)
        .map_err(|e| Error::io(&trace_path, e))?;
    if fresh {
        writeln!(file, "{TRACE_CSV_HEADER}").map_err(|e| Error::io(&trace_path, e))?;
    }
    for row in &trace {
        writeln!(file, "{}", row.csv_row()).map_err(|e| Error::io(&trace_path, e))?;
    }

    match trace.last() {
        Some(row) => println!(
            "trained to step {}; loss {:.6}; checkpoints in {}",
            opt.step,
            row.loss,
            args.out.display()
        ),
        None => println!("schedule already complete at step {}; nothing to do", opt.step),
    }
    Ok(())
}

/// Clean training images from whichever source was given, in sorted order.
fn load_clean_images(args: &TrainArgs) -> Result<Vec<Tensor<f32>>> {
    let paths: Vec<PathBuf> = match (&args.input, &args.manifest) {
        (Some(dir), None) => {
            let names = super::degrade::png_files(dir)?;
            names.iter().map(|n| dir.join(n)).collect()
        }
        (None, Some(path)) => {
            let manifest = Manifest::load(path)?;
            let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
            manifest.entries.iter().map(|e| base.join(&e.clean)).collect()
        }
        _ => return Err(Error::Config("pass exactly one of --input or --manifest".into())),
    };
    paths.iter().map(|p| read_png(p)).collect()
}

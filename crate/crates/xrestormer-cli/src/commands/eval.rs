//! `eval`: score a checkpoint against a dataset manifest.
//!
//! Each entry's degraded image is either read from disk or synthesized
//! from the manifest's spec, restored, and compared with the clean image.
//! Super-resolution and deraining use the luma-channel convention
//! (super-resolution also crops the border by the scale); all other tasks
//! score full RGB. Images evaluate in parallel but aggregate sequentially
//! in clean-path order, so reports are deterministic. An image that fails
//! (unreadable, shape mismatch) is excluded, reported on stderr, counted
//! in the report's excluded column, and fails the run at the end.
//!
//! Identical image pairs have infinite PSNR; those are counted in their own
//! column and left out of the mean, which covers finite scores only.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;

use xrestormer::degrade::DegradationSpec;
use xrestormer::metrics::{psnr, ssim, MetricConfig};
use xrestormer::model::{load_checkpoint, restore, ModelState};
use xrestormer::{Error, Result, TaskMode, Tensor};

use crate::manifest::{Manifest, ManifestEntry};
use crate::pngio::read_png;
use crate::report::{BenchmarkReport, ReportRow};
use crate::util::{fnv1a64, hex64};

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset manifest to evaluate.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint holding the model to score.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for `report.json` and `report.md`.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: the machine's available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// The scoring convention for a task family.
fn metric_for(task: TaskMode) -> MetricConfig {
    match task {
        TaskMode::Sr { scale } => MetricConfig::y_channel(scale),
        TaskMode::Derain => MetricConfig::y_channel(0),
        _ => MetricConfig::rgb(),
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let task = manifest.task_mode()?;
    let metric = metric_for(task);

    let ckpt = load_checkpoint::<f32>(&args.checkpoint)?;
    let state = ckpt.state;
    let checkpoint_id = format!(
        "{}@{}",
        args.checkpoint.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint"),
        ckpt.step
    );
    let config_toml = toml::to_string_pretty(&state.config)
        .map_err(|e| Error::Parse(format!("model config to TOML: {e}")))?;
    let config_hash = hex64(fnv1a64(config_toml.as_bytes()));

    let scores = score_all(&state, &base, &manifest.entries, task, &metric, args.threads);

    // Aggregate in clean-path order so the error log and the running means
    // never depend on thread scheduling.
    let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
    order.sort_by(|&a, &b| manifest.entries[a].clean.cmp(&manifest.entries[b].clean));

    let mut finite_psnr = Vec::new();
    let mut ssims = Vec::new();
    let mut infinite = 0usize;
    let mut excluded = 0usize;
    for i in order {
        match &scores[i] {
            Ok((p, s)) => {
                if p.is_finite() {
                    finite_psnr.push(*p);
                } else {
                    infinite += 1;
                }
                ssims.push(*s);
            }
            Err(e) => {
                excluded += 1;
                eprintln!("error: {}: {e}", manifest.entries[i].clean.display());
            }
        }
    }

    let mean = |v: &[f64]| {
        if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) }
    };
    let row = ReportRow {
        task: task.to_string(),
        dataset: manifest.name.clone(),
        images: ssims.len(),
        excluded,
        infinite_psnr: infinite,
        psnr_mean: mean(&finite_psnr),
        ssim_mean: mean(&ssims),
        y_channel: metric.use_y_channel,
        crop_border: metric.crop_border,
        checkpoint: checkpoint_id,
        config_hash,
    };
    let report = BenchmarkReport { rows: vec![row] };

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    report.save_json(&args.out.join("report.json"))?;
    let markdown = report.to_markdown();
    std::fs::write(args.out.join("report.md"), &markdown)
        .map_err(|e| Error::io(&args.out.join("report.md"), e))?;
    print!("{markdown}");

    if ssims.is_empty() {
        return Err(Error::Config(format!(
            "no image in {} could be evaluated",
            args.manifest.display()
        )));
    }
    if excluded > 0 {
        return Err(Error::Config(format!(
            "{excluded} of {} images failed; see messages above",
            manifest.entries.len()
        )));
    }
    Ok(())
}

/// Scores every entry, farming images out to worker threads. Results come
/// back indexed by entry so callers control aggregation order.
fn score_all(
    state: &ModelState<f32>,
    base: &Path,
    entries: &[ManifestEntry],
    task: TaskMode,
    metric: &MetricConfig,
    threads: Option<usize>,
) -> Vec<Result<(f64, f64)>> {
    let workers = threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, entries.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<(f64, f64)>>>> =
        entries.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(entry) = entries.get(i) else { break };
                let score = score_one(state, base, entry, task, metric);
                *slots[i].lock().unwrap() = Some(score);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every index was visited"))
        .collect()
}

fn score_one(
    state: &ModelState<f32>,
    base: &Path,
    entry: &ManifestEntry,
    task: TaskMode,
    metric: &MetricConfig,
) -> Result<(f64, f64)> {
    let clean = read_png(&base.join(&entry.clean))?;
    let degraded = match (&entry.degraded, &entry.spec) {
        (Some(path), _) => read_png(&base.join(path))?,
        (None, Some(spec)) => spec.parse::<DegradationSpec>()?.apply(&clean)?,
        (None, None) => {
            return Err(Error::Contract("entry has neither degraded image nor spec".into()))
        }
    };
    let restored = squeeze_batch(restore(state, &batch_of_one(&degraded)?, task)?)?;
    Ok((psnr(&restored, &clean, metric)?, ssim(&restored, &clean, metric)?))
}

fn batch_of_one(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut shape = vec![1];
    shape.extend_from_slice(img.shape());
    Tensor::new(shape, img.data().to_vec())
}

fn squeeze_batch(batch: Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = batch.shape().to_vec();
    Tensor::new(shape[1..].to_vec(), batch.into_data())
}

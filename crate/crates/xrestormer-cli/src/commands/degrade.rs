//! `degrade`: turn a directory of clean PNGs into a benchmark dataset of
//! degraded images plus a manifest.
//!
//! Every image gets its own seed, derived from the root seed and the file
//! name, so reruns with the same arguments reproduce every output byte for
//! byte while distinct images still draw independent degradations. A file
//! that cannot be processed is reported and skipped rather than aborting
//! the batch; the run fails at the end if anything went wrong, and
//! immediately if no image could be processed at all.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xrestormer::degrade::DegradationSpec;
use xrestormer::{Error, Result, TaskMode};

use crate::manifest::{Manifest, ManifestEntry};
use crate::pngio::{read_png, write_png};
use crate::util::derived_seed;

#[derive(Args)]
pub struct DegradeArgs {
    /// Directory of clean PNG images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for degraded images and `manifest.toml`.
    #[arg(long)]
    pub out: PathBuf,
    /// Task family to synthesize: denoise, sr2, sr4, deblur, derain,
    /// dehaze. Parameters are drawn per image from the task's ranges.
    #[arg(long)]
    pub task: Option<TaskMode>,
    /// Degradation template, e.g. "noise sigma=25 seed=0". Fixes the
    /// parameters for the whole dataset; each image's derived seed
    /// replaces the template's seed field.
    #[arg(long)]
    pub spec: Option<String>,
    /// Root seed for the per-image derived seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset name recorded in the manifest; defaults to
    /// "<input-dir-name>-<task>".
    #[arg(long)]
    pub name: Option<String>,
}

pub fn run(args: DegradeArgs) -> Result<()> {
    let template = match &args.spec {
        Some(text) => {
            let spec: DegradationSpec = text.parse()?;
            if let Some(task) = args.task {
                if spec.task() != task {
                    return Err(Error::Config(format!(
                        "--spec is a {} degradation but --task asks for {task}",
                        spec.task()
                    )));
                }
            }
            Some(spec)
        }
        None => None,
    };
    let task = match (&template, args.task) {
        (Some(spec), _) => spec.task(),
        (None, Some(task)) => task,
        (None, None) => return Err(Error::Config("pass --task or --spec".into())),
    };

    let files = png_files(&args.input)?;
    let input = fs::canonicalize(&args.input).map_err(|e| Error::io(&args.input, e))?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut entries = Vec::new();
    let mut failures = 0usize;
    for file in &files {
        let seed = derived_seed(args.seed, file);
        let spec = match &template {
            Some(t) => reseeded(t.clone(), seed),
            None => DegradationSpec::sample(task, &mut ChaCha8Rng::seed_from_u64(seed)),
        };
        match degrade_one(&input.join(file), &args.out.join(file), &spec) {
            Ok(true) => entries.push(ManifestEntry {
                clean: input.join(file),
                degraded: Some(PathBuf::from(file)),
                spec: Some(spec.to_string()),
            }),
            Ok(false) => {}
            Err(e) => {
                failures += 1;
                eprintln!("error: {file}: {e}");
            }
        }
    }

    if entries.is_empty() {
        return Err(Error::Config(format!(
            "no image in {} could be degraded",
            args.input.display()
        )));
    }
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| format!("{}-{task}", dir_name(&input)));
    let manifest = Manifest { name, task: task.to_string(), entries };
    let manifest_path = args.out.join("manifest.toml");
    manifest.save(&manifest_path)?;
    println!(
        "wrote {} degraded images and {} ",
        manifest.entries.len(),
        manifest_path.display()
    );

    if failures > 0 {
        return Err(Error::Config(format!(
            "{failures} of {} images failed; see messages above",
            files.len()
        )));
    }
    Ok(())
}

/// The PNG file names directly inside `dir`, sorted so processing order
/// (and therefore manifest order) is stable across platforms.
pub fn png_files(dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            match path.file_name().and_then(|n| n.to_str()) {
                Some(name) => files.push(name.to_string()),
                None => {
                    return Err(Error::Config(format!(
                        "file name {} is not valid UTF-8",
                        path.display()
                    )))
                }
            }
        }
    }
    if files.is_empty() {
        return Err(Error::Config(format!("no PNG files in {}", dir.display())));
    }
    files.sort();
    Ok(files)
}

/// Replaces the stochastic seed of a template spec with a per-image one.
/// Deterministic degradations pass through unchanged.
fn reseeded(spec: DegradationSpec, seed: u64) -> DegradationSpec {
    match spec {
        DegradationSpec::Noise { sigma, .. } => DegradationSpec::Noise { sigma, seed },
        DegradationSpec::Rain(r) => {
            DegradationSpec::Rain(xrestormer::degrade::RainParams { seed, ..r })
        }
        DegradationSpec::Haze(h) => {
            DegradationSpec::Haze(xrestormer::degrade::HazeParams { seed, ..h })
        }
        deterministic => deterministic,
    }
}

/// Degrades one image. Returns `Ok(false)` for a logged skip (extents not
/// divisible by a super-resolution scale); hard failures bubble up.
fn degrade_one(clean: &Path, out: &Path, spec: &DegradationSpec) -> Result<bool> {
    let img = read_png(clean)?;
    if let DegradationSpec::Sr { scale } = spec {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if h % scale != 0 || w % scale != 0 {
            eprintln!(
                "skipping {}: {h}x{w} is not divisible by the scale {scale}",
                clean.display()
            );
            return Ok(false);
        }
    }
    let degraded = spec.apply(&img)?;
    write_png(out, &degraded)?;
    Ok(true)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string()
}

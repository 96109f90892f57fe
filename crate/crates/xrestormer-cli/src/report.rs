//! Benchmark reports: one row per evaluated (task, dataset) pair, stored as
//! JSON and rendered as a markdown table with PSNR to two decimals and SSIM
//! to four.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xrestormer::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub task: String,
    pub dataset: String,
    /// Images that produced metrics (excluded ones are not counted here).
    pub images: usize,
    /// Images dropped by per-image errors, e.g. shape mismatches.
    pub excluded: usize,
    /// PSNR entries that were +infinity (identical pair); kept out of the mean.
    pub infinite_psnr: usize,
    /// Mean over the finite PSNR values; absent when none were finite.
    pub psnr_mean: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub y_channel: bool,
    pub crop_border: usize,
    pub checkpoint: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
}

impl BenchmarkReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("report to JSON: {e}")))?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Renders the table sorted by (task, dataset), deterministically.
    pub fn to_markdown(&self) -> String {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| (&a.task, &a.dataset).cmp(&(&b.task, &b.dataset)));
        let mut out = String::from(
            "| Task | Dataset | Images | PSNR (dB) | SSIM | Inf PSNR | Excluded | Metric | Checkpoint | Config |\n\
             |------|---------|-------:|----------:|-----:|---------:|---------:|--------|------------|--------|\n",
        );
        for r in &rows {
            let psnr = r.psnr_mean.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
            let ssim = r.ssim_mean.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let metric = if r.y_channel {
                format!("Y, border {}", r.crop_border)
            } else {
                format!("RGB, border {}", r.crop_border)
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.task,
                r.dataset,
                r.images,
                psnr,
                ssim,
                r.infinite_psnr,
                r.excluded,
                metric,
                r.checkpoint,
                r.config_hash,
            ));
        }
        out
    }
}

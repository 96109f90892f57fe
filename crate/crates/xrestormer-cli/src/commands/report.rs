//! `report`: merge per-dataset evaluation reports into one markdown table.
//! Rows are re-sorted by task and dataset, so the merge order of the input
//! files does not matter.

use std::path::PathBuf;

use clap::Args;

use xrestormer::{Error, Result};

use crate::report::BenchmarkReport;

#[derive(Args)]
pub struct ReportArgs {
    /// Evaluation reports (`report.json`) to merge.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Write the markdown here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ReportArgs) -> Result<()> {
    let mut merged = BenchmarkReport { rows: Vec::new() };
    for path in &args.reports {
        merged.rows.extend(BenchmarkReport::load_json(path)?.rows);
    }
    let markdown = merged.to_markdown();
    match &args.out {
        Some(path) => std::fs::write(path, &markdown).map_err(|e| Error::io(path, e))?,
        None => print!("{markdown}"),
    }
    Ok(())
}

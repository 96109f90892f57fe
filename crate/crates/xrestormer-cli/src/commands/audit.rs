//! `param-audit`: cross-check the closed-form parameter count against a
//! walk over an actually-initialized model, with a per-stage breakdown.
//! A disagreement means the size arithmetic and the construction code have
//! drifted apart, so it fails the run.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use xrestormer::model::{count_parameters, ModelState};
use xrestormer::{Error, ModelConfig, Result};

#[derive(Args)]
pub struct ParamAuditArgs {
    /// Audit the desk-scale configuration instead of the full-size one.
    #[arg(long)]
    pub tiny: bool,
    /// Audit the variant with spatial attention blocks replaced by
    /// channel attention.
    #[arg(long)]
    pub no_ssab: bool,
    /// Model configuration TOML; overrides the presets.
    #[arg(long, conflicts_with = "tiny")]
    pub config: Option<PathBuf>,
}

pub fn run(args: ParamAuditArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<ModelConfig>(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None if args.tiny => ModelConfig::tiny(),
        None => ModelConfig::full(),
    };
    if args.no_ssab {
        cfg.ssab_enabled = false;
    }

    let start = Instant::now();
    let closed = count_parameters(&cfg)?;
    let state = ModelState::<f32>::init(&cfg, 0)?;

    // Group tensor sizes by the stage prefix of their parameter names,
    // keeping the network's own front-to-back order.
    let mut stages: Vec<(String, usize)> = Vec::new();
    let mut enumerated = 0usize;
    state.visit(&mut |name, tensor| {
        enumerated += tensor.numel();
        let stage = name.split('.').next().unwrap_or(&name).to_string();
        match stages.iter_mut().find(|(s, _)| *s == stage) {
            Some((_, n)) => *n += tensor.numel(),
            None => stages.push((stage, tensor.numel())),
        }
    });

    println!("parameter audit ({})", describe(&cfg));
    for (stage, n) in &stages {
        println!("  {stage:<12} {n:>12}");
    }
    println!("  {:<12} {:>12}", "total", enumerated);
    println!("closed form: {closed}");
    println!("audit took {:.1} ms", start.elapsed().as_secs_f64() * 1e3);

    if enumerated != closed {
        return Err(Error::Contract(format!(
            "enumerated {enumerated} parameters but the closed form says {closed}"
        )));
    }
    println!("closed-form and enumerated counts agree");
    Ok(())
}

fn describe(cfg: &ModelConfig) -> String {
    format!(
        "base {} channels, pairs {:?}+{}, spatial attention {}",
        cfg.base_channels,
        cfg.pairs_per_level,
        cfg.refinement_pairs,
        if cfg.ssab_enabled { "on" } else { "off" }
    )
}

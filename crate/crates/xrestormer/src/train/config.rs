//! Training configuration and the cosine-restart learning-rate schedule.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::TaskMode;

/// Which degradations the trainer draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrainTask {
    /// One fixed task family.
    Single(TaskMode),
    /// The all-in-one protocol: per sample, one of the five families
    /// uniformly (super-resolution splits its scale uniformly over 2/4).
    AllInOne,
}

impl fmt::Display for TrainTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainTask::Single(mode) => write!(f, "{mode}"),
            TrainTask::AllInOne => write!(f, "all"),
        }
    }
}

impl FromStr for TrainTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(TrainTask::AllInOne)
        } else {
            Ok(TrainTask::Single(s.parse()?))
        }
    }
}

impl From<TrainTask> for String {
    fn from(task: TrainTask) -> String {
        task.to_string()
    }
}

impl TryFrom<String> for TrainTask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Optimization protocol. Defaults reproduce the full-scale recipe
/// (3e-4 AdamW, cosine restarts at 92k/208k, 256-pixel patches, batch 32,
/// both flips); desk-scale runs shrink `patch`, `batch`, `total_iters`,
/// and `cosine_periods` together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Learning rate at the start of every cosine period.
    pub lr0: f64,
    /// Learning-rate floor each period anneals to.
    pub lr_min: f64,
    /// AdamW moment decays.
    pub betas: (f64, f64),
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    /// Cosine period lengths; they must sum to `total_iters`.
    pub cosine_periods: Vec<u64>,
    pub total_iters: u64,
    /// Square patch edge; must divide by 4 so every super-resolution
    /// scale applies.
    pub patch: usize,
    pub batch: usize,
    /// Apply horizontal and vertical flips, each with probability 0.5.
    pub flips: bool,
    pub task: TrainTask,
    /// Seed of the whole run; every iteration derives its own stream.
    pub seed: u64,
    /// Emit a trace row every this many iterations.
    pub log_every: u64,
    /// Write a checkpoint every this many iterations; 0 means only at the
    /// end of a run.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 3e-4,
            lr_min: 1e-6,
            betas: (0.9, 0.99),
            weight_decay: 0.0,
            cosine_periods: vec![92_000, 208_000],
            total_iters: 300_000,
            patch: 256,
            batch: 32,
            flips: true,
            task: TrainTask::AllInOne,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr_min > 0.0 && self.lr_min < self.lr0) {
            return Err(Error::Config(format!(
                "learning rates need 0 < lr_min < lr0, got lr0 {} lr_min {}",
                self.lr0, self.lr_min
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas ({b1}, {b2}) must lie in [0, 1)")));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        if self.cosine_periods.is_empty() || self.cosine_periods.iter().any(|p| *p == 0) {
            return Err(Error::Config("cosine periods must be non-empty and positive".into()));
        }
        let sum: u64 = self.cosine_periods.iter().sum();
        if sum != self.total_iters {
            return Err(Error::Config(format!(
                "cosine periods sum to {sum}, total_iters is {}",
                self.total_iters
            )));
        }
        if self.patch < 12 || self.patch % 4 != 0 {
            return Err(Error::Config(format!(
                "patch {} must be at least 12 and divide by 4",
                self.patch
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("train config to TOML: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Parse(format!("train config from TOML: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate at an iteration: within each period, a cosine anneal
/// from `lr0` down to `lr_min`; every period boundary restarts at `lr0`.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> Result<f64> {
    if iter >= cfg.total_iters {
        return Err(Error::Contract(format!(
            "iteration {iter} is outside the schedule of {} iterations",
            cfg.total_iters
        )));
    }
    let mut t = iter;
    for &period in &cfg.cosine_periods {
        if t < period {
            let phase = std::f64::consts::PI * t as f64 / period as f64;
            return Ok(cfg.lr_min + (cfg.lr0 - cfg.lr_min) * 0.5 * (1.0 + phase.cos()));
        }
        t -= period;
    }
    unreachable!("periods sum to total_iters by validation");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn schedule_hits_the_pinned_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg).unwrap(), 3e-4);
        assert_eq!(lr_at(92_000, &cfg).unwrap(), 3e-4, "restart boundary");
        // one before the restart: phase pi * 91999/92000
        let phase = std::f64::consts::PI * 91_999.0 / 92_000.0;
        let want = 1e-6 + (3e-4 - 1e-6) * 0.5 * (1.0 + phase.cos());
        assert!((lr_at(91_999, &cfg).unwrap() - want).abs() < 1e-18);
        assert!((lr_at(91_999, &cfg).unwrap() - 1e-6).abs() < 1e-9, "lands near the floor");
        assert!(lr_at(300_000, &cfg).is_err());
    }

    #[test]
    fn schedule_stays_bounded_and_continuous() {
        let mut cfg = TrainConfig::default();
        cfg.cosine_periods = vec![300, 700];
        cfg.total_iters = 1_000;
        cfg.validate().unwrap();
        let mut last = None;
        for i in 0..1_000 {
            let lr = lr_at(i, &cfg).unwrap();
            assert!(lr >= cfg.lr_min - 1e-18 && lr <= cfg.lr0 + 1e-18);
            if let Some(prev) = last {
                let jump: f64 = lr - prev;
                // only a restart may move the rate up
                if jump > 0.0 {
                    assert!(i == 300, "unexpected rise at {i}");
                }
            }
            last = Some(lr);
        }
    }

    #[test]
    fn mismatched_periods_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.cosine_periods = vec![100, 100];
        assert!(cfg.validate().is_err());
        cfg.total_iters = 200;
        cfg.validate().unwrap();
    }

    #[test]
    fn train_task_strings_round_trip() {
        for text in ["all", "denoise", "sr2", "sr4", "deblur", "derain", "dehaze"] {
            let task: TrainTask = text.parse().unwrap();
            assert_eq!(task.to_string(), text);
        }
        assert_eq!("all".parse::<TrainTask>().unwrap(), TrainTask::AllInOne);
        assert!("everything".parse::<TrainTask>().is_err());
    }
}

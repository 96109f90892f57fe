//! Training: configuration, schedule, sampling, loss, and the AdamW loop.
//!
//! The protocol is L1 regression on randomly cropped, flipped, freshly
//! degraded patches, optimized by AdamW under a cosine schedule with warm
//! restarts. Every iteration derives its randomness from the run seed and
//! its own index, so a run split across resumed sessions retraces the
//! uninterrupted one bitwise. The defaults in [`TrainConfig`] reproduce
//! the full-scale recipe; desk-scale experiments shrink the patch, batch,
//! and schedule together.

mod config;
mod data;
mod optim;
mod run;

pub use config::{lr_at, TrainConfig, TrainTask};
pub use data::{sample_batch, sample_task, Dataset};
pub use optim::{adamw_step, l1_loss, AdamW, OptimizerState, ADAM_EPS};
pub use run::{iteration_rng, train, TraceRow, TRACE_CSV_HEADER};

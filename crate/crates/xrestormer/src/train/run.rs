//! The optimization loop: sample, forward, L1, backward, AdamW.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{forward, save_checkpoint, ModelState, Moments};
use crate::tensor::{Scalar, Tape, Tensor};
use crate::train::config::{lr_at, TrainConfig};
use crate::train::data::{sample_batch, Dataset};
use crate::train::optim::{adamw_step, l1_loss, AdamW, OptimizerState, ADAM_EPS};

/// One logged step of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Column header matching [`TraceRow::csv_row`].
pub const TRACE_CSV_HEADER: &str = "iter,lr,loss";

impl TraceRow {
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e}", self.iter, self.lr, self.loss)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The random stream of one training iteration, derived from the run seed
/// alone. Iteration k draws the same batch no matter how the run is split
/// into resumed segments.
pub fn iteration_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let key = mix64(mix64(seed ^ 0x9e37_79b9_7f4a_7c15) ^ iter);
    ChaCha8Rng::seed_from_u64(key)
}

fn checkpoint_path(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(name)
}

/// Stamps the failing iteration onto an error so an aborted run can be
/// located in its schedule.
fn with_iteration(e: Error, iter: u64) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("iteration {iter}: {m}")),
        Error::Config(m) => Error::Config(format!("iteration {iter}: {m}")),
        Error::Contract(m) => Error::Contract(format!("iteration {iter}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("iteration {iter}: {m}")),
        Error::Parse(m) => Error::Parse(format!("iteration {iter}: {m}")),
        io @ Error::Io { .. } => io,
    }
}

fn write_checkpoint<T: Scalar>(
    dir: &Path,
    name: &str,
    model: &ModelState<T>,
    opt: &OptimizerState<T>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let moments = Moments { m: opt.m.clone(), v: opt.v.clone() };
    save_checkpoint(&checkpoint_path(dir, name), model, opt.step, Some(&moments))
}

/// Runs up to `max_steps` optimization steps, resuming at `opt.step` and
/// stopping early when the schedule's `total_iters` is reached.
///
/// Each iteration draws its batch from [`iteration_rng`], takes one AdamW
/// step at the scheduled rate, and logs a trace row every
/// `cfg.log_every` iterations (plus the last step of the call). A
/// non-finite loss aborts before the parameters can absorb it. When
/// `checkpoint_dir` is given, numbered checkpoints appear every
/// `cfg.checkpoint_every` steps and `latest.ckpt` after the final one,
/// all carrying optimizer moments so a resumed run continues bitwise.
pub fn train<T: Scalar>(
    model: &mut ModelState<T>,
    opt: &mut OptimizerState<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    max_steps: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if opt.step > cfg.total_iters {
        return Err(Error::Contract(format!(
            "optimizer is at step {} but the schedule ends at {}",
            opt.step, cfg.total_iters
        )));
    }
    let hp = AdamW {
        beta1: cfg.betas.0,
        beta2: cfg.betas.1,
        eps: ADAM_EPS,
        weight_decay: cfg.weight_decay,
    };
    let last = cfg.total_iters.min(opt.step + max_steps);
    let mut trace = Vec::new();
    let mut ran_any = false;

    while opt.step < last {
        let iter = opt.step;
        let mut rng = iteration_rng(cfg.seed, iter);
        let (input, target) =
            sample_batch(dataset, cfg, &mut rng).map_err(|e| with_iteration(e, iter))?;

        let mut tape = Tape::<T>::new();
        let (vars, order) = model.register(&mut tape);
        let x = tape.constant(input);
        let restored = forward(&mut tape, &vars, x).map_err(|e| with_iteration(e, iter))?;
        let t = tape.constant(target);
        let loss = l1_loss(&mut tape, restored, t).map_err(|e| with_iteration(e, iter))?;
        let loss_val = tape.value(loss).item().as_f64();
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss_val} at iteration {iter}; aborting before the update"
            )));
        }
        tape.backward(loss).map_err(|e| with_iteration(e, iter))?;
        let grads: Vec<Tensor<T>> = order
            .iter()
            .map(|v| match tape.grad(*v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(tape.value(*v).shape()),
            })
            .collect();

        let lr = lr_at(iter, cfg)?;
        adamw_step(model, opt, &grads, lr, &hp).map_err(|e| with_iteration(e, iter))?;
        ran_any = true;

        if iter % cfg.log_every == 0 || opt.step == last {
            trace.push(TraceRow { iter, lr, loss: loss_val });
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && opt.step % cfg.checkpoint_every == 0 {
                write_checkpoint(dir, &format!("checkpoint-{:07}.ckpt", opt.step), model, opt)?;
            }
        }
    }

    if ran_any {
        if let Some(dir) = checkpoint_dir {
            write_checkpoint(dir, "latest.ckpt", model, opt)?;
        }
    }
    Ok(trace)
}

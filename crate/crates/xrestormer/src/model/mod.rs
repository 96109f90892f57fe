//! The restoration network: configuration, parameters, forward pass, and
//! checkpoints.
//!
//! The network is a four-level U-shaped transformer over [B, C, H, W]
//! feature maps. Each level stacks block pairs of one channelwise
//! (transposed) attention block and one overlapping-window spatial
//! attention block; resolution halves and width doubles per level down.
//! The output is a predicted residual added to the input, so an untrained
//! network with zeroed output projections is an exact identity.
//!
//! Typical use:
//!
//! ```
//! use xrestormer::model::{forward, ModelConfig, ModelState};
//! use xrestormer::tensor::{randn, Tape};
//! use rand::SeedableRng;
//!
//! let state = ModelState::<f32>::init(&ModelConfig::tiny(), 0).unwrap();
//! let mut tape = Tape::new();
//! let (vars, params) = state.register(&mut tape);
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let x = tape.constant(randn(&[1, 3, 16, 16], 0.0, 1.0, &mut rng));
//! let y = forward(&mut tape, &vars, x).unwrap();
//! assert_eq!(tape.value(y).shape(), &[1, 3, 16, 16]);
//! assert_eq!(params.len(), state.num_tensors());
//! ```

mod checkpoint;
mod config;
mod forward;
mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Moments};
pub use config::{ModelConfig, TaskMode};
pub use forward::{forward, forward_traced, restore, AttnTrace, PAD_MULTIPLE};
pub use state::{
    count_parameters, BlockPair, ModelState, ModelVars, PairVars, SecondBlock, SecondVars,
};

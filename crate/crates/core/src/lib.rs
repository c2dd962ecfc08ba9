//! Gaussian-process policy optimization.
//!
//! An actor-critic learner whose objective is the clipped PPO surrogate plus
//! an acquisition bonus from a Gaussian process that regresses estimated
//! returns on flattened policy parameters. A baseline mode drops the bonus
//! and reduces exactly to clipped PPO.
//!
//! Modules, bottom up:
//! - [`gp`]: kernel, posterior with input gradients, EI/UCB, bounded memory
//! - [`policy`]: tanh MLP actor/critic with analytic backprop and checkpoints
//! - [`envs`]: pendulum and point-mass environments
//! - [`rollout`]: trajectory collection, GAE, centering
//! - [`loss`]: clipped/value/bonus objective and Adam
//! - [`config`], [`trainer`]: configuration, training loop, CSV logs, comparisons

pub mod config;
pub mod envs;
pub mod error;
pub mod gp;
pub mod loss;
pub mod policy;
pub mod rollout;
pub mod trainer;

pub use config::{parse_config, Algo, TrainConfig};
pub use error::{Error, Result};
pub use gp::{GpMemory, GpObservation, GpPosterior, KernelConfig, ParamVector};
pub use loss::{Acquisition, LossConfig, SurrogateLossTerms};
pub use policy::{ActionDistribution, PolicyNet, ValueNet};
pub use trainer::{compare, train, IterationRecord, TrainOutcome};

/// RNG used everywhere randomness is consumed. Seeded streams make every
/// run reproducible.
pub type SimRng = rand_chacha::ChaCha8Rng;

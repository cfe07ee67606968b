//! GFlowNet training core for fixed-length discrete sequence construction.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic
//! piece of the engine:
//!
//! * [`env`]: the append-only sequence MDP and its builtin reward landscapes.
//! * [`policy`]: MLP forward/backward policies, state flows, `log Z`, Adam.
//! * [`objectives`]: trajectory balance, detailed balance and MaxEnt losses
//!   with analytic gradients.
//! * [`backtrack`]: reward-guided dynamic backtracking (regret gate, dynamic
//!   step schedule, rewind/refill, the three choose rules) and the fixed-step
//!   local-search baseline.
//! * [`oracle`]: exact terminal distributions by enumeration and the
//!   evaluation metrics.
//! * [`replay`], [`rng`], [`train`]: prioritized replay, counter-based RNG
//!   streams and the training loop that ties everything together.
//!
//! File formats, configuration and the CLI live in the `dbgfn` crate.

#![no_std]
// NaN must fail validation, so `!(a < b)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backtrack;
pub mod env;
mod error;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod stats;
pub mod train;

pub use error::{Error, Result};

pub use backtrack::{BacktrackConfig, ChooseRule, LsConfig, LsFilter};
pub use env::{ActionId, EnvSpec, RewardSource, State, Trajectory};
pub use objectives::{LossReport, ObjectiveKind};
pub use oracle::{ExactDistribution, MetricsRow};
pub use policy::{AdamConfig, OptimizerState, PolicyConfig, PolicyParams};
pub use replay::ReplayBuffer;
pub use train::{SearchMode, TrainConfig, Trainer};

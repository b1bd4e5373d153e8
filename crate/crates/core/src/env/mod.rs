//! Desk-scale environments: a parametric gridworld distribution, Deep Sea,
//! and a deterministic chain MDP used as a test oracle.

mod chain;
mod deepsea;
mod gridworld;

pub use chain::{chain_policy_value, ChainEnv};
pub use deepsea::{DeepSea, DeepSeaParams};
pub use gridworld::{sample_gridworld_params, Gridworld, GridworldParams, GridworldRanges};

use rand_chacha::ChaCha8Rng;

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOut {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A single-agent discrete-action environment instance.
///
/// Instances are independent values; stepping many of them in parallel shares
/// no state. Stepping after `done` without a reset is a usage error and
/// panics; vectorized rollouts auto-reset instead.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> StepOut;
    /// Largest undiscounted episodic return achievable, when known in closed
    /// form. Used to sanity-bound reported returns.
    fn max_return(&self) -> Option<f64> {
        None
    }
    fn boxed_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

//! Deterministic chain MDP with a closed-form optimum, used as a test oracle
//! for the PPO loop and advantage estimation.
//!
//! The agent starts at position 0. Action 1 advances one cell, action 0 stays
//! put. Entering the final cell pays reward 1 and ends the episode; otherwise
//! the episode times out after `4 * length` steps.

use super::{Env, StepOut};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct ChainEnv {
    length: usize,
    max_steps: usize,
    pos: usize,
    steps: usize,
    done: bool,
}

impl ChainEnv {
    pub fn new(length: usize) -> Result<Self> {
        if length < 1 {
            return Err(Error::Config("chain length must be >= 1".into()));
        }
        Ok(ChainEnv { length, max_steps: 4 * length, pos: 0, steps: 0, done: false })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Discounted return of the always-advance policy: the goal reward arrives
    /// on step `length`, discounted by `gamma^(length-1)`.
    pub fn optimal_discounted_return(&self, gamma: f64) -> f64 {
        gamma.powi(self.length as i32 - 1)
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.length];
        if self.pos < self.length {
            obs[self.pos] = 1.0;
        }
        obs
    }
}

impl Env for ChainEnv {
    fn obs_dim(&self) -> usize {
        self.length
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.pos = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> StepOut {
        assert!(!self.done, "step called on a terminal chain episode");
        assert!(action < 2, "chain action {action} out of range");
        if action == 1 {
            self.pos += 1;
        }
        self.steps += 1;
        let mut reward = 0.0;
        if self.pos == self.length {
            reward = 1.0;
            self.done = true;
        } else if self.steps >= self.max_steps {
            self.done = true;
        }
        StepOut { obs: self.observation(), reward, done: self.done }
    }

    fn max_return(&self) -> Option<f64> {
        Some(1.0)
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

/// Exhaustive policy evaluation oracle: discounted value of the start state
/// under a fixed per-state probability of advancing. Runs the finite-horizon
/// Bellman recursion directly over (position, steps-remaining).
pub fn chain_policy_value(length: usize, gamma: f64, p_advance: &[f64]) -> f64 {
    let max_steps = 4 * length;
    // value[pos] at a given number of steps taken so far, computed backwards.
    let mut value = vec![0.0; length + 1];
    for step in (0..max_steps).rev() {
        let mut next = vec![0.0; length + 1];
        for pos in 0..length {
            let p = p_advance[pos];
            let advance_reward = if pos + 1 == length { 1.0 } else { 0.0 };
            let advance_cont = if pos + 1 == length || step + 1 >= max_steps { 0.0 } else { value[pos + 1] };
            let stay_cont = if step + 1 >= max_steps { 0.0 } else { value[pos] };
            next[pos] = p * (advance_reward + gamma * advance_cont) + (1.0 - p) * gamma * stay_cont;
        }
        value = next;
    }
    value[0]
}

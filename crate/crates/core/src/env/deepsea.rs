//! Deep Sea exploration benchmark.
//!
//! An N×N grid where the agent descends one row per step. Effective `right`
//! costs a small penalty; only the policy that goes right every step reaches
//! the goal in the bottom-right corner. Each row may flip the meaning of the
//! two actions, so the solution cannot be expressed action-wise.

use super::{Env, StepOut};
use crate::rng::stream_rng;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepSeaParams {
    pub size: usize,
    /// Penalty charged for every effective-right action.
    pub move_penalty: f64,
    pub goal_reward: f64,
    /// Per-row flag; when set, the two actions swap meaning on that row.
    pub action_flip_mask: Vec<bool>,
}

impl DeepSeaParams {
    /// The standard configuration: goal reward 1, per-right penalty `0.01/N`,
    /// and a random per-row action flip drawn from the environment seed. The
    /// achievable return range is then `[-0.01, 0.99]`.
    pub fn standard(size: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, "deepsea-flip", &[]);
        let mask = (0..size).map(|_| rng.gen::<bool>()).collect();
        DeepSeaParams {
            size,
            move_penalty: 0.01 / size as f64,
            goal_reward: 1.0,
            action_flip_mask: mask,
        }
        .validated()
    }

    /// No action flips; row r's `right` is always action 1. Used by tests.
    pub fn unflipped(size: usize) -> Result<Self> {
        DeepSeaParams {
            size,
            move_penalty: 0.01 / size as f64,
            goal_reward: 1.0,
            action_flip_mask: vec![false; size],
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        if self.size < 2 {
            return Err(Error::Config(format!("deep sea size {} < 2", self.size)));
        }
        if self.action_flip_mask.len() != self.size {
            return Err(Error::Config("action_flip_mask length != size".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct DeepSea {
    params: DeepSeaParams,
    row: usize,
    col: usize,
}

impl DeepSea {
    pub fn new(params: DeepSeaParams) -> Result<Self> {
        let params = params.validated()?;
        Ok(DeepSea { params, row: 0, col: 0 })
    }

    pub fn params(&self) -> &DeepSeaParams {
        &self.params
    }

    fn observation(&self) -> Vec<f64> {
        let n = self.params.size;
        let mut obs = vec![0.0; n * n];
        if self.row < n {
            obs[self.row * n + self.col] = 1.0;
        }
        obs
    }
}

impl Env for DeepSea {
    fn obs_dim(&self) -> usize {
        self.params.size * self.params.size
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.row = 0;
        self.col = 0;
        self.observation()
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> StepOut {
        let n = self.params.size;
        assert!(self.row < n, "step called on a finished deep sea episode");
        assert!(action < 2, "deep sea action {action} out of range");
        let right = (action == 1) != self.params.action_flip_mask[self.row];
        let mut reward = 0.0;
        if right {
            reward -= self.params.move_penalty;
            if self.row == n - 1 && self.col == n - 1 {
                reward += self.params.goal_reward;
            }
            self.col = (self.col + 1).min(n - 1);
        } else {
            self.col = self.col.saturating_sub(1);
        }
        self.row += 1;
        let done = self.row == n;
        StepOut { obs: self.observation(), reward, done }
    }

    fn max_return(&self) -> Option<f64> {
        Some(self.params.goal_reward - self.params.size as f64 * self.params.move_penalty)
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

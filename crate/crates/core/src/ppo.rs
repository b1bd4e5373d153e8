//! The inner loop: vectorized PPO over a pluggable optimizer.
//!
//! One *batch* is a rollout of `n_steps` across `n_envs` environments followed
//! by `n_epochs` passes over its shuffled minibatches. The optimizer sees two
//! progress signals per update: training proportion (progress through all
//! batches) and batch proportion (progress through the epochs of one batch).

use crate::agent::{
    dormancy_fraction, dormancy_scores, global_grad_clip, loss_and_grad, policy_forward,
    tile_dormancy, ActivationRecord, AgentParams, Minibatch, PpoLossConfig,
};
use crate::env::Env;
use crate::optim::{Optimizer, StepRecord, StepSignals};
use crate::rng::stream_rng;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub n_steps: usize,
    pub n_minibatch: usize,
    pub n_epochs: usize,
    /// Total environment steps; batches = (total_steps / n_steps) / n_envs.
    pub total_steps: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub loss: PpoLossConfig,
    pub max_grad_norm: f64,
    /// Threshold for the dormant-neuron fraction metric.
    pub dormancy_tau: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            n_envs: 1024,
            n_steps: 20,
            n_minibatch: 16,
            n_epochs: 2,
            total_steps: 30_000_000,
            gamma: 0.99,
            lambda: 0.95,
            loss: PpoLossConfig::default(),
            max_grad_norm: 0.5,
            dormancy_tau: 0.1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_envs == 0 || self.n_steps == 0 || self.n_minibatch == 0 || self.n_epochs == 0 {
            return err("n_envs, n_steps, n_minibatch, and n_epochs must be positive".into());
        }
        if (self.n_envs * self.n_steps) % self.n_minibatch != 0 {
            return err(format!(
                "n_minibatch {} must divide the batch size {}",
                self.n_minibatch,
                self.n_envs * self.n_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return err("gamma and lambda must lie in [0, 1]".into());
        }
        if self.max_grad_norm <= 0.0 {
            return err("max_grad_norm must be positive".into());
        }
        if self.n_batches() == 0 {
            return err(format!(
                "total_steps {} gives zero batches at n_steps {} x n_envs {}",
                self.total_steps, self.n_steps, self.n_envs
            ));
        }
        Ok(())
    }

    pub fn n_batches(&self) -> u64 {
        (self.total_steps / self.n_steps as u64) / self.n_envs as u64
    }

    /// Optimizer updates over the whole run.
    pub fn n_updates(&self) -> u64 {
        self.n_batches() * (self.n_epochs * self.n_minibatch) as u64
    }
}

/// Progress of update `t` through all batches, in [0, 1).
pub fn training_proportion(t: u64, cfg: &PpoConfig) -> f64 {
    let per_batch = (cfg.n_epochs * cfg.n_minibatch) as u64;
    (t / per_batch) as f64 / cfg.n_batches() as f64
}

/// Progress of update `t` through the epochs of its batch, in [0, 1).
pub fn batch_proportion(t: u64, cfg: &PpoConfig) -> f64 {
    let l = cfg.n_epochs as u64;
    ((t / cfg.n_minibatch as u64) % l) as f64 / l as f64
}

/// One rollout across the vectorized environments, time-major.
pub struct Rollout {
    /// `obs[t][e]` is the observation the action at `(t, e)` was taken from.
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    /// True when the transition at `(t, e)` ended its episode.
    pub dones: Vec<Vec<bool>>,
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Critic value of the observation after the final step, per env.
    pub bootstrap: Vec<f64>,
    /// Activations captured over every forward pass of the rollout.
    pub record: ActivationRecord,
    /// Returns of episodes that finished during this rollout.
    pub completed_returns: Vec<f64>,
}

/// Mutable per-env rollout state carried across batches.
pub struct EnvState {
    pub env: Box<dyn Env>,
    pub obs: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub return_acc: f64,
}

pub fn init_env_states(proto: &dyn Env, n_envs: usize, master_seed: u64) -> Vec<EnvState> {
    (0..n_envs)
        .map(|e| {
            let mut env = proto.boxed_clone();
            let mut rng = stream_rng(master_seed, "env", &[e as u64]);
            let obs = env.reset(&mut rng);
            EnvState { env, obs, rng, return_acc: 0.0 }
        })
        .collect()
}

fn sample_action(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn merge_record(into: &mut ActivationRecord, from: &ActivationRecord) {
    for (a, b) in into.actor_hidden.iter_mut().zip(&from.actor_hidden) {
        a.data.extend_from_slice(&b.data);
    }
    for (a, b) in into.critic_hidden.iter_mut().zip(&from.critic_hidden) {
        a.data.extend_from_slice(&b.data);
    }
    into.actor_head.data.extend_from_slice(&from.actor_head.data);
    into.critic_head.data.extend_from_slice(&from.critic_head.data);
}

/// Steps every environment `n_steps` times under the current policy,
/// auto-resetting finished episodes.
pub fn collect_rollout(
    params: &AgentParams,
    states: &mut [EnvState],
    n_steps: usize,
) -> Result<Rollout> {
    let n_envs = states.len();
    let mut out = Rollout {
        obs: Vec::with_capacity(n_steps),
        actions: Vec::with_capacity(n_steps),
        rewards: Vec::with_capacity(n_steps),
        dones: Vec::with_capacity(n_steps),
        log_probs: Vec::with_capacity(n_steps),
        values: Vec::with_capacity(n_steps),
        bootstrap: Vec::new(),
        record: ActivationRecord {
            actor_hidden: Vec::new(),
            actor_head: crate::agent::LayerActs { dim: params.layout.n_actions, data: Vec::new() },
            critic_hidden: Vec::new(),
            critic_head: crate::agent::LayerActs { dim: 1, data: Vec::new() },
        },
        completed_returns: Vec::new(),
    };
    let mut record: Option<ActivationRecord> = None;

    for _ in 0..n_steps {
        let obs_batch: Vec<Vec<f64>> = states.iter().map(|s| s.obs.clone()).collect();
        let (logits, values, rec) = policy_forward(params, &obs_batch)?;
        match &mut record {
            Some(r) => merge_record(r, &rec),
            None => record = Some(rec),
        }

        let mut actions = Vec::with_capacity(n_envs);
        let mut rewards = Vec::with_capacity(n_envs);
        let mut dones = Vec::with_capacity(n_envs);
        let mut lps = Vec::with_capacity(n_envs);
        for (e, state) in states.iter_mut().enumerate() {
            let lp = log_softmax(&logits[e]);
            let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            let action = sample_action(&probs, &mut state.rng);
            let step = state.env.step(action, &mut state.rng);
            state.return_acc += step.reward;
            if step.done {
                out.completed_returns.push(state.return_acc);
                state.return_acc = 0.0;
                state.obs = state.env.reset(&mut state.rng);
            } else {
                state.obs = step.obs;
            }
            actions.push(action);
            rewards.push(step.reward);
            dones.push(step.done);
            lps.push(lp[action]);
        }
        out.obs.push(obs_batch);
        out.actions.push(actions);
        out.rewards.push(rewards);
        out.dones.push(dones);
        out.log_probs.push(lps);
        out.values.push(values);
    }

    let final_obs: Vec<Vec<f64>> = states.iter().map(|s| s.obs.clone()).collect();
    let (_, bootstrap, _) = policy_forward(params, &final_obs)?;
    out.bootstrap = bootstrap;
    out.record = record.expect("n_steps > 0");
    Ok(out)
}

/// Generalized advantage estimation over one env's trajectory slice.
///
/// `delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t` and
/// `adv_t = delta_t + gamma * lambda * (1 - done_t) * adv_{t+1}`;
/// value targets are `adv_t + v_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * mask - values[t];
        next_adv = delta + gamma * lambda * mask * next_adv;
        adv[t] = next_adv;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Per-update metrics row, in the order the train CSV is written.
#[derive(Debug, Clone, Copy)]
pub struct UpdateRow {
    pub update_index: u64,
    pub tp: f64,
    pub bp: f64,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub dormancy_actor: f64,
    pub dormancy_critic: f64,
    pub update_rms: f64,
    pub noise_rms: f64,
}

/// Everything recorded about one optimizer update when tracing is on.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub record: StepRecord,
    /// The clipped gradient handed to the optimizer.
    pub grad: Vec<f64>,
    pub params_before: Vec<f64>,
}

pub struct TrainResult {
    pub rows: Vec<UpdateRow>,
    pub trace: Vec<TraceStep>,
    /// Mean return of episodes finishing in the final batch's rollout; falls
    /// back to the latest batch that completed any episode.
    pub final_mean_return: f64,
    pub n_updates: u64,
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// Runs the full PPO loop, mutating `params` in place.
pub fn train(
    cfg: &PpoConfig,
    proto: &dyn Env,
    params: &mut AgentParams,
    opt: &mut dyn Optimizer,
    master_seed: u64,
    record_trace: bool,
) -> Result<TrainResult> {
    cfg.validate()?;
    if params.layout.obs_dim != proto.obs_dim() || params.layout.n_actions != proto.n_actions() {
        return Err(Error::Config(format!(
            "agent ({}, {}) does not match env ({}, {})",
            params.layout.obs_dim,
            params.layout.n_actions,
            proto.obs_dim(),
            proto.n_actions()
        )));
    }

    let mut states = init_env_states(proto, cfg.n_envs, master_seed);
    let mut shuffle_rng = stream_rng(master_seed, "shuffle", &[]);
    let mut noise_rng = stream_rng(master_seed, "opt-noise", &[]);
    let layer_prop = params.layout.layer_proportion();
    let batch_size = cfg.n_envs * cfg.n_steps;
    let mb_size = batch_size / cfg.n_minibatch;

    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut t: u64 = 0;
    let mut last_mean_return = 0.0;

    for _batch in 0..cfg.n_batches() {
        let rollout = collect_rollout(params, &mut states, cfg.n_steps)?;

        // Flatten (t, e) into samples with per-env GAE.
        let mut advantages = vec![0.0; batch_size];
        let mut targets = vec![0.0; batch_size];
        for e in 0..cfg.n_envs {
            let rewards: Vec<f64> = rollout.rewards.iter().map(|r| r[e]).collect();
            let values: Vec<f64> = rollout.values.iter().map(|v| v[e]).collect();
            let dones: Vec<bool> = rollout.dones.iter().map(|d| d[e]).collect();
            let (adv, tgt) =
                compute_gae(&rewards, &values, &dones, rollout.bootstrap[e], cfg.gamma, cfg.lambda);
            for step in 0..cfg.n_steps {
                advantages[step * cfg.n_envs + e] = adv[step];
                targets[step * cfg.n_envs + e] = tgt[step];
            }
        }

        let scores = dormancy_scores(&rollout.record);
        let dormancy = tile_dormancy(&params.layout, &scores);
        let (dorm_actor, dorm_critic) = dormancy_fraction(&scores, &params.layout, cfg.dormancy_tau);
        if !rollout.completed_returns.is_empty() {
            last_mean_return = rollout.completed_returns.iter().sum::<f64>()
                / rollout.completed_returns.len() as f64;
        }

        let mut indices: Vec<usize> = (0..batch_size).collect();
        for _epoch in 0..cfg.n_epochs {
            indices.shuffle(&mut shuffle_rng);
            for mb in 0..cfg.n_minibatch {
                let ix = &indices[mb * mb_size..(mb + 1) * mb_size];
                let batch = Minibatch {
                    obs: ix.iter().map(|&i| rollout.obs[i / cfg.n_envs][i % cfg.n_envs].clone()).collect(),
                    actions: ix.iter().map(|&i| rollout.actions[i / cfg.n_envs][i % cfg.n_envs]).collect(),
                    old_log_probs: ix.iter().map(|&i| rollout.log_probs[i / cfg.n_envs][i % cfg.n_envs]).collect(),
                    advantages: ix.iter().map(|&i| advantages[i]).collect(),
                    value_targets: ix.iter().map(|&i| targets[i]).collect(),
                    old_values: ix.iter().map(|&i| rollout.values[i / cfg.n_envs][i % cfg.n_envs]).collect(),
                };
                let (_loss, mut grad, aux) = loss_and_grad(params, &batch, &cfg.loss)?;
                global_grad_clip(&mut grad, cfg.max_grad_norm);

                let signals = StepSignals {
                    tp: training_proportion(t, cfg),
                    bp: batch_proportion(t, cfg),
                    dormancy: &dormancy,
                    layer_prop: &layer_prop,
                };
                let params_before = if record_trace { params.flat.clone() } else { Vec::new() };
                let rec = opt.step(params, &grad, &signals, &mut noise_rng)?;

                let noise_rms = rec
                    .noise_weight
                    .as_deref()
                    .map(rms)
                    .unwrap_or(0.0);
                rows.push(UpdateRow {
                    update_index: t,
                    tp: signals.tp,
                    bp: signals.bp,
                    mean_return: last_mean_return,
                    policy_loss: aux.policy_loss,
                    value_loss: aux.value_loss,
                    entropy: aux.entropy,
                    dormancy_actor: dorm_actor,
                    dormancy_critic: dorm_critic,
                    update_rms: rms(&rec.update),
                    noise_rms,
                });
                if record_trace {
                    trace.push(TraceStep { record: rec, grad, params_before });
                }
                t += 1;
            }
        }
    }

    Ok(TrainResult { rows, trace, final_mean_return: last_mean_return, n_updates: t })
}

/// Rolls out `n_episodes` full episodes under the (stochastic) policy and
/// returns their undiscounted returns.
pub fn evaluate(
    params: &AgentParams,
    proto: &dyn Env,
    n_episodes: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let mut env = proto.boxed_clone();
        let mut rng = stream_rng(master_seed, "eval", &[ep as u64]);
        let mut obs = env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let (logits, _, _) = policy_forward(params, std::slice::from_ref(&obs))?;
            let lp = log_softmax(&logits[0]);
            let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            let action = sample_action(&probs, &mut rng);
            let step = env.step(action, &mut rng);
            total += step.reward;
            if step.done {
                break;
            }
            obs = step.obs;
        }
        returns.push(total);
    }
    Ok(returns)
}

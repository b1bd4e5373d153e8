//! Forward pass, PPO loss, and analytic reverse-mode gradients for the
//! fixed actor-critic architecture.
//!
//! The backward pass is written by hand for the affine → activation chain;
//! the finite-difference oracle in the tests guards it.

use super::{Activation, AgentParams, Network, ParamKind, Segment};
use crate::{Error, Result};

/// Post-activation values for one layer over a batch, batch-major.
#[derive(Debug, Clone)]
pub struct LayerActs {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl LayerActs {
    pub fn batch(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }
}

/// Activations captured during a forward pass, per network: the hidden layers
/// and the raw head outputs.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    pub actor_hidden: Vec<LayerActs>,
    pub actor_head: LayerActs,
    pub critic_hidden: Vec<LayerActs>,
    pub critic_head: LayerActs,
}

#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    pub old_values: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoLossConfig {
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub clip_value_loss: bool,
    pub normalize_advantage: bool,
}

impl Default for PpoLossConfig {
    fn default() -> Self {
        PpoLossConfig {
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            clip_value_loss: true,
            normalize_advantage: true,
        }
    }
}

/// Averaged per-minibatch diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossAux {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Ordered (weight, bias) segments for one network.
fn layer_segments(params: &AgentParams, network: Network) -> Vec<(Segment, Segment)> {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for seg in params.layout.segments() {
        if seg.network == network {
            match seg.kind {
                ParamKind::Weight => weights.push(*seg),
                ParamKind::Bias => biases.push(*seg),
            }
        }
    }
    weights.into_iter().zip(biases).collect()
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = b.to_vec();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] += row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
    }
    out
}

/// Runs one network, returning per-layer post-activations and the raw head
/// output.
fn forward_one(
    params: &AgentParams,
    layers: &[(Segment, Segment)],
    activation: Activation,
    x: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_layers = layers.len();
    let mut hiddens = Vec::with_capacity(n_layers - 1);
    let mut cur = x.to_vec();
    for (l, (wseg, bseg)) in layers.iter().enumerate() {
        let z = affine(params.segment(wseg), params.segment(bseg), &cur, wseg.rows, wseg.cols);
        if l + 1 == n_layers {
            return (hiddens, z);
        }
        cur = z.into_iter().map(|v| activation.apply(v)).collect();
        hiddens.push(cur.clone());
    }
    unreachable!("network has no layers")
}

/// Backpropagates `d_out` through one network for one sample, accumulating
/// parameter gradients into `grad`.
fn backward_one(
    params: &AgentParams,
    layers: &[(Segment, Segment)],
    activation: Activation,
    x: &[f64],
    hiddens: &[Vec<f64>],
    d_out: &[f64],
    grad: &mut [f64],
) {
    let mut delta = d_out.to_vec();
    for l in (0..layers.len()).rev() {
        let (wseg, bseg) = &layers[l];
        let input: &[f64] = if l == 0 { x } else { &hiddens[l - 1] };
        let w = params.segment(wseg);
        {
            let goff = wseg.offset;
            for r in 0..wseg.rows {
                let d = delta[r];
                if d != 0.0 {
                    let row = &mut grad[goff + r * wseg.cols..goff + (r + 1) * wseg.cols];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
        }
        for r in 0..bseg.rows {
            grad[bseg.offset + r] += delta[r];
        }
        if l > 0 {
            let mut d_in = vec![0.0; wseg.cols];
            for r in 0..wseg.rows {
                let d = delta[r];
                if d != 0.0 {
                    let row = &w[r * wseg.cols..(r + 1) * wseg.cols];
                    for (di, wi) in d_in.iter_mut().zip(row) {
                        *di += d * wi;
                    }
                }
            }
            let h = &hiddens[l - 1];
            delta = d_in
                .into_iter()
                .zip(h)
                .map(|(d, &hv)| d * activation.derivative_from_output(hv))
                .collect();
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Batched forward pass through both networks, capturing activations.
pub fn policy_forward(
    params: &AgentParams,
    obs_batch: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, ActivationRecord)> {
    let layout = &params.layout;
    let actor_layers = layer_segments(params, Network::Actor);
    let critic_layers = layer_segments(params, Network::Critic);
    let n_hidden = layout.n_hidden;

    let mut record = ActivationRecord {
        actor_hidden: (0..n_hidden).map(|_| LayerActs { dim: layout.width, data: Vec::new() }).collect(),
        actor_head: LayerActs { dim: layout.n_actions, data: Vec::new() },
        critic_hidden: (0..n_hidden).map(|_| LayerActs { dim: layout.width, data: Vec::new() }).collect(),
        critic_head: LayerActs { dim: 1, data: Vec::new() },
    };
    let mut logits_batch = Vec::with_capacity(obs_batch.len());
    let mut values = Vec::with_capacity(obs_batch.len());

    for obs in obs_batch {
        if obs.len() != layout.obs_dim {
            return Err(Error::Usage(format!("observation length {} != obs_dim {}", obs.len(), layout.obs_dim)));
        }
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite observation".into()));
        }
        let (ah, logits) = forward_one(params, &actor_layers, layout.activation, obs);
        let (ch, value) = forward_one(params, &critic_layers, layout.activation, obs);
        for (l, h) in ah.iter().enumerate() {
            record.actor_hidden[l].data.extend_from_slice(h);
        }
        for (l, h) in ch.iter().enumerate() {
            record.critic_hidden[l].data.extend_from_slice(h);
        }
        record.actor_head.data.extend_from_slice(&logits);
        record.critic_head.data.push(value[0]);
        logits_batch.push(logits);
        values.push(value[0]);
    }
    Ok((logits_batch, values, record))
}

/// PPO loss `−L^CLIP + c1·L^VF − c2·S[π]` and its exact gradient with respect
/// to the flat parameter vector.
pub fn loss_and_grad(
    params: &AgentParams,
    batch: &Minibatch,
    cfg: &PpoLossConfig,
) -> Result<(f64, Vec<f64>, LossAux)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Usage("empty minibatch".into()));
    }
    let layout = &params.layout;
    let actor_layers = layer_segments(params, Network::Actor);
    let critic_layers = layer_segments(params, Network::Critic);

    let advantages: Vec<f64> = if cfg.normalize_advantage {
        let mean = batch.advantages.iter().sum::<f64>() / n as f64;
        let var = batch.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        batch.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
    } else {
        batch.advantages.clone()
    };

    let mut grad = vec![0.0; layout.total()];
    let mut loss = 0.0;
    let mut aux = LossAux::default();
    let inv_n = 1.0 / n as f64;

    for s in 0..n {
        let obs = &batch.obs[s];
        let action = batch.actions[s];
        if action >= layout.n_actions {
            return Err(Error::Usage(format!("action {action} out of range")));
        }
        let adv = advantages[s];
        let (hiddens_a, logits) = forward_one(params, &actor_layers, layout.activation, obs);
        let (hiddens_c, value_out) = forward_one(params, &critic_layers, layout.activation, obs);
        let value = value_out[0];
        let lp = log_softmax(&logits);
        let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();

        // Clipped policy objective.
        let ratio = (lp[action] - batch.old_log_probs[s]).exp();
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let surr1 = ratio * adv;
        let surr2 = clipped_ratio * adv;
        let pg_obj = surr1.min(surr2);
        let d_lp_a = if surr1 <= surr2 { -ratio * adv } else { 0.0 };
        if (ratio - 1.0).abs() > cfg.clip_eps {
            aux.clip_fraction += inv_n;
        }

        // Entropy bonus.
        let entropy: f64 = -probs.iter().zip(&lp).map(|(p, l)| p * l).sum::<f64>();

        // Value loss, optionally clipped against the old value estimate.
        let target = batch.value_targets[s];
        let (vf, d_value) = if cfg.clip_value_loss {
            let old_v = batch.old_values[s];
            let dv = (value - old_v).clamp(-cfg.clip_eps, cfg.clip_eps);
            let v_clipped = old_v + dv;
            let l1 = (value - target) * (value - target);
            let l2 = (v_clipped - target) * (v_clipped - target);
            if l1 >= l2 {
                (0.5 * l1, value - target)
            } else {
                let pass_through = (value - old_v).abs() < cfg.clip_eps;
                (0.5 * l2, if pass_through { v_clipped - target } else { 0.0 })
            }
        } else {
            let l1 = (value - target) * (value - target);
            (0.5 * l1, value - target)
        };

        loss += inv_n * (-pg_obj + cfg.vf_coef * vf - cfg.ent_coef * entropy);
        aux.policy_loss -= inv_n * pg_obj;
        aux.value_loss += inv_n * vf;
        aux.entropy += inv_n * entropy;

        // d loss / d logits: policy term routes through logp[action], the
        // entropy term through every logit.
        let mut d_logits = vec![0.0; layout.n_actions];
        for j in 0..layout.n_actions {
            let onehot = if j == action { 1.0 } else { 0.0 };
            let d_policy = d_lp_a * (onehot - probs[j]);
            let d_entropy = -probs[j] * (lp[j] + entropy);
            d_logits[j] = inv_n * (d_policy - cfg.ent_coef * d_entropy);
        }
        backward_one(params, &actor_layers, layout.activation, obs, &hiddens_a, &d_logits, &mut grad);

        let d_val = [inv_n * cfg.vf_coef * d_value];
        backward_one(params, &critic_layers, layout.activation, obs, &hiddens_c, &d_val, &mut grad);
    }

    if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grad, aux))
}

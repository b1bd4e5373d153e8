//! The learned optimizer: a per-parameter GRU followed by a LayerNorm MLP
//! head, driven by a 19-channel feature pipeline and producing a three-stage
//! update (exponential-scaled, actor-noise, zero-meaned).

use super::{Optimizer, StepRecord, StepSignals};
use crate::agent::{AgentLayout, AgentParams};
use crate::rng::gaussian;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Momentum timescales fed to the optimizer.
pub const MOMENTUM_BETAS: [f64; 6] = [0.1, 0.5, 0.9, 0.99, 0.999, 0.9999];

/// Full feature width: sign/log gradient, six sign/log momenta, parameter
/// value, the two training proportions, dormancy, and layer proportion.
pub const FEATURES_FULL: usize = 2 + 2 * MOMENTUM_BETAS.len() + 5;
/// Gradient and momentum channels only (the "no features" baseline).
pub const FEATURES_NO_EXTRAS: usize = 2 + 2 * MOMENTUM_BETAS.len();

const LOG_EPS: f64 = 1e-8;
const LN_EPS: f64 = 1e-5;

/// Network sizes for one optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpenArch {
    pub input_dim: usize,
    pub gru_hidden: usize,
    pub mlp_width: usize,
    pub n_outputs: usize,
}

impl OpenArch {
    /// GRU [19,8], FC [8,16], LN, FC [16,16], LN, FC [16,3].
    pub fn standard() -> Self {
        OpenArch { input_dim: FEATURES_FULL, gru_hidden: 8, mlp_width: 16, n_outputs: 3 }
    }

    /// Doubled sizes used for multi-task training.
    pub fn multi_task() -> Self {
        OpenArch { input_dim: FEATURES_FULL, gru_hidden: 16, mlp_width: 32, n_outputs: 3 }
    }

    /// Gradient/momentum-only variant: 14 inputs, no stochasticity output.
    pub fn no_features() -> Self {
        OpenArch { input_dim: FEATURES_NO_EXTRAS, gru_hidden: 8, mlp_width: 16, n_outputs: 2 }
    }
}

/// Offsets into one optimizer's flat meta-parameter vector.
///
/// GRU gate order is (update z, reset r, candidate n), each as input weights,
/// hidden weights, bias. The head is FC → LayerNorm(scale, offset) → ReLU →
/// FC → LayerNorm → ReLU → FC.
#[derive(Debug, Clone, Copy)]
pub struct MetaLayout {
    pub arch: OpenArch,
    gru_w: [usize; 3],
    gru_u: [usize; 3],
    gru_b: [usize; 3],
    fc1_w: usize,
    fc1_b: usize,
    ln1_scale: usize,
    ln1_offset: usize,
    fc2_w: usize,
    fc2_b: usize,
    ln2_scale: usize,
    ln2_offset: usize,
    fc3_w: usize,
    fc3_b: usize,
    total: usize,
}

impl MetaLayout {
    pub fn new(arch: OpenArch) -> Self {
        let (i, h, w, o) = (arch.input_dim, arch.gru_hidden, arch.mlp_width, arch.n_outputs);
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let gru_w = [take(h * i), take(h * i), take(h * i)];
        let gru_u = [take(h * h), take(h * h), take(h * h)];
        let gru_b = [take(h), take(h), take(h)];
        let fc1_w = take(w * h);
        let fc1_b = take(w);
        let ln1_scale = take(w);
        let ln1_offset = take(w);
        let fc2_w = take(w * w);
        let fc2_b = take(w);
        let ln2_scale = take(w);
        let ln2_offset = take(w);
        let fc3_w = take(o * w);
        let fc3_b = take(o);
        MetaLayout {
            arch,
            gru_w,
            gru_u,
            gru_b,
            fc1_w,
            fc1_b,
            ln1_scale,
            ln1_offset,
            fc2_w,
            fc2_b,
            ln2_scale,
            ln2_offset,
            fc3_w,
            fc3_b,
            total: cursor,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Initial meta-parameters for one optimizer network: weights and biases
/// uniform in ±1/√fan_in, LayerNorm scales 1 and offsets 0.
pub fn meta_init(arch: OpenArch, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let layout = MetaLayout::new(arch);
    let mut meta = vec![0.0; layout.total()];
    let mut fill = |meta: &mut [f64], at: usize, n: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut meta[at..at + n] {
            *v = rng.gen_range(-bound..bound);
        }
    };
    let (i, h, w, o) = (arch.input_dim, arch.gru_hidden, arch.mlp_width, arch.n_outputs);
    for g in 0..3 {
        fill(&mut meta, layout.gru_w[g], h * i, i);
        fill(&mut meta, layout.gru_u[g], h * h, h);
        fill(&mut meta, layout.gru_b[g], h, i);
    }
    fill(&mut meta, layout.fc1_w, w * h, h);
    fill(&mut meta, layout.fc1_b, w, h);
    fill(&mut meta, layout.fc2_w, w * w, w);
    fill(&mut meta, layout.fc2_b, w, w);
    fill(&mut meta, layout.fc3_w, o * w, w);
    fill(&mut meta, layout.fc3_b, o, w);
    meta[layout.ln1_scale..layout.ln1_scale + w].fill(1.0);
    meta[layout.ln2_scale..layout.ln2_scale + w].fill(1.0);
    meta
}

/// Which inputs the optimizer conditions on; disabled entries are zeroed in
/// the 19-wide feature vector. `stochasticity` gates the noise output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureMask {
    pub training_proportion: bool,
    pub batch_proportion: bool,
    pub dormancy: bool,
    pub layer_proportion: bool,
    pub param_value: bool,
    pub stochasticity: bool,
    pub momentum: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask {
            training_proportion: true,
            batch_proportion: true,
            dormancy: true,
            layer_proportion: true,
            param_value: true,
            stochasticity: true,
            momentum: true,
        }
    }
}

impl FeatureMask {
    /// Named ablations accepted by the `ablate` command.
    pub fn by_name(name: &str) -> Result<FeatureMask> {
        let mut mask = FeatureMask::default();
        match name {
            "none" => {}
            "no_tp" => mask.training_proportion = false,
            "no_bp" => mask.batch_proportion = false,
            "no_dormancy" => mask.dormancy = false,
            "no_layer" => mask.layer_proportion = false,
            "no_stochasticity" => mask.stochasticity = false,
            "no_param_value" => mask.param_value = false,
            "no_momentum" => mask.momentum = false,
            other => return Err(Error::Config(format!("unknown feature mask '{other}'"))),
        }
        Ok(mask)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU cell evaluation: update gate z, reset gate r, tanh candidate, and
/// `h' = (1−z)⊙h + z⊙candidate`.
pub fn gru_cell(meta: &[f64], layout: &MetaLayout, input: &[f64], h: &[f64]) -> Vec<f64> {
    let (i_dim, h_dim) = (layout.arch.input_dim, layout.arch.gru_hidden);
    debug_assert_eq!(input.len(), i_dim);
    debug_assert_eq!(h.len(), h_dim);
    let gate = |g: usize, x_extra: &[f64]| -> Vec<f64> {
        let w = &meta[layout.gru_w[g]..layout.gru_w[g] + h_dim * i_dim];
        let u = &meta[layout.gru_u[g]..layout.gru_u[g] + h_dim * h_dim];
        let b = &meta[layout.gru_b[g]..layout.gru_b[g] + h_dim];
        (0..h_dim)
            .map(|row| {
                let wx: f64 = w[row * i_dim..(row + 1) * i_dim].iter().zip(input).map(|(a, b)| a * b).sum();
                let uh: f64 = u[row * h_dim..(row + 1) * h_dim].iter().zip(x_extra).map(|(a, b)| a * b).sum();
                wx + uh + b[row]
            })
            .collect()
    };
    let z: Vec<f64> = gate(0, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(1, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(ri, hi)| ri * hi).collect();
    let cand: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
    (0..h_dim).map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k]).collect()
}

fn layer_norm(x: &mut [f64], scale: &[f64], offset: &[f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for ((v, s), o) in x.iter_mut().zip(scale).zip(offset) {
        *v = (*v - mean) * inv * s + o;
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// The MLP head over the GRU output: FC → LayerNorm → ReLU, twice, then the
/// final FC producing (m, e, δ), or (m, e) for the two-output variant.
pub fn mlp_head(meta: &[f64], layout: &MetaLayout, gru_out: &[f64]) -> Vec<f64> {
    let (h, w, o) = (layout.arch.gru_hidden, layout.arch.mlp_width, layout.arch.n_outputs);
    let mut x = affine(&meta[layout.fc1_w..layout.fc1_w + w * h], &meta[layout.fc1_b..layout.fc1_b + w], gru_out, w, h);
    layer_norm(&mut x, &meta[layout.ln1_scale..layout.ln1_scale + w], &meta[layout.ln1_offset..layout.ln1_offset + w]);
    for v in &mut x {
        *v = v.max(0.0);
    }
    let mut x = affine(&meta[layout.fc2_w..layout.fc2_w + w * w], &meta[layout.fc2_b..layout.fc2_b + w], &x, w, w);
    layer_norm(&mut x, &meta[layout.ln2_scale..layout.ln2_scale + w], &meta[layout.ln2_offset..layout.ln2_offset + w]);
    for v in &mut x {
        *v = v.max(0.0);
    }
    affine(&meta[layout.fc3_w..layout.fc3_w + o * w], &meta[layout.fc3_b..layout.fc3_b + o], &x, o, w)
}

/// Scales each tensor (one layer's weight matrix or bias vector) to unit
/// second moment, in place. Zero tensors are left untouched.
fn normalize_per_tensor(values: &mut [f64], layout: &AgentLayout) {
    for seg in layout.segments() {
        let slice = &mut values[seg.range()];
        let sm = slice.iter().map(|v| v * v).sum::<f64>() / slice.len() as f64;
        if sm > 0.0 {
            let inv = 1.0 / sm.sqrt();
            for v in slice.iter_mut() {
                *v *= inv;
            }
        }
    }
}

/// Per-parameter input features for one update step. Channels are ordered
/// sign/log gradient, sign/log momentum per β, parameter value, TP, BP,
/// dormancy, layer proportion; masked channels are zeroed. The gradient,
/// momentum, and parameter channels are normalized per tensor before the
/// sign/log transform.
pub fn build_features(
    grad: &[f64],
    momenta: &[Vec<f64>],
    params: &AgentParams,
    signals: &StepSignals,
    mask: &FeatureMask,
    width: usize,
) -> Vec<Vec<f64>> {
    let n = grad.len();
    let layout = &params.layout;
    let mut g = grad.to_vec();
    normalize_per_tensor(&mut g, layout);
    let mut ms: Vec<Vec<f64>> = momenta.to_vec();
    for m in &mut ms {
        normalize_per_tensor(m, layout);
    }
    let mut p = params.flat.clone();
    normalize_per_tensor(&mut p, layout);

    let sign_log = |x: f64| (x.signum() * f64::from(u8::from(x != 0.0)), (x.abs() + LOG_EPS).ln());

    (0..n)
        .map(|i| {
            let mut f = Vec::with_capacity(width);
            let (s, l) = sign_log(g[i]);
            f.push(s);
            f.push(l);
            for m in &ms {
                let (s, l) = sign_log(m[i]);
                if mask.momentum {
                    f.push(s);
                    f.push(l);
                } else {
                    f.push(0.0);
                    f.push(0.0);
                }
            }
            if width == FEATURES_FULL {
                f.push(if mask.param_value { p[i] } else { 0.0 });
                f.push(if mask.training_proportion { signals.tp } else { 0.0 });
                f.push(if mask.batch_proportion { signals.bp } else { 0.0 });
                f.push(if mask.dormancy { signals.dormancy[i] } else { 0.0 });
                f.push(if mask.layer_proportion { signals.layer_prop[i] } else { 0.0 });
            }
            debug_assert_eq!(f.len(), width);
            f
        })
        .collect()
}

/// The learned optimizer over one agent. Shared mode runs one network over
/// every parameter and zero-means the update across the whole agent; the
/// separated variant runs independent actor and critic networks and
/// zero-means per network.
pub struct OpenOptimizer {
    meta_layout: MetaLayout,
    /// One meta vector (shared) or actor followed by critic (separated).
    meta: Vec<f64>,
    mask: FeatureMask,
    separated: bool,
    alpha: (f64, f64, f64),
    actor_mask: Vec<bool>,
    hidden: Vec<f64>,
    momenta: Vec<Vec<f64>>,
    step: u64,
}

impl OpenOptimizer {
    pub fn new(
        meta: Vec<f64>,
        arch: OpenArch,
        mask: FeatureMask,
        separated: bool,
        agent_layout: &AgentLayout,
    ) -> Result<Self> {
        let meta_layout = MetaLayout::new(arch);
        let expected = meta_layout.total() * if separated { 2 } else { 1 };
        if meta.len() != expected {
            return Err(Error::Config(format!(
                "meta vector length {} != expected {expected}",
                meta.len()
            )));
        }
        if arch.n_outputs != 2 && arch.n_outputs != 3 {
            return Err(Error::Config(format!("unsupported head output count {}", arch.n_outputs)));
        }
        let n = agent_layout.total();
        Ok(OpenOptimizer {
            meta_layout,
            meta,
            mask,
            separated,
            alpha: (0.001, 0.001, 0.001),
            actor_mask: agent_layout.actor_mask(),
            hidden: vec![0.0; n * arch.gru_hidden],
            momenta: vec![vec![0.0; n]; MOMENTUM_BETAS.len()],
            step: 0,
        })
    }

    pub fn n_params_meta(arch: OpenArch, separated: bool) -> usize {
        MetaLayout::new(arch).total() * if separated { 2 } else { 1 }
    }

    /// EMA accumulators `m ← β·m + (1−β)·g` for every timescale.
    fn update_momenta(&mut self, grad: &[f64]) {
        for (beta, m) in MOMENTUM_BETAS.iter().zip(&mut self.momenta) {
            for (mi, gi) in m.iter_mut().zip(grad) {
                *mi = beta * *mi + (1.0 - beta) * gi;
            }
        }
    }
}

impl Optimizer for OpenOptimizer {
    fn step(
        &mut self,
        params: &mut AgentParams,
        grad: &[f64],
        signals: &StepSignals,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepRecord> {
        let n = params.flat.len();
        if grad.len() != n || signals.dormancy.len() != n || signals.layer_prop.len() != n {
            return Err(Error::Usage("length mismatch in optimizer step".into()));
        }
        self.step += 1;
        self.update_momenta(grad);
        let width = self.meta_layout.arch.input_dim;
        let features = build_features(grad, &self.momenta, params, signals, &self.mask, width);

        let gru_hidden = self.meta_layout.arch.gru_hidden;
        let use_noise = self.mask.stochasticity && self.meta_layout.arch.n_outputs == 3;
        let mut raw = vec![0.0; n];
        let mut noise_weight = vec![0.0; n];
        let mut noise = vec![0.0; n];
        for i in 0..n {
            let actor = self.actor_mask[i];
            let meta = if self.separated && !actor {
                let per = self.meta_layout.total();
                &self.meta[per..]
            } else {
                &self.meta[..self.meta_layout.total()]
            };
            let h = &self.hidden[i * gru_hidden..(i + 1) * gru_hidden];
            let h_next = gru_cell(meta, &self.meta_layout, &features[i], h);
            let out = mlp_head(meta, &self.meta_layout, &h_next);
            self.hidden[i * gru_hidden..(i + 1) * gru_hidden].copy_from_slice(&h_next);

            let (m_out, e_out) = (out[0], out[1]);
            let delta = if self.meta_layout.arch.n_outputs == 3 { out[2] } else { 0.0 };
            let mut u = self.alpha.0 * m_out * (self.alpha.1 * e_out).exp();
            // Noise is masked to zero on the critic so its updates stay
            // deterministic.
            let eps = if actor && use_noise { gaussian(rng) } else { 0.0 };
            if actor && use_noise {
                u += self.alpha.2 * delta * eps;
            }
            raw[i] = u;
            noise_weight[i] = if actor { delta } else { 0.0 };
            noise[i] = eps;
        }

        let mut update = raw.clone();
        if self.separated {
            for actor_side in [true, false] {
                let idx: Vec<usize> = (0..n).filter(|&i| self.actor_mask[i] == actor_side).collect();
                let mean = idx.iter().map(|&i| raw[i]).sum::<f64>() / idx.len() as f64;
                for &i in &idx {
                    update[i] = raw[i] - mean;
                }
            }
        } else {
            let mean = raw.iter().sum::<f64>() / n as f64;
            for u in &mut update {
                *u -= mean;
            }
        }

        if !update.iter().all(|u| u.is_finite()) {
            return Err(Error::Numeric("non-finite optimizer update".into()));
        }
        for (p, u) in params.flat.iter_mut().zip(&update) {
            *p -= u;
        }
        params.check_finite()?;
        Ok(StepRecord {
            update,
            raw_update: raw,
            noise_weight: Some(noise_weight),
            noise: Some(noise),
        })
    }

    fn is_stochastic(&self) -> bool {
        self.mask.stochasticity && self.meta_layout.arch.n_outputs == 3
    }
}

//! Fixed-architecture actor-critic networks over a flat parameter vector.
//!
//! The actor and critic are separate MLPs packed into one `Vec<f64>` with a
//! segment table mapping flat-index ranges back to (network, layer, kind).
//! Keeping everything flat lets optimizers treat the agent as a plain vector
//! while still supporting per-layer and actor-only behavior.

mod dormancy;
mod net;

pub use dormancy::{dormancy_fraction, dormancy_scores, tile_dormancy, DormancyScores};
pub use net::{loss_and_grad, policy_forward, ActivationRecord, LayerActs, LossAux, Minibatch, PpoLossConfig};

use crate::rng::gaussian;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    pub fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Network {
    Actor,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One contiguous range of the flat vector: a weight matrix (`rows` outputs ×
/// `cols` inputs, row-major) or a bias vector (`rows` outputs, `cols` = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub network: Network,
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentLayout {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub width: usize,
    pub n_hidden: usize,
    pub activation: Activation,
    segments: Vec<Segment>,
    total: usize,
}

impl AgentLayout {
    pub fn new(obs_dim: usize, n_actions: usize, width: usize, n_hidden: usize, activation: Activation) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (network, head_dim) in [(Network::Actor, n_actions), (Network::Critic, 1)] {
            for (layer, (in_dim, out_dim)) in layer_dims(obs_dim, width, n_hidden, head_dim).enumerate() {
                segments.push(Segment { network, layer, kind: ParamKind::Weight, offset, rows: out_dim, cols: in_dim });
                offset += out_dim * in_dim;
                segments.push(Segment { network, layer, kind: ParamKind::Bias, offset, rows: out_dim, cols: 1 });
                offset += out_dim;
            }
        }
        AgentLayout { obs_dim, n_actions, width, n_hidden, activation, segments, total: offset }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Affine layers per network, including the head.
    pub fn n_layers(&self) -> usize {
        self.n_hidden + 1
    }

    /// True at every flat index owned by the actor.
    pub fn actor_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for seg in &self.segments {
            if seg.network == Network::Actor {
                mask[seg.range()].fill(true);
            }
        }
        mask
    }

    /// Per-parameter relative layer position `h/H`, with the input layer at
    /// `1/H` and the head at `1`. Biases share their layer's value.
    pub fn layer_proportion(&self) -> Vec<f64> {
        let total_layers = self.n_layers() as f64;
        let mut out = vec![0.0; self.total];
        for seg in &self.segments {
            out[seg.range()].fill((seg.layer + 1) as f64 / total_layers);
        }
        out
    }
}

fn layer_dims(obs_dim: usize, width: usize, n_hidden: usize, head_dim: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_hidden + 1).map(move |l| {
        let in_dim = if l == 0 { obs_dim } else { width };
        let out_dim = if l == n_hidden { head_dim } else { width };
        (in_dim, out_dim)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub flat: Vec<f64>,
    pub layout: AgentLayout,
}

impl AgentParams {
    pub fn zeros(layout: AgentLayout) -> Self {
        AgentParams { flat: vec![0.0; layout.total()], layout }
    }

    pub fn segment(&self, seg: &Segment) -> &[f64] {
        &self.flat[seg.range()]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.flat.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("agent parameters contain non-finite values".into()))
        }
    }
}

/// Orthogonal initialization: gain √2 for hidden layers, 0.01 for the policy
/// head, 1.0 for the value head. Biases start at zero.
pub fn init_agent(layout: &AgentLayout, rng: &mut ChaCha8Rng) -> AgentParams {
    let mut params = AgentParams::zeros(layout.clone());
    for seg in layout.segments().to_vec() {
        if seg.kind != ParamKind::Weight {
            continue;
        }
        let gain = if seg.layer == layout.n_hidden {
            match seg.network {
                Network::Actor => 0.01,
                Network::Critic => 1.0,
            }
        } else {
            std::f64::consts::SQRT_2
        };
        let w = orthogonal_matrix(seg.rows, seg.cols, gain, rng);
        params.flat[seg.range()].copy_from_slice(&w);
    }
    params
}

/// Row-major `rows × cols` matrix with orthonormal rows or columns
/// (whichever fit), scaled by `gain`. Built by modified Gram-Schmidt on a
/// Gaussian draw, with signs fixed from the projection coefficients.
fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    // Columns of a big×small Gaussian matrix, orthonormalized in place.
    let mut q: Vec<Vec<f64>> = (0..small).map(|_| (0..big).map(|_| gaussian(rng)).collect()).collect();
    for j in 0..small {
        for i in 0..j {
            let dot: f64 = (0..big).map(|k| q[i][k] * q[j][k]).sum();
            for k in 0..big {
                q[j][k] -= dot * q[i][k];
            }
        }
        let norm: f64 = (0..big).map(|k| q[j][k] * q[j][k]).sum::<f64>().sqrt();
        // A zero column after projection is vanishingly unlikely; re-normalize defensively.
        let inv = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        let sign = if q[j][0] >= 0.0 { 1.0 } else { -1.0 };
        for k in 0..big {
            q[j][k] *= inv * sign;
        }
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // If rows >= cols the columns are orthonormal; otherwise the rows are.
            let v = if rows >= cols { q[c][r] } else { q[r][c] };
            w[r * cols + c] = gain * v;
        }
    }
    w
}

/// Rescales `grad` to `max_norm` when its L2 norm exceeds it.
pub fn global_grad_clip(grad: &mut [f64], max_norm: f64) {
    assert!(max_norm > 0.0);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn layout_covers_flat_vector_exactly() {
        let layout = AgentLayout::new(10, 4, 16, 2, Activation::Tanh);
        let mut covered = vec![0u8; layout.total()];
        for seg in layout.segments() {
            for i in seg.range() {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1), "gaps or overlaps in layout");
        let expected = (10 * 16 + 16) + (16 * 16 + 16) + (16 * 4 + 4) + (10 * 16 + 16) + (16 * 16 + 16) + (16 + 1);
        assert_eq!(layout.total(), expected);
    }

    #[test]
    fn init_biases_zero_and_deterministic() {
        let layout = AgentLayout::new(6, 3, 8, 2, Activation::Tanh);
        let a = init_agent(&layout, &mut stream_rng(5, "init", &[]));
        let b = init_agent(&layout, &mut stream_rng(5, "init", &[]));
        assert_eq!(a.flat, b.flat);
        for seg in layout.segments() {
            if seg.kind == ParamKind::Bias {
                assert!(a.segment(seg).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn hidden_weights_are_orthogonal() {
        let layout = AgentLayout::new(12, 4, 16, 2, Activation::Tanh);
        let params = init_agent(&layout, &mut stream_rng(7, "init", &[]));
        let seg = layout
            .segments()
            .iter()
            .find(|s| s.kind == ParamKind::Weight && s.layer == 1)
            .unwrap();
        let w = params.segment(seg);
        let gain2 = 2.0;
        for i in 0..seg.cols {
            for j in 0..seg.cols {
                let dot: f64 = (0..seg.rows).map(|r| w[r * seg.cols + i] * w[r * seg.cols + j]).sum();
                let expect = if i == j { gain2 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-5, "WtW[{i}][{j}] = {dot}");
            }
        }
    }

    #[test]
    fn wide_layer_rows_orthogonal() {
        // rows < cols: the input layer of a wide-observation agent.
        let layout = AgentLayout::new(40, 2, 8, 1, Activation::Relu);
        let params = init_agent(&layout, &mut stream_rng(9, "init", &[]));
        let seg = layout.segments().iter().find(|s| s.kind == ParamKind::Weight).unwrap();
        let w = params.segment(seg);
        for i in 0..seg.rows {
            for j in 0..seg.rows {
                let dot: f64 = (0..seg.cols).map(|c| w[i * seg.cols + c] * w[j * seg.cols + c]).sum();
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn grad_clip_cases() {
        let mut g = vec![0.6, 0.8]; // norm 1.0
        global_grad_clip(&mut g, 0.5);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 0.5).abs() < 1e-12);

        let mut small = vec![0.06, 0.08];
        let before = small.clone();
        global_grad_clip(&mut small, 0.5);
        assert_eq!(small, before);

        let mut zero = vec![0.0; 3];
        global_grad_clip(&mut zero, 0.5);
        assert_eq!(zero, vec![0.0; 3]);
    }

    #[test]
    fn actor_mask_and_layer_proportion() {
        let layout = AgentLayout::new(4, 3, 5, 2, Activation::Tanh);
        let mask = layout.actor_mask();
        let lp = layout.layer_proportion();
        let actor_count = mask.iter().filter(|&&m| m).count();
        assert_eq!(actor_count, 4 * 5 + 5 + 5 * 5 + 5 + 5 * 3 + 3);
        for seg in layout.segments() {
            let expect = (seg.layer + 1) as f64 / 3.0;
            assert!(lp[seg.range()].iter().all(|&v| v == expect));
        }
        assert!(lp.iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}

//! Per-neuron dormancy scores from captured activations.
//!
//! A neuron's score is its mean absolute activation divided by the layer
//! average of the same quantity, so scores average to 1 within each layer. A
//! neuron is τ-dormant when its score is ≤ τ.

use super::{ActivationRecord, AgentLayout, LayerActs, Network, ParamKind};

/// Scores per network and layer: the hidden layers in order, then the head.
#[derive(Debug, Clone)]
pub struct DormancyScores {
    pub actor: Vec<Vec<f64>>,
    pub critic: Vec<Vec<f64>>,
    /// Layers whose activations were identically zero; their scores are
    /// defined as 0.
    pub flagged: Vec<(Network, usize)>,
}

fn layer_scores(acts: &LayerActs) -> (Vec<f64>, bool) {
    let batch = acts.batch();
    assert!(batch > 0, "dormancy needs at least one sample");
    let mut mean_abs = vec![0.0; acts.dim];
    for s in 0..batch {
        for (m, &v) in mean_abs.iter_mut().zip(acts.sample(s)) {
            *m += v.abs();
        }
    }
    for m in &mut mean_abs {
        *m /= batch as f64;
    }
    let denom = mean_abs.iter().sum::<f64>() / acts.dim as f64;
    if denom == 0.0 {
        (vec![0.0; acts.dim], true)
    } else {
        (mean_abs.into_iter().map(|m| m / denom).collect(), false)
    }
}

pub fn dormancy_scores(record: &ActivationRecord) -> DormancyScores {
    let mut out = DormancyScores { actor: Vec::new(), critic: Vec::new(), flagged: Vec::new() };
    for (network, hidden, head, dest) in [
        (Network::Actor, &record.actor_hidden, &record.actor_head, 0),
        (Network::Critic, &record.critic_hidden, &record.critic_head, 1),
    ] {
        let layers = hidden.iter().chain(std::iter::once(head));
        for (l, acts) in layers.enumerate() {
            let (scores, flag) = layer_scores(acts);
            if flag {
                out.flagged.push((network, l));
            }
            if dest == 0 {
                out.actor.push(scores);
            } else {
                out.critic.push(scores);
            }
        }
    }
    out
}

/// Fraction of hidden neurons with score ≤ τ, over both networks. The head
/// layers are excluded; dormancy is a hidden-unit plasticity measure.
pub fn dormancy_fraction(scores: &DormancyScores, layout: &AgentLayout, tau: f64) -> (f64, f64) {
    let frac = |layers: &[Vec<f64>]| {
        let hidden = &layers[..layout.n_hidden];
        let total: usize = hidden.iter().map(|l| l.len()).sum();
        if total == 0 {
            return 0.0;
        }
        let dormant: usize = hidden.iter().flat_map(|l| l.iter()).filter(|&&s| s <= tau).count();
        dormant as f64 / total as f64
    };
    (frac(&scores.actor), frac(&scores.critic))
}

/// Expands per-neuron scores to per-parameter values: a weight `W[j,i]` and
/// the bias `b[j]` both take the score of their downstream neuron `j`.
pub fn tile_dormancy(layout: &AgentLayout, scores: &DormancyScores) -> Vec<f64> {
    let mut out = vec![0.0; layout.total()];
    for seg in layout.segments() {
        let layer_scores = match seg.network {
            Network::Actor => &scores.actor[seg.layer],
            Network::Critic => &scores.critic[seg.layer],
        };
        debug_assert_eq!(layer_scores.len(), seg.rows);
        match seg.kind {
            ParamKind::Weight => {
                for r in 0..seg.rows {
                    let start = seg.offset + r * seg.cols;
                    out[start..start + seg.cols].fill(layer_scores[r]);
                }
            }
            ParamKind::Bias => {
                out[seg.offset..seg.offset + seg.rows].copy_from_slice(layer_scores);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{init_agent, policy_forward, Activation};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn record_from(actor_hidden: Vec<LayerActs>) -> ActivationRecord {
        ActivationRecord {
            actor_hidden,
            actor_head: LayerActs { dim: 1, data: vec![1.0] },
            critic_hidden: vec![],
            critic_head: LayerActs { dim: 1, data: vec![1.0] },
        }
    }

    #[test]
    fn hand_case_two_neurons() {
        // mean |h| = [2, 0] -> scores [2, 0]; one tau=0 dormant neuron.
        let record = record_from(vec![LayerActs { dim: 2, data: vec![2.0, 0.0, -2.0, 0.0] }]);
        let scores = dormancy_scores(&record);
        assert_eq!(scores.actor[0], vec![2.0, 0.0]);
        let dormant = scores.actor[0].iter().filter(|&&s| s <= 0.0).count();
        assert_eq!(dormant, 1);
    }

    #[test]
    fn equal_neurons_all_score_one() {
        let record = record_from(vec![LayerActs { dim: 3, data: vec![0.5, -0.5, 0.5] }]);
        let scores = dormancy_scores(&record);
        assert_eq!(scores.actor[0], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn layer_mean_is_one_for_random_activations() {
        let mut rng = stream_rng(17, "dorm", &[]);
        for _ in 0..50 {
            let dim = rng.gen_range(2..20);
            let batch = rng.gen_range(1..10);
            let data: Vec<f64> = (0..dim * batch).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let record = record_from(vec![LayerActs { dim, data }]);
            let scores = dormancy_scores(&record);
            let mean = scores.actor[0].iter().sum::<f64>() / dim as f64;
            assert!((mean - 1.0).abs() < 1e-6, "layer mean {mean}");
        }
    }

    #[test]
    fn all_zero_layer_flagged() {
        let record = record_from(vec![LayerActs { dim: 2, data: vec![0.0, 0.0] }]);
        let scores = dormancy_scores(&record);
        assert_eq!(scores.actor[0], vec![0.0, 0.0]);
        assert!(scores.flagged.contains(&(Network::Actor, 0)));
    }

    #[test]
    fn tiling_covers_every_parameter() {
        let layout = AgentLayout::new(4, 3, 5, 2, Activation::Relu);
        let params = init_agent(&layout, &mut stream_rng(2, "i", &[]));
        let mut rng = stream_rng(3, "obs", &[]);
        let obs: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, _, record) = policy_forward(&params, &obs).unwrap();
        let scores = dormancy_scores(&record);
        let tiled = tile_dormancy(&layout, &scores);
        assert_eq!(tiled.len(), layout.total());
        // Every weight in a row shares the row's downstream score.
        for seg in layout.segments() {
            if seg.kind == ParamKind::Weight {
                for r in 0..seg.rows {
                    let row = &tiled[seg.offset + r * seg.cols..seg.offset + (r + 1) * seg.cols];
                    assert!(row.iter().all(|&v| v == row[0]));
                }
            }
        }
    }

    #[test]
    fn fresh_relu_net_fraction_low_but_defined() {
        let layout = AgentLayout::new(6, 3, 16, 2, Activation::Relu);
        let params = init_agent(&layout, &mut stream_rng(5, "i", &[]));
        let mut rng = stream_rng(6, "obs", &[]);
        let obs: Vec<Vec<f64>> = (0..64).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, _, record) = policy_forward(&params, &obs).unwrap();
        let scores = dormancy_scores(&record);
        let (actor_frac, critic_frac) = dormancy_fraction(&scores, &layout, 0.0);
        assert!(actor_frac < 0.5);
        assert!(critic_frac < 0.5);
        for layer in scores.actor.iter().take(layout.n_hidden) {
            let mean = layer.iter().sum::<f64>() / layer.len() as f64;
            assert!((mean - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn large_tau_marks_everything_dormant() {
        let layout = AgentLayout::new(3, 2, 4, 1, Activation::Tanh);
        let params = init_agent(&layout, &mut stream_rng(7, "i", &[]));
        let obs = vec![vec![0.2, -0.4, 0.6]];
        let (_, _, record) = policy_forward(&params, &obs).unwrap();
        let scores = dormancy_scores(&record);
        let (a, c) = dormancy_fraction(&scores, &layout, 1e9);
        assert_eq!(a, 1.0);
        assert_eq!(c, 1.0);
    }
}

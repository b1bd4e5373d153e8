//! Optimizers behind one common interface: handcrafted baselines and the
//! learned recurrent optimizer.

pub mod baseline;
pub mod open;

pub use baseline::{BaselineHyper, BaselineKind, BaselineOptimizer};
pub use open::{
    build_features, meta_init, FeatureMask, MetaLayout, OpenArch, OpenOptimizer, FEATURES_FULL,
    FEATURES_NO_EXTRAS, MOMENTUM_BETAS,
};

use crate::agent::AgentParams;
use crate::Result;
use rand_chacha::ChaCha8Rng;

/// Training-loop signals available to an optimizer at each update.
#[derive(Debug, Clone, Copy)]
pub struct StepSignals<'a> {
    /// Training proportion: progress of the current batch through all batches.
    pub tp: f64,
    /// Batch proportion: progress of the current update through the epochs
    /// over one batch.
    pub bp: f64,
    /// Per-parameter dormancy of the downstream neuron.
    pub dormancy: &'a [f64],
    /// Per-parameter relative layer position.
    pub layer_prop: &'a [f64],
}

/// What one optimizer step did, for analysis. `update` is the applied update
/// `u` (parameters moved by `p -= u`); `raw_update` is the update before any
/// zero-meaning; `noise_weight`/`noise` are the learned stochasticity outputs
/// when the optimizer has them.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub update: Vec<f64>,
    pub raw_update: Vec<f64>,
    pub noise_weight: Option<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
}

/// A stateful per-run update rule. Implementations own whatever accumulators
/// they need, sized to one agent; a fresh optimizer is built per training run.
pub trait Optimizer: Send {
    fn step(
        &mut self,
        params: &mut AgentParams,
        grad: &[f64],
        signals: &StepSignals,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepRecord>;

    /// True when updates depend on the rng stream (learned stochasticity).
    fn is_stochastic(&self) -> bool {
        false
    }
}

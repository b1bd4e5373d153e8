//! Handcrafted optimizers: Adam, RMSprop, Lion, and SGD with momentum, each
//! with optional linear learning-rate annealing over training proportion.

use super::{Optimizer, StepRecord, StepSignals};
use crate::agent::AgentParams;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
    Lion { beta1: f64, beta2: f64 },
    SgdMomentum { beta: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineHyper {
    pub lr: f64,
    /// Linear decay of the learning rate to zero over training proportion.
    pub anneal: bool,
}

impl BaselineKind {
    /// Adam at the gridworld tuning: lr 1e-4, β1 = β2 = 0.99, annealed.
    pub fn adam_default() -> (BaselineKind, BaselineHyper) {
        (
            BaselineKind::Adam { beta1: 0.99, beta2: 0.99, eps: 1e-8 },
            BaselineHyper { lr: 1e-4, anneal: true },
        )
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOptimizer {
    kind: BaselineKind,
    hyper: BaselineHyper,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl BaselineOptimizer {
    pub fn new(kind: BaselineKind, hyper: BaselineHyper, n_params: usize) -> Self {
        BaselineOptimizer { kind, hyper, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    fn effective_lr(&self, tp: f64) -> f64 {
        if self.hyper.anneal {
            self.hyper.lr * (1.0 - tp)
        } else {
            self.hyper.lr
        }
    }
}

impl Optimizer for BaselineOptimizer {
    fn step(
        &mut self,
        params: &mut AgentParams,
        grad: &[f64],
        signals: &StepSignals,
        _rng: &mut ChaCha8Rng,
    ) -> Result<StepRecord> {
        if grad.len() != params.flat.len() {
            return Err(Error::Usage("gradient length mismatch".into()));
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.step += 1;
        let lr = self.effective_lr(signals.tp);
        let mut update = vec![0.0; grad.len()];
        match self.kind {
            BaselineKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..grad.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    update[i] = lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            BaselineKind::RmsProp { decay, eps } => {
                for i in 0..grad.len() {
                    self.v[i] = decay * self.v[i] + (1.0 - decay) * grad[i] * grad[i];
                    update[i] = lr * grad[i] / (self.v[i].sqrt() + eps);
                }
            }
            BaselineKind::Lion { beta1, beta2 } => {
                for i in 0..grad.len() {
                    let c = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    update[i] = lr * c.signum() * f64::from(c != 0.0);
                    self.m[i] = beta2 * self.m[i] + (1.0 - beta2) * grad[i];
                }
            }
            BaselineKind::SgdMomentum { beta } => {
                for i in 0..grad.len() {
                    self.m[i] = beta * self.m[i] + grad[i];
                    update[i] = lr * self.m[i];
                }
            }
        }
        for (p, u) in params.flat.iter_mut().zip(&update) {
            *p -= u;
        }
        params.check_finite()?;
        Ok(StepRecord { raw_update: update.clone(), update, noise_weight: None, noise: None })
    }
}

//! The outer loop: OpenAI-style evolution strategies over the learned
//! optimizer's weights.
//!
//! Each generation draws an antithetic population around the mean, scores
//! every member with an inner training run, shapes the scores (global rank
//! transform, or within-pair comparison under antithetic task sampling), and
//! moves the mean by Adam on the estimated ascent gradient.

use crate::rng::{gaussian, stream_rng, stream_seed};
use crate::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsConfig {
    /// Population size; must be even (antithetic pairs).
    pub population: usize,
    pub sigma: f64,
    pub sigma_decay: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub generations: u64,
    /// Evaluate and archive the mean every this many generations.
    pub eval_freq: u64,
    /// Pair members on the same task and compare within the pair.
    pub antithetic_tasks: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            population: 64,
            sigma: 0.01,
            sigma_decay: 0.999,
            lr: 0.005,
            lr_decay: 0.990,
            generations: 100,
            eval_freq: 10,
            antithetic_tasks: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.population % 2 != 0 {
            return Err(Error::Config(format!("population {} must be positive and even", self.population)));
        }
        if self.sigma <= 0.0 || self.lr <= 0.0 {
            return Err(Error::Config("sigma and lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sigma_decay) || !(0.0..=1.0).contains(&self.lr_decay) {
            return Err(Error::Config("decay factors must lie in (0, 1]".into()));
        }
        if self.generations == 0 || self.eval_freq == 0 {
            return Err(Error::Config("generations and eval_freq must be positive".into()));
        }
        Ok(())
    }
}

/// Mutable outer-loop state; everything a resume needs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EsState {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub lr: f64,
    pub generation: u64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_step: u64,
}

impl EsState {
    pub fn new(mean: Vec<f64>, cfg: &EsConfig) -> Self {
        let n = mean.len();
        EsState {
            mean,
            sigma: cfg.sigma,
            lr: cfg.lr,
            generation: 0,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_step: 0,
        }
    }
}

/// Draws `population` members around `mean` as antithetic pairs: member `2i`
/// adds `sigma * eps_i`, member `2i + 1` subtracts it.
pub fn sample_population(
    mean: &[f64],
    sigma: f64,
    population: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    assert!(population % 2 == 0);
    let mut members = Vec::with_capacity(population);
    let mut noises = Vec::with_capacity(population);
    for _ in 0..population / 2 {
        let eps: Vec<f64> = (0..mean.len()).map(|_| gaussian(rng)).collect();
        let plus: Vec<f64> = mean.iter().zip(&eps).map(|(m, e)| m + sigma * e).collect();
        let minus: Vec<f64> = mean.iter().zip(&eps).map(|(m, e)| m - sigma * e).collect();
        members.push(plus);
        members.push(minus);
        noises.push(eps.clone());
        noises.push(eps.into_iter().map(|e| -e).collect());
    }
    (members, noises)
}

/// Maps fitness values to evenly spaced scores in [-0.5, 0.5] by rank, worst
/// to best. Ties break by member index; if all values are equal every score
/// is zero.
pub fn rank_transform(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    if fitness.iter().all(|&f| f == fitness[0]) {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).expect("finite fitness").then(a.cmp(&b)));
    let mut shaped = vec![0.0; n];
    for (rank, &member) in order.iter().enumerate() {
        shaped[member] = rank as f64 / (n - 1) as f64 - 0.5;
    }
    shaped
}

/// Within-pair shaping for antithetic task sampling: the better member of
/// each pair scores +0.5, the worse -0.5, ties 0.
pub fn pairwise_shape(fitness: &[f64]) -> Vec<f64> {
    assert!(fitness.len() % 2 == 0);
    let mut shaped = vec![0.0; fitness.len()];
    for pair in 0..fitness.len() / 2 {
        let (a, b) = (2 * pair, 2 * pair + 1);
        if fitness[a] > fitness[b] {
            shaped[a] = 0.5;
            shaped[b] = -0.5;
        } else if fitness[b] > fitness[a] {
            shaped[a] = -0.5;
            shaped[b] = 0.5;
        }
    }
    shaped
}

/// Ascent gradient estimate `(1 / (n * sigma)) * sum_k shaped_k * eps_k`.
pub fn es_gradient(noises: &[Vec<f64>], shaped: &[f64], sigma: f64) -> Vec<f64> {
    let n = noises.len();
    let dim = noises[0].len();
    let mut grad = vec![0.0; dim];
    for (eps, &s) in noises.iter().zip(shaped) {
        for (g, e) in grad.iter_mut().zip(eps) {
            *g += s * e;
        }
    }
    let scale = 1.0 / (n as f64 * sigma);
    for g in &mut grad {
        *g *= scale;
    }
    grad
}

/// One Adam ascent step on the mean, then the per-generation decays.
pub fn es_update(state: &mut EsState, grad: &[f64], cfg: &EsConfig) {
    state.adam_step += 1;
    let bc1 = 1.0 - cfg.adam_beta1.powi(state.adam_step as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(state.adam_step as i32);
    for i in 0..state.mean.len() {
        state.adam_m[i] = cfg.adam_beta1 * state.adam_m[i] + (1.0 - cfg.adam_beta1) * grad[i];
        state.adam_v[i] = cfg.adam_beta2 * state.adam_v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
        let m_hat = state.adam_m[i] / bc1;
        let v_hat = state.adam_v[i] / bc2;
        state.mean[i] += state.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    state.sigma *= cfg.sigma_decay;
    state.lr *= cfg.lr_decay;
    state.generation += 1;
}

/// Normalized multi-task score: the mean over environments of the member's
/// return divided by a tuned-baseline return on the same environment.
pub fn multitask_fitness(returns: &[f64], baselines: &[f64]) -> Result<f64> {
    if returns.len() != baselines.len() || returns.is_empty() {
        return Err(Error::Config("returns and baselines must be equal-length and non-empty".into()));
    }
    let mut total = 0.0;
    for (r, b) in returns.iter().zip(baselines) {
        if *b <= 0.0 {
            return Err(Error::Config(format!("baseline return {b} must be positive for normalization")));
        }
        total += r / b;
    }
    Ok(total / returns.len() as f64)
}

/// Scores one candidate meta-parameter vector on one task draw.
pub trait Evaluator: Sync {
    fn evaluate(&self, meta: &[f64], task_seed: u64) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&[f64], u64) -> Result<f64> + Sync,
{
    fn evaluate(&self, meta: &[f64], task_seed: u64) -> Result<f64> {
        self(meta, task_seed)
    }
}

/// One member's outcome in the per-generation fitness log.
#[derive(Debug, Clone, Copy)]
pub struct FitnessRow {
    pub generation: u64,
    pub member: usize,
    pub task_seed: u64,
    pub raw_fitness: f64,
    pub shaped_fitness: f64,
    pub failed: bool,
}

pub struct MetaResult {
    pub state: EsState,
    pub rows: Vec<FitnessRow>,
    /// `(generation, mean fitness over validation tasks, mean snapshot)`.
    pub archive: Vec<(u64, f64, Vec<f64>)>,
}

const N_VALIDATION_TASKS: u64 = 4;

fn validate_mean(eval: &dyn Evaluator, mean: &[f64], master_seed: u64) -> f64 {
    let scores: Vec<f64> = (0..N_VALIDATION_TASKS)
        .into_par_iter()
        .map(|v| {
            let seed = stream_seed(master_seed, "validation", &[v]);
            eval.evaluate(mean, seed).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Runs the outer loop from `state` until `cfg.generations`, appending to the
/// fitness log and validation archive. Member evaluations run in parallel;
/// results are reduced in member order, so the outcome does not depend on the
/// worker count.
pub fn meta_train(
    cfg: &EsConfig,
    eval: &dyn Evaluator,
    state: &mut EsState,
    master_seed: u64,
    mut on_generation: impl FnMut(&EsState, f64),
) -> Result<MetaResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut archive = Vec::new();

    while state.generation < cfg.generations {
        let gen = state.generation;
        let mut noise_rng = stream_rng(master_seed, "es-noise", &[gen]);
        let (members, noises) = sample_population(&state.mean, state.sigma, cfg.population, &mut noise_rng);

        let task_seeds: Vec<u64> = (0..cfg.population)
            .map(|k| {
                // Antithetic task sampling gives both halves of a pair the
                // same task draw.
                let task_index = if cfg.antithetic_tasks { (k / 2) as u64 } else { k as u64 };
                stream_seed(master_seed, "task", &[gen, task_index])
            })
            .collect();

        let raw: Vec<(f64, bool)> = members
            .par_iter()
            .zip(task_seeds.par_iter())
            .map(|(meta, &seed)| match eval.evaluate(meta, seed) {
                Ok(f) if f.is_finite() => (f, false),
                _ => (f64::NEG_INFINITY, true),
            })
            .collect();

        let fitness: Vec<f64> = raw.iter().map(|(f, _)| *f).collect();
        // NEG_INFINITY sorts below every finite score, so failures take the
        // worst shaped fitness.
        let shaped = if cfg.antithetic_tasks { pairwise_shape(&fitness) } else { rank_transform(&fitness) };
        let grad = es_gradient(&noises, &shaped, state.sigma);
        es_update(state, &grad, cfg);

        for k in 0..cfg.population {
            rows.push(FitnessRow {
                generation: gen,
                member: k,
                task_seed: task_seeds[k],
                raw_fitness: fitness[k],
                shaped_fitness: shaped[k],
                failed: raw[k].1,
            });
        }

        let mean_fitness = {
            let finite: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
            if finite.is_empty() { f64::NEG_INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 }
        };
        on_generation(state, mean_fitness);

        if state.generation % cfg.eval_freq == 0 || state.generation == cfg.generations {
            let score = validate_mean(eval, &state.mean, master_seed);
            archive.push((state.generation, score, state.mean.clone()));
        }
    }

    Ok(MetaResult { state: state.clone(), rows, archive })
}

//! Release acceptance suite. Each test checks one criterion end to end and
//! prints a single PASS line with the measured numbers; a failed assert is the
//! FAIL line. The two meta-training tests (c09, c10) dominate the runtime at
//! roughly ten minutes each on one core.

use std::time::Instant;

use open_rl::agent::{
    dormancy_scores, init_agent, loss_and_grad, policy_forward, Activation, ActivationRecord,
    AgentLayout, LayerActs, Minibatch, PpoLossConfig,
};
use open_rl::analysis::{iqm, percentile_bootstrap};
use open_rl::env::{ChainEnv, DeepSea, DeepSeaParams, Env};
use open_rl::es::{
    es_gradient, es_update, meta_train, multitask_fitness, rank_transform, sample_population,
    Evaluator, EsConfig, EsState, FitnessRow,
};
use open_rl::optim::{
    build_features, meta_init, BaselineHyper, BaselineKind, BaselineOptimizer, FeatureMask,
    OpenArch, OpenOptimizer, StepSignals, FEATURES_FULL, FEATURES_NO_EXTRAS,
};
use open_rl::ppo::{train, PpoConfig};
use open_rl::rng::stream_rng;
use open_rl::Result;
use rand::Rng;

fn pass(name: &str, detail: String) {
    println!("PASS: {name} ({detail})");
}

// ---------------------------------------------------------------- c01

fn random_case(seed: u64) -> (open_rl::agent::AgentParams, Minibatch) {
    let mut rng = stream_rng(seed, "fd-case", &[]);
    let obs_dim = rng.gen_range(2..5);
    let n_actions = rng.gen_range(2..4);
    let width = rng.gen_range(3..6);
    let n_hidden = rng.gen_range(1..3);
    let activation = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
    let layout = AgentLayout::new(obs_dim, n_actions, width, n_hidden, activation);
    let mut params = init_agent(&layout, &mut rng);
    // Jitter every parameter so no preactivation sits exactly on a ReLU kink
    // (zero-initialized biases put a fully dead layer's next preactivations
    // at exactly zero, where the subgradient and the central difference
    // legitimately disagree).
    for p in &mut params.flat {
        *p += rng.gen_range(-0.05..0.05);
    }
    let batch = rng.gen_range(4..9);
    let mb = Minibatch {
        obs: (0..batch).map(|_| (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        actions: (0..batch).map(|_| rng.gen_range(0..n_actions)).collect(),
        old_log_probs: (0..batch).map(|_| rng.gen_range(-2.0..-0.1)).collect(),
        advantages: (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        value_targets: (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        old_values: (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    (params, mb)
}

#[test]
fn c01_analytic_gradient_matches_finite_differences() {
    let start = Instant::now();
    let cfg = PpoLossConfig::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let (mut params, mb) = random_case(100 + case);
        let (_, analytic, _) = loss_and_grad(&params, &mb, &cfg).unwrap();
        let mut fd = vec![0.0; params.flat.len()];
        for i in 0..params.flat.len() {
            let orig = params.flat[i];
            params.flat[i] = orig + h;
            let (lp, _, _) = loss_and_grad(&params, &mb, &cfg).unwrap();
            params.flat[i] = orig - h;
            let (lm, _, _) = loss_and_grad(&params, &mb, &cfg).unwrap();
            params.flat[i] = orig;
            fd[i] = (lp - lm) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&fd).max(1e-12);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "case {case}: relative gradient error {rel}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient check took {elapsed:?}");
    pass("gradient correctness", format!("worst rel err {worst:.2e} over 20 cases, {elapsed:.2?}"));
}

// ---------------------------------------------------------------- c02

#[test]
fn c02_updates_are_zero_mean() {
    let cfg = PpoConfig {
        n_envs: 8,
        n_steps: 4,
        n_minibatch: 2,
        n_epochs: 5,
        total_steps: 8 * 4 * 10,
        ..PpoConfig::default()
    };
    assert_eq!(cfg.n_updates(), 100);
    let env = ChainEnv::new(3).unwrap();
    let layout = AgentLayout::new(env.obs_dim(), env.n_actions(), 8, 2, Activation::Tanh);
    let arch = OpenArch::standard();
    let mut worst = 0.0f64;
    for separated in [false, true] {
        let mut meta = meta_init(arch, &mut stream_rng(7, "meta-init", &[0]));
        if separated {
            meta.extend(meta_init(arch, &mut stream_rng(7, "meta-init", &[1])));
        }
        let mut params = init_agent(&layout, &mut stream_rng(8, "agent-init", &[]));
        let mut opt =
            OpenOptimizer::new(meta, arch, FeatureMask::default(), separated, &layout).unwrap();
        let res = train(&cfg, &env, &mut params, &mut opt, 9, true).unwrap();
        assert_eq!(res.trace.len(), 100);
        let actor_mask = layout.actor_mask();
        for step in &res.trace {
            let u = &step.record.update;
            let groups: Vec<Vec<f64>> = if separated {
                [true, false]
                    .iter()
                    .map(|&side| {
                        u.iter()
                            .zip(&actor_mask)
                            .filter(|(_, &a)| a == side)
                            .map(|(v, _)| *v)
                            .collect()
                    })
                    .collect()
            } else {
                vec![u.clone()]
            };
            for g in groups {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                let rms = (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
                assert!(mean.abs() <= 1e-7 * rms, "separated {separated}: |mean| {} rms {rms}", mean.abs());
                if rms > 0.0 {
                    worst = worst.max(mean.abs() / rms);
                }
            }
        }
    }
    pass("zero-mean updates", format!("worst |mean|/rms {worst:.2e} over 2x100 updates"));
}

// ---------------------------------------------------------------- c03

#[test]
fn c03_dormancy_normalization() {
    let mut rng = stream_rng(11, "dorm-batch", &[]);
    for _ in 0..100 {
        let dim = rng.gen_range(2..24);
        let batch = rng.gen_range(1..12);
        let data: Vec<f64> = (0..dim * batch).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let record = ActivationRecord {
            actor_hidden: vec![LayerActs { dim, data }],
            actor_head: LayerActs { dim: 1, data: vec![1.0; batch] },
            critic_hidden: vec![],
            critic_head: LayerActs { dim: 1, data: vec![1.0; batch] },
        };
        let scores = dormancy_scores(&record);
        let mean = scores.actor[0].iter().sum::<f64>() / dim as f64;
        assert!((mean - 1.0).abs() <= 1e-6, "per-layer mean {mean}");
    }
    // Real forward-pass activations as well.
    let layout = AgentLayout::new(5, 3, 9, 2, Activation::Relu);
    let params = init_agent(&layout, &mut rng);
    let obs: Vec<Vec<f64>> = (0..16).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (_, _, record) = policy_forward(&params, &obs).unwrap();
    let scores = dormancy_scores(&record);
    for layer in scores.actor.iter().chain(&scores.critic) {
        let mean = layer.iter().sum::<f64>() / layer.len() as f64;
        assert!((mean - 1.0).abs() <= 1e-6, "forward-pass layer mean {mean}");
    }
    // Hand case: mean |h| of [2, 0] keeps scores [2, 0].
    let record = ActivationRecord {
        actor_hidden: vec![LayerActs { dim: 2, data: vec![2.0, 0.0, -2.0, 0.0] }],
        actor_head: LayerActs { dim: 1, data: vec![1.0, 1.0] },
        critic_hidden: vec![],
        critic_head: LayerActs { dim: 1, data: vec![1.0, 1.0] },
    };
    let scores = dormancy_scores(&record);
    assert_eq!(scores.actor[0], vec![2.0, 0.0]);
    pass("dormancy normalization", "100 random layers + forward pass + hand case [2,0]".into());
}

// ---------------------------------------------------------------- c04

#[test]
fn c04_feature_vector_lengths() {
    assert_eq!(FEATURES_FULL, 19);
    assert_eq!(FEATURES_NO_EXTRAS, 14);
    assert_eq!(OpenArch::standard().input_dim, 19);
    assert_eq!(OpenArch::no_features().input_dim, 14);

    let layout = AgentLayout::new(4, 3, 6, 2, Activation::Tanh);
    let mut rng = stream_rng(13, "feat", &[]);
    let params = init_agent(&layout, &mut rng);
    let n = layout.total();
    let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let momenta: Vec<Vec<f64>> =
        (0..6).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let dormancy = vec![1.0; n];
    let layer_prop = layout.layer_proportion();
    let signals = StepSignals { tp: 0.3, bp: 0.5, dormancy: &dormancy, layer_prop: &layer_prop };
    let mask = FeatureMask::default();
    let full = build_features(&grad, &momenta, &params, &signals, &mask, FEATURES_FULL);
    assert_eq!(full.len(), n);
    assert!(full.iter().all(|f| f.len() == 19));
    let short = build_features(&grad, &momenta, &params, &signals, &mask, FEATURES_NO_EXTRAS);
    assert_eq!(short.len(), n);
    assert!(short.iter().all(|f| f.len() == 14));
    pass("feature contract", format!("length 19/14 for all {n} parameters"));
}

// ---------------------------------------------------------------- c05

#[test]
fn c05_es_estimator_on_quadratic() {
    let start = Instant::now();
    let dim = 8;
    let neg_norm2 = |v: &[f64]| -v.iter().map(|x| x * x).sum::<f64>();
    let cos_limit = (15.0f64.to_radians()).cos();
    let mut worst_cos = 1.0f64;
    for seed in 0..10u64 {
        let mut rng = stream_rng(seed, "es-angle", &[]);
        let mut theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        for t in &mut theta {
            *t /= norm;
        }
        let (members, noises) = sample_population(&theta, 0.05, 512, &mut rng);
        let fitness: Vec<f64> = members.iter().map(|m| neg_norm2(m)).collect();
        let shaped = rank_transform(&fitness);
        let est = es_gradient(&noises, &shaped, 0.05);
        // Ascent gradient of the smoothed objective is -2*theta.
        let truth: Vec<f64> = theta.iter().map(|t| -2.0 * t).collect();
        let dot: f64 = est.iter().zip(&truth).map(|(a, b)| a * b).sum();
        let na = est.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = dot / (na * nb);
        worst_cos = worst_cos.min(cos);
        assert!(cos > cos_limit, "seed {seed}: cos {cos} (angle {:.1} deg)", cos.acos().to_degrees());
    }

    let cfg = EsConfig {
        population: 512,
        sigma: 0.05,
        sigma_decay: 1.0,
        lr: 0.05,
        lr_decay: 0.9,
        generations: 50,
        ..EsConfig::default()
    };
    let mut rng = stream_rng(99, "es-run", &[]);
    let mut mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm0 = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    for m in &mut mean {
        *m /= norm0;
    }
    let mut state = EsState::new(mean, &cfg);
    for gen in 0..cfg.generations {
        let mut gen_rng = stream_rng(99, "es-run-noise", &[gen]);
        let (members, noises) =
            sample_population(&state.mean, state.sigma, cfg.population, &mut gen_rng);
        let fitness: Vec<f64> = members.iter().map(|m| neg_norm2(m)).collect();
        let shaped = rank_transform(&fitness);
        let grad = es_gradient(&noises, &shaped, state.sigma);
        es_update(&mut state, &grad, &cfg);
    }
    let final_norm = state.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(final_norm <= 0.1, "50-generation ES left |mean| = {final_norm}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "ES check took {elapsed:?}");
    pass(
        "ES estimator",
        format!("worst cos {worst_cos:.4} over 10 seeds; |mean| 1 -> {final_norm:.4} in 50 gens, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------- c06

#[test]
fn c06_rank_transform_properties() {
    let shaped = rank_transform(&[3.0, 10.0, -1.0, 5.0]);
    let expected = [-1.0 / 6.0, 0.5, -0.5, 1.0 / 6.0];
    for (s, e) in shaped.iter().zip(&expected) {
        assert!((s - e).abs() < 1e-12, "{shaped:?} vs {expected:?}");
    }

    let mut rng = stream_rng(21, "rank", &[]);
    for _ in 0..20 {
        let n = rng.gen_range(2..30);
        let fitness: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shaped = rank_transform(&fitness);
        let mut sorted = shaped.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted[0], -0.5);
        assert_eq!(sorted[n - 1], 0.5);
        let gap = 1.0 / (n - 1) as f64;
        for w in sorted.windows(2) {
            assert!((w[1] - w[0] - gap).abs() < 1e-12, "uneven spacing {sorted:?}");
        }
        // Invariance under monotone transforms.
        for f in [
            |x: f64| x.exp(),
            |x: f64| 3.0 * x + 7.0,
            |x: f64| x * x * x,
        ] {
            let mapped: Vec<f64> = fitness.iter().map(|&x| f(x)).collect();
            assert_eq!(rank_transform(&mapped), shaped);
        }
    }
    pass("rank transform", "hand case, even spacing, monotone invariance".into());
}

// ---------------------------------------------------------------- c07

#[test]
fn c07_baselines_solve_chain() {
    let start = Instant::now();
    let cfg = PpoConfig {
        n_envs: 32,
        n_steps: 16,
        n_minibatch: 4,
        n_epochs: 2,
        total_steps: 32 * 16 * 25,
        ..PpoConfig::default()
    };
    assert_eq!(cfg.n_updates(), 200);
    let env = ChainEnv::new(4).unwrap();
    let optimum = env.max_return().unwrap();
    let kinds: [(&str, BaselineKind); 3] = [
        ("adam", BaselineKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }),
        ("rmsprop", BaselineKind::RmsProp { decay: 0.99, eps: 1e-8 }),
        ("lion", BaselineKind::Lion { beta1: 0.9, beta2: 0.99 }),
    ];
    let mut detail = Vec::new();
    for (name, kind) in kinds {
        for seed in 0..3u64 {
            let layout = AgentLayout::new(env.obs_dim(), env.n_actions(), 16, 2, Activation::Tanh);
            let mut params = init_agent(&layout, &mut stream_rng(seed, "agent-init", &[]));
            let mut opt =
                BaselineOptimizer::new(kind, BaselineHyper { lr: 3e-3, anneal: true }, layout.total());
            let res = train(&cfg, &env, &mut params, &mut opt, seed, false).unwrap();
            assert!(
                res.final_mean_return >= 0.95 * optimum,
                "{name} seed {seed}: final return {} vs optimum {optimum}",
                res.final_mean_return
            );
            if seed == 0 {
                detail.push(format!("{name} {:.3}", res.final_mean_return));
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "baseline check took {elapsed:?}");
    pass("baseline sanity", format!("{} in 200 updates, {elapsed:.2?}", detail.join(", ")));
}

// ---------------------------------------------------------------- c08

#[test]
fn c08_deep_sea_semantics_and_ppo_adam() {
    // All-right return decomposes into one goal reward and N move penalties;
    // the exact sum 1 - 4*(0.01/4) is the f64 literal 0.99. The naive left to
    // right reward sum rounds differently by one ulp, which is also checked.
    for seed in 0..10u64 {
        let mut env = DeepSea::new(DeepSeaParams::standard(4, seed).unwrap()).unwrap();
        let p = env.params().move_penalty;
        let flips = env.params().action_flip_mask.clone();
        let mut rng = stream_rng(seed, "walk", &[]);
        env.reset(&mut rng);
        let mut naive = 0.0;
        let mut rights = 0u32;
        let mut goals = 0u32;
        for (row, &flip) in flips.iter().enumerate() {
            let action = usize::from(!flip);
            let out = env.step(action, &mut rng);
            naive += out.reward;
            rights += 1;
            if row == flips.len() - 1 {
                assert!(out.done);
                assert_eq!(out.reward, env.params().goal_reward - p);
                goals += 1;
            } else {
                assert_eq!(out.reward, -p);
            }
        }
        let exact = f64::from(goals) * env.params().goal_reward - f64::from(rights) * p;
        assert_eq!(exact, 0.99, "exact all-right return at N=4");
        assert!((naive - 0.99).abs() <= 1e-15, "stepwise sum {naive}");
    }

    let cfg = PpoConfig {
        n_envs: 32,
        n_steps: 16,
        n_minibatch: 4,
        n_epochs: 2,
        total_steps: 32 * 16 * 30,
        ..PpoConfig::default()
    };
    let mut solved = 0;
    for seed in 0..10u64 {
        let env = DeepSea::new(DeepSeaParams::standard(4, seed).unwrap()).unwrap();
        let layout = AgentLayout::new(env.obs_dim(), env.n_actions(), 16, 2, Activation::Tanh);
        let mut params = init_agent(&layout, &mut stream_rng(seed, "agent-init", &[]));
        let mut opt = BaselineOptimizer::new(
            BaselineKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            BaselineHyper { lr: 3e-3, anneal: true },
            layout.total(),
        );
        let res = train(&cfg, &env, &mut params, &mut opt, seed, false).unwrap();
        if res.final_mean_return >= 0.9 {
            solved += 1;
        }
    }
    assert!(solved >= 7, "PPO+Adam solved {solved}/10 seeds at N=4");
    pass("deep sea semantics", format!("all-right return exactly 0.99; PPO+Adam solved {solved}/10"));
}

// ------------------------------------------------------- c09 / c10 shared

const META_SEED: u64 = 1234;

fn inner_cfg() -> PpoConfig {
    PpoConfig {
        n_envs: 32,
        n_steps: 16,
        n_minibatch: 4,
        n_epochs: 2,
        total_steps: 32 * 16 * 30,
        ..PpoConfig::default()
    }
}

/// Task distribution for meta-training: Deep Sea sizes in [4, max_size].
fn deepsea_task(task_seed: u64, max_size: usize) -> DeepSea {
    let size = 4 + (task_seed % (max_size as u64 - 3)) as usize;
    DeepSea::new(DeepSeaParams::standard(size, task_seed).unwrap()).unwrap()
}

fn run_open(meta: &[f64], mask: FeatureMask, env: &DeepSea, seed: u64) -> f64 {
    let layout = AgentLayout::new(env.obs_dim(), env.n_actions(), 16, 2, Activation::Tanh);
    let mut params = init_agent(&layout, &mut stream_rng(seed, "agent-init", &[]));
    let mut opt = OpenOptimizer::new(meta.to_vec(), OpenArch::standard(), mask, true, &layout).unwrap();
    match train(&inner_cfg(), env, &mut params, &mut opt, seed, false) {
        Ok(res) => res.final_mean_return,
        Err(_) => f64::NEG_INFINITY,
    }
}

struct DeepSeaEval {
    mask: FeatureMask,
    max_size: usize,
}

impl Evaluator for DeepSeaEval {
    fn evaluate(&self, meta: &[f64], task_seed: u64) -> Result<f64> {
        Ok(run_open(meta, self.mask, &deepsea_task(task_seed, self.max_size), task_seed))
    }
}

/// Meta-trains a separated optimizer: population 16, 48 generations.
fn meta_train_deepsea(mask: FeatureMask, max_size: usize) -> Vec<f64> {
    let cfg = EsConfig {
        population: 16,
        sigma: 0.05,
        sigma_decay: 1.0,
        lr: 0.05,
        lr_decay: 1.0,
        generations: 48,
        eval_freq: 48,
        antithetic_tasks: true,
        ..EsConfig::default()
    };
    let arch = OpenArch::standard();
    let mut mean = meta_init(arch, &mut stream_rng(META_SEED, "meta-init", &[0]));
    mean.extend(meta_init(arch, &mut stream_rng(META_SEED, "meta-init", &[1])));
    let mut state = EsState::new(mean, &cfg);
    meta_train(&cfg, &DeepSeaEval { mask, max_size }, &mut state, META_SEED, |_, _| {}).unwrap();
    state.mean
}

fn eval_iqm(meta: &[f64], mask: FeatureMask, size: usize, n_seeds: u64) -> (f64, Vec<f64>) {
    let returns: Vec<f64> = (0..n_seeds)
        .map(|s| {
            let seed = 1_000_000 + s;
            let env = DeepSea::new(DeepSeaParams::standard(size, seed).unwrap()).unwrap();
            run_open(meta, mask, &env, seed)
        })
        .collect();
    (iqm(&returns), returns)
}

// ---------------------------------------------------------------- c09

#[test]
fn c09_meta_training_beats_zero_init() {
    let start = Instant::now();
    let learned = meta_train_deepsea(FeatureMask::default(), 8);
    let zero = vec![0.0; learned.len()];
    let (learned_iqm, _) = eval_iqm(&learned, FeatureMask::default(), 6, 32);
    let (zero_iqm, _) = eval_iqm(&zero, FeatureMask::default(), 6, 32);
    let margin = learned_iqm - zero_iqm;
    assert!(
        margin >= 0.5,
        "learned IQM {learned_iqm:.3} vs zero-init IQM {zero_iqm:.3} (margin {margin:.3})"
    );
    pass(
        "desk-scale meta-training",
        format!("learned IQM {learned_iqm:.3} vs zero-init {zero_iqm:.3} over 32 seeds, {:.0?}", start.elapsed()),
    );
}

// ---------------------------------------------------------------- c10

#[test]
fn c10_stochasticity_helps_on_large_deep_sea() {
    // Both variants are trained on sizes 4 through 10 so the large evaluation
    // environment is inside the training distribution; the comparison isolates
    // the noise output rather than out-of-distribution luck.
    let start = Instant::now();
    let stoch_meta = meta_train_deepsea(FeatureMask::default(), 10);
    let det_mask = FeatureMask::by_name("no_stochasticity").unwrap();
    let det_meta = meta_train_deepsea(det_mask, 10);
    let size = 10;
    let (stoch_iqm, stoch_returns) = eval_iqm(&stoch_meta, FeatureMask::default(), size, 32);
    let (det_iqm, det_returns) = eval_iqm(&det_meta, det_mask, size, 32);
    let (s_lo, s_hi) = percentile_bootstrap(&stoch_returns, iqm, 2000, 0.05, 5);
    let (d_lo, d_hi) = percentile_bootstrap(&det_returns, iqm, 2000, 0.05, 5);
    assert!(
        stoch_iqm >= det_iqm,
        "stochastic IQM {stoch_iqm:.3} [{s_lo:.3}, {s_hi:.3}] < deterministic {det_iqm:.3} [{d_lo:.3}, {d_hi:.3}] at size {size}"
    );
    pass(
        "stochasticity direction",
        format!(
            "size {size}: stochastic IQM {stoch_iqm:.3} [{s_lo:.3}, {s_hi:.3}] >= deterministic {det_iqm:.3} [{d_lo:.3}, {d_hi:.3}], {:.0?}",
            start.elapsed()
        ),
    );
}

// ---------------------------------------------------------------- c11

#[test]
fn c11_fitness_log_is_worker_count_invariant() {
    fn run_with_threads(n: usize) -> Vec<FitnessRow> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| {
            let cfg = EsConfig {
                population: 4,
                sigma: 0.05,
                generations: 2,
                eval_freq: 2,
                antithetic_tasks: true,
                ..EsConfig::default()
            };
            struct SmallEval;
            impl Evaluator for SmallEval {
                fn evaluate(&self, meta: &[f64], task_seed: u64) -> Result<f64> {
                    let env = DeepSea::new(DeepSeaParams::standard(4, task_seed).unwrap()).unwrap();
                    let layout =
                        AgentLayout::new(env.obs_dim(), env.n_actions(), 16, 2, Activation::Tanh);
                    let cfg = PpoConfig {
                        n_envs: 8,
                        n_steps: 8,
                        n_minibatch: 2,
                        n_epochs: 2,
                        total_steps: 8 * 8 * 4,
                        ..PpoConfig::default()
                    };
                    let mut params = init_agent(&layout, &mut stream_rng(task_seed, "agent-init", &[]));
                    let mut opt = OpenOptimizer::new(
                        meta.to_vec(),
                        OpenArch::standard(),
                        FeatureMask::default(),
                        true,
                        &layout,
                    )?;
                    Ok(train(&cfg, &env, &mut params, &mut opt, task_seed, false)?.final_mean_return)
                }
            }
            let arch = OpenArch::standard();
            let mut mean = meta_init(arch, &mut stream_rng(42, "meta-init", &[0]));
            mean.extend(meta_init(arch, &mut stream_rng(42, "meta-init", &[1])));
            let cfg2 = cfg.clone();
            let mut state = EsState::new(mean, &cfg2);
            meta_train(&cfg2, &SmallEval, &mut state, 42, |_, _| {}).unwrap().rows
        })
    }

    let a = run_with_threads(1);
    let b = run_with_threads(4);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.generation, y.generation);
        assert_eq!(x.member, y.member);
        assert_eq!(x.task_seed, y.task_seed);
        assert_eq!(x.raw_fitness.to_bits(), y.raw_fitness.to_bits(), "raw fitness differs");
        assert_eq!(x.shaped_fitness.to_bits(), y.shaped_fitness.to_bits(), "shaped fitness differs");
        assert_eq!(x.failed, y.failed);
    }
    pass("determinism", format!("{} fitness rows bitwise identical at 1 and 4 workers", a.len()));
}

// ---------------------------------------------------------------- c12

#[test]
fn c12_multitask_fitness_normalization() {
    let baselines = [0.8, 0.5, 1.2];
    let score = multitask_fitness(&baselines, &baselines).unwrap();
    assert_eq!(score, 1.0, "member matching baselines scores {score}");

    // Ranking across members is invariant to a common positive rescaling of
    // one environment's returns and baseline.
    let members = [[0.7, 0.3, 1.0], [0.9, 0.6, 0.4], [0.2, 0.55, 1.3]];
    let rank = |baselines: &[f64], scale: f64| {
        let b: Vec<f64> = baselines
            .iter()
            .enumerate()
            .map(|(j, &v)| if j == 1 { v * scale } else { v })
            .collect();
        let scores: Vec<f64> = members
            .iter()
            .map(|m| {
                let r: Vec<f64> = m
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| if j == 1 { v * scale } else { v })
                    .collect();
                multitask_fitness(&r, &b).unwrap()
            })
            .collect();
        rank_transform(&scores)
    };
    let base = rank(&baselines, 1.0);
    for scale in [0.25, 3.0, 117.0] {
        assert_eq!(rank(&baselines, scale), base, "ranking changed at scale {scale}");
    }
    pass("multi-task fitness", "baseline match scores 1.0; ranking scale-invariant".into());
}

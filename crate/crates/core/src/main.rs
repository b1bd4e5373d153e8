//! Command-line entry points: meta-train, train, eval, ablate, analyze.

use clap::{Args, Parser, Subcommand};
use open_rl::agent::{init_agent, AgentLayout, AgentParams};
use open_rl::analysis;
use open_rl::checkpoint::{Checkpoint, Provenance};
use open_rl::config::RunConfig;
use open_rl::env::Env;
use open_rl::es::{self, Evaluator};
use open_rl::optim::{meta_init, FeatureMask, OpenArch, OpenOptimizer, Optimizer};
use open_rl::ppo::{self, TrainResult};
use open_rl::rng::{stream_rng, stream_seed};
use open_rl::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "open-rl", version, about = "Meta-learned optimizers for reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train the learned optimizer with evolution strategies.
    MetaTrain(CommonArgs),
    /// Train agents with the configured optimizer over a seed battery.
    Train(CommonArgs),
    /// Train, then score the resulting agents over fresh episodes.
    Eval(CommonArgs),
    /// Meta-train and score each configured feature ablation.
    Ablate(CommonArgs),
    /// Emit analysis series from traces recorded by `train`.
    Analyze(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker thread limit override (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Checkpoint to resume meta-training from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e @ (Error::Config(_) | Error::Usage(_))) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    let (args, cmd): (&CommonArgs, fn(&RunConfig, &CommonArgs) -> Result<()>) = match &cli.command {
        Command::MetaTrain(a) => (a, cmd_meta_train),
        Command::Train(a) => (a, cmd_train),
        Command::Eval(a) => (a, cmd_eval),
        Command::Ablate(a) => (a, cmd_ablate),
        Command::Analyze(a) => (a, cmd_analyze),
    };
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut cfg = RunConfig::default();
            cfg.fill_defaults();
            cfg.validate()?;
            cfg
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("workers: {e}")))?;
    }
    std::fs::create_dir_all(&args.out)?;
    cmd(&cfg, args)
}

fn agent_layout(env: &dyn Env, cfg: &RunConfig) -> AgentLayout {
    AgentLayout::new(
        env.obs_dim(),
        env.n_actions(),
        cfg.agent.width,
        cfg.agent.n_hidden,
        cfg.agent.activation,
    )
}

/// Builds the configured optimizer for one agent. Learned optimizers come
/// from a checkpoint whose descriptor must agree with the config.
fn make_optimizer(cfg: &RunConfig, layout: &AgentLayout) -> Result<Box<dyn Optimizer>> {
    if cfg.optimizer.kind == "open" {
        let path = cfg
            .optimizer
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("optimizer.checkpoint required for kind = \"open\"".into()))?;
        let ckpt = Checkpoint::load(path)?;
        let want_mask = cfg.optimizer.feature_mask()?;
        if ckpt.mask != want_mask {
            return Err(Error::Config(format!(
                "checkpoint feature mask {:?} does not match configured mask {:?}",
                ckpt.mask, want_mask
            )));
        }
        let want_arch = cfg.optimizer.open_arch()?;
        if ckpt.arch != want_arch || ckpt.separated != cfg.optimizer.separated {
            return Err(Error::Config(format!(
                "checkpoint architecture ({:?}, separated={}) does not match config ({:?}, separated={})",
                ckpt.arch, ckpt.separated, want_arch, cfg.optimizer.separated
            )));
        }
        Ok(Box::new(OpenOptimizer::new(ckpt.meta, ckpt.arch, ckpt.mask, ckpt.separated, layout)?))
    } else {
        Ok(Box::new(cfg.optimizer.build_baseline(layout.total())?))
    }
}

/// One inner training run: task draw, fresh agent, fresh optimizer.
fn run_one_seed(cfg: &RunConfig, seed_index: u64, record_trace: bool) -> Result<(AgentParams, TrainResult)> {
    let task_seed = stream_seed(cfg.seed, "task", &[seed_index]);
    let env = cfg.env.build(task_seed)?;
    let layout = agent_layout(env.as_ref(), cfg);
    let mut params = init_agent(&layout, &mut stream_rng(cfg.seed, "agent-init", &[seed_index]));
    let mut opt = make_optimizer(cfg, &layout)?;
    let run_seed = stream_seed(cfg.seed, "run", &[seed_index]);
    let result = ppo::train(&cfg.ppo, env.as_ref(), &mut params, opt.as_mut(), run_seed, record_trace)?;
    Ok((params, result))
}

fn write_train_csv(path: &Path, rows: &[ppo::UpdateRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "update_index,tp,bp,mean_return,policy_loss,value_loss,entropy,dormancy_actor,dormancy_critic,update_rms,noise_rms"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.update_index,
            r.tp,
            r.bp,
            r.mean_return,
            r.policy_loss,
            r.value_loss,
            r.entropy,
            r.dormancy_actor,
            r.dormancy_critic,
            r.update_rms,
            r.noise_rms
        )?;
    }
    Ok(())
}

fn write_summary(path: &Path, finals: &[f64]) -> Result<()> {
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "n_seeds,mean,iqm")?;
    writeln!(f, "{},{},{}", finals.len(), mean, analysis::iqm(finals))?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: &CommonArgs) -> Result<()> {
    let mut finals = Vec::with_capacity(cfg.n_seeds);
    for i in 0..cfg.n_seeds as u64 {
        let (params, result) = run_one_seed(cfg, i, cfg.record_trace)?;
        write_train_csv(&args.out.join(format!("train_seed{i}.csv")), &result.rows)?;
        if cfg.record_trace {
            let header = analysis::TraceHeader {
                obs_dim: params.layout.obs_dim,
                n_actions: params.layout.n_actions,
                width: params.layout.width,
                n_hidden: params.layout.n_hidden,
                activation: params.layout.activation,
            };
            analysis::save_trace(&args.out.join(format!("trace_seed{i}.bin")), &header, &result.trace)?;
        }
        println!("seed {i}: final mean return {}", result.final_mean_return);
        finals.push(result.final_mean_return);
    }
    write_summary(&args.out.join("summary.csv"), &finals)
}

fn cmd_eval(cfg: &RunConfig, args: &CommonArgs) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(args.out.join("eval.csv"))?);
    writeln!(f, "seed,episodes,mean_return")?;
    let mut means = Vec::with_capacity(cfg.n_seeds);
    for i in 0..cfg.n_seeds as u64 {
        let (params, _) = run_one_seed(cfg, i, false)?;
        let task_seed = stream_seed(cfg.seed, "task", &[i]);
        let env = cfg.env.build(task_seed)?;
        let eval_seed = stream_seed(cfg.seed, "eval", &[i]);
        let returns = ppo::evaluate(&params, env.as_ref(), cfg.eval_episodes, eval_seed)?;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        writeln!(f, "{i},{},{mean}", returns.len())?;
        println!("seed {i}: eval mean return {mean}");
        means.push(mean);
    }
    drop(f);
    write_summary(&args.out.join("eval_summary.csv"), &means)
}

/// Scores one candidate meta-vector by running the full inner loop on the
/// task drawn from `task_seed` and reporting the final mean return.
struct PpoEvaluator<'a> {
    cfg: &'a RunConfig,
    arch: OpenArch,
    mask: FeatureMask,
    separated: bool,
}

impl Evaluator for PpoEvaluator<'_> {
    fn evaluate(&self, meta: &[f64], task_seed: u64) -> Result<f64> {
        let env = self.cfg.env.build(task_seed)?;
        let layout = agent_layout(env.as_ref(), self.cfg);
        let mut params = init_agent(&layout, &mut stream_rng(task_seed, "agent-init", &[]));
        let mut opt = OpenOptimizer::new(meta.to_vec(), self.arch, self.mask, self.separated, &layout)?;
        let result = ppo::train(&self.cfg.ppo, env.as_ref(), &mut params, &mut opt, task_seed, false)?;
        Ok(result.final_mean_return)
    }
}

fn initial_mean(cfg: &RunConfig, arch: OpenArch) -> Vec<f64> {
    let mut mean = meta_init(arch, &mut stream_rng(cfg.seed, "meta-init", &[0]));
    if cfg.optimizer.separated {
        mean.extend(meta_init(arch, &mut stream_rng(cfg.seed, "meta-init", &[1])));
    }
    mean
}

fn write_fitness_log(path: &Path, rows: &[es::FitnessRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "generation,member,task_seed,raw_fitness,shaped_fitness,failed")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.generation, r.member, r.task_seed, r.raw_fitness, r.shaped_fitness, r.failed
        )?;
    }
    Ok(())
}

fn meta_train_impl(cfg: &RunConfig, args: &CommonArgs, mask: FeatureMask, out: &Path) -> Result<Checkpoint> {
    let arch = cfg.optimizer.open_arch()?;
    let separated = cfg.optimizer.separated;
    let mut state = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.es_state
                .ok_or_else(|| Error::Config(format!("{} has no outer-loop state to resume", path.display())))?
        }
        None => es::EsState::new(initial_mean(cfg, arch), &cfg.es),
    };
    let evaluator = PpoEvaluator { cfg, arch, mask, separated };
    let result = es::meta_train(&cfg.es, &evaluator, &mut state, cfg.seed, |s, fit| {
        println!("generation {}: population mean fitness {fit}", s.generation);
    })?;

    write_fitness_log(&out.join("fitness_log.csv"), &result.rows)?;
    let make_ckpt = |mean: Vec<f64>, generation: u64, fitness: f64, es_state: Option<es::EsState>| Checkpoint {
        arch,
        mask,
        separated,
        meta: mean,
        es_state,
        provenance: Provenance { config_hash: cfg.hash(), generation, validation_fitness: fitness },
    };
    let mut best: Option<(f64, Checkpoint)> = None;
    for (generation, fitness, mean) in &result.archive {
        let ckpt = make_ckpt(mean.clone(), *generation, *fitness, None);
        ckpt.save(&out.join(format!("gen_{generation}.ckpt")))?;
        if best.as_ref().map_or(true, |(bf, _)| fitness > bf) {
            best = Some((*fitness, ckpt));
        }
    }
    let (_, best_ckpt) = best.expect("archive is never empty");
    best_ckpt.save(&out.join("best.ckpt"))?;
    let last_fitness = result.archive.last().map(|(_, f, _)| *f).unwrap_or(f64::NEG_INFINITY);
    let latest = make_ckpt(
        result.state.mean.clone(),
        result.state.generation,
        last_fitness,
        Some(result.state.clone()),
    );
    latest.save(&out.join("latest.ckpt"))?;
    Ok(best_ckpt)
}

fn cmd_meta_train(cfg: &RunConfig, args: &CommonArgs) -> Result<()> {
    let mask = cfg.optimizer.feature_mask()?;
    meta_train_impl(cfg, args, mask, &args.out)?;
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, args: &CommonArgs) -> Result<()> {
    if cfg.ablations.is_empty() {
        println!("no ablations configured; nothing to do");
        return Ok(());
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(args.out.join("ablation.csv"))?);
    writeln!(f, "mask,seed,final_return,dormancy_actor,dormancy_critic")?;
    for name in &cfg.ablations {
        let mask = FeatureMask::by_name(name)?;
        let out = args.out.join(name);
        std::fs::create_dir_all(&out)?;
        let ckpt = meta_train_impl(cfg, args, mask, &out)?;
        let ckpt_path = out.join("best.ckpt");
        let _ = ckpt;

        // Score the learned optimizer over the seed battery.
        let mut eval_cfg = cfg.clone();
        eval_cfg.optimizer.kind = "open".into();
        eval_cfg.optimizer.mask = name.clone();
        eval_cfg.optimizer.checkpoint = Some(ckpt_path);
        for i in 0..cfg.n_seeds as u64 {
            let (_, result) = run_one_seed(&eval_cfg, i, false)?;
            let last = result.rows.last().expect("at least one update");
            writeln!(
                f,
                "{name},{i},{},{},{}",
                result.final_mean_return, last.dormancy_actor, last.dormancy_critic
            )?;
        }
        println!("ablation {name}: done");
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, args: &CommonArgs) -> Result<()> {
    let mut found = false;
    for i in 0..cfg.n_seeds as u64 {
        let trace_path = args.out.join(format!("trace_seed{i}.bin"));
        if !trace_path.exists() {
            continue;
        }
        found = true;
        let (header, trace) = analysis::load_trace(&trace_path)?;
        let layout = AgentLayout::new(
            header.obs_dim,
            header.n_actions,
            header.width,
            header.n_hidden,
            header.activation,
        );
        let actor_mask = layout.actor_mask();

        let cos = analysis::cosine_similarity_series(&trace, cfg.stride);
        let channel_names: Vec<String> = std::iter::once("grad".to_string())
            .chain(open_rl::optim::MOMENTUM_BETAS.iter().map(|b| format!("m{b}")))
            .collect();
        for (name, series) in channel_names.iter().zip(&cos) {
            analysis::write_series_csv(&args.out.join(format!("cosine_{name}_seed{i}.csv")), series)?;
        }
        let mag = analysis::normalized_update_magnitude(&trace, cfg.stride);
        analysis::write_series_csv(&args.out.join(format!("update_magnitude_seed{i}.csv")), &mag)?;
        let sto = analysis::normalized_stochasticity(&trace, &actor_mask, cfg.stride);
        analysis::write_series_csv(&args.out.join(format!("stochasticity_seed{i}.csv")), &sto)?;
        println!("seed {i}: wrote {} series", cos.len() + 2);
    }
    if !found {
        return Err(Error::Usage(format!(
            "no traces recorded in {} (run `train` with record_trace = true)",
            args.out.display()
        )));
    }
    Ok(())
}

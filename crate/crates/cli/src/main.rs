//! Command-line front end: training, evaluation, gate analysis, the ordering
//! experiment, single-scenario demos and formation runs.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ga3c_core::analysis::{
    gate_scenes, ordering_experiment, write_gate_csv, OrderingExperimentConfig,
};
use ga3c_core::harness::{evaluate, load_goals, run_episode, run_formation, FormationTask};
use ga3c_core::network::load_checkpoint;
use ga3c_core::policies::PolicyContext;
use ga3c_core::training::{initialized_network, run_paths, trainer_loop, Phase, TrainerConfig};
use ga3c_core::{NetworkParams, OrderingStrategy, PolicyTag, ScenarioSpec, SimConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ga3c",
    version,
    about = "Multiagent collision avoidance with an LSTM actor-critic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Supervised initialization followed by two-phase actor-critic training.
    Train(TrainArgs),
    /// Evaluate a policy on a seeded set of random test cases.
    Evaluate(EvaluateArgs),
    /// Write input-gate attributions for random scenes to CSV.
    AnalyzeGates(GateArgs),
    /// Train once per neighbor ordering and write each rolling-reward curve.
    OrderingExperiment(OrderingArgs),
    /// Run one scenario file and write its trajectory CSV.
    Demo(DemoArgs),
    /// Drive a group of agents through a sequence of goal formations.
    Formation(FormationArgs),
}

#[derive(Args, Debug, Clone)]
struct InitArgs {
    /// Samples in the synthesized initialization dataset.
    #[arg(long, default_value_t = 10_000)]
    init_samples: usize,
    /// Supervised initialization epochs.
    #[arg(long, default_value_t = 20)]
    init_epochs: usize,
    /// LSTM hidden size.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Width of each fully connected layer.
    #[arg(long, default_value_t = 256)]
    fc: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 20_000)]
    phase1_episodes: u64,
    #[arg(long, default_value_t = 0)]
    phase2_episodes: u64,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = OrderingStrategy::ClosestLast)]
    ordering: OrderingStrategy,
    #[arg(long, default_value_t = 2e-5)]
    learning_rate: f64,
    /// Save a checkpoint every this many episodes (0 disables).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    #[command(flatten)]
    init: InitArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// One of ga3c, cadrl, noncoop, zero.
    #[arg(long)]
    policy: PolicyTag,
    #[arg(long)]
    n_agents: usize,
    #[arg(long, default_value_t = 500)]
    cases: usize,
    /// Required by the learned policies.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = OrderingStrategy::ClosestLast)]
    ordering: OrderingStrategy,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long, default_value_t = 4)]
    n_agents: usize,
    /// Steps simulated before each scene is observed.
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = OrderingStrategy::ClosestLast)]
    ordering: OrderingStrategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OrderingArgs {
    /// Phase-one episodes per ordering.
    #[arg(long, default_value_t = 20_000)]
    episodes: u64,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    init: InitArgs,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long)]
    scenario_file: PathBuf,
    /// Required when the scenario contains learned-policy agents.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trajectory_out: PathBuf,
}

#[derive(Args, Debug)]
struct FormationArgs {
    /// JSON list of formations, each a list of [x, y] goals.
    #[arg(long)]
    goals_file: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = PolicyTag::Ga3c)]
    policy: PolicyTag,
    #[arg(long, default_value_t = 0.25)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for per-formation trajectories and a summary.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::AnalyzeGates(a) => analyze_gates(a),
        Command::OrderingExperiment(a) => ordering(a),
        Command::Demo(a) => demo(a),
        Command::Formation(a) => formation(a),
    }
}

fn load_net(path: &Path) -> Result<NetworkParams> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_optional(path: Option<&PathBuf>) -> Result<Option<NetworkParams>> {
    path.map(|p| load_net(p)).transpose()
}

fn trainer_config(init: &InitArgs, seed: u64, workers: usize) -> TrainerConfig {
    let mut cfg = TrainerConfig {
        seed,
        workers,
        ..TrainerConfig::default()
    };
    cfg.network.hidden = init.hidden;
    cfg.network.fc = init.fc;
    cfg.supervised.samples = init.init_samples;
    cfg.supervised.epochs = init.init_epochs;
    cfg
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = trainer_config(&a.init, a.seed, a.workers);
    cfg.phase1 = Phase {
        episodes: a.phase1_episodes,
        ..cfg.phase1
    };
    cfg.phase2 = Phase {
        episodes: a.phase2_episodes,
        ..cfg.phase2
    };
    cfg.ordering = a.ordering;
    cfg.learning_rate = a.learning_rate;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.validate()?;
    eprintln!(
        "initializing network from {} synthesized samples",
        cfg.supervised.samples
    );
    let net = initialized_network(&cfg)?;
    let total = cfg.total_episodes();
    let step = (total / 20).max(1);
    let mut report = |done: u64, rolling: Option<f64>| {
        if done % step < cfg.workers as u64 || done == total {
            match rolling {
                Some(r) => eprintln!("episode {done}/{total}  rolling reward {r:.4}"),
                None => eprintln!("episode {done}/{total}"),
            }
        }
    };
    let outcome = trainer_loop(&cfg, net, Some(&a.out_dir), Some(&mut report))?;
    let (_, final_ckpt, curve) = run_paths(&a.out_dir);
    eprintln!(
        "done: {} episodes, {} updates; wrote {} and {}",
        outcome.episodes,
        outcome.updates,
        final_ckpt.display(),
        curve.display()
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    if a.cases == 0 || a.n_agents == 0 {
        bail!("--cases and --n-agents must be positive");
    }
    let net = load_optional(a.checkpoint.as_ref())?;
    let mut ctx = PolicyContext::new(net.as_ref());
    ctx.ordering = a.ordering;
    let sim = SimConfig {
        action_set: net
            .as_ref()
            .map_or(SimConfig::default().action_set, |n| n.meta.action_set),
        ..SimConfig::default()
    };
    let report = evaluate(a.policy, a.n_agents, a.cases, &sim, &ctx, a.seed)?;
    let json = report.to_json();
    match a.report {
        Some(path) => {
            fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn analyze_gates(a: GateArgs) -> Result<()> {
    let net = load_net(&a.checkpoint)?;
    let rows = gate_scenes(&net, a.scenes, a.n_agents, a.warmup, a.ordering, a.seed)?;
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_gate_csv(&rows, file)?;
    Ok(())
}

fn ordering(a: OrderingArgs) -> Result<()> {
    let mut trainer = trainer_config(&a.init, a.seed, a.workers);
    trainer.phase1.episodes = a.episodes;
    trainer.phase2.episodes = 0;
    let cfg = OrderingExperimentConfig {
        trainer,
        ..OrderingExperimentConfig::default()
    };
    for run in ordering_experiment(&cfg, Some(&a.out_dir))? {
        let last = run
            .curve
            .last()
            .map_or("n/a".to_string(), |r| format!("{r:.4}"));
        eprintln!("{}: final rolling reward {last}", run.strategy);
    }
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let spec = ScenarioSpec::load(&a.scenario_file)?;
    let net = load_optional(a.checkpoint.as_ref())?;
    let sim = SimConfig {
        action_set: net
            .as_ref()
            .map_or(SimConfig::default().action_set, |n| n.meta.action_set),
        ..SimConfig::default()
    };
    let log = run_episode(&spec, &sim, &PolicyContext::new(net.as_ref()))?;
    log.save_csv(&a.trajectory_out)?;
    for (i, status) in log.terminal.iter().enumerate() {
        eprintln!("agent {i}: {}", status.as_str());
    }
    Ok(())
}

fn formation(a: FormationArgs) -> Result<()> {
    let formations = load_goals(&a.goals_file)?;
    let net = load_optional(a.checkpoint.as_ref())?;
    let task = FormationTask {
        radius: a.radius,
        ..FormationTask::new(formations)
    };
    let sim = SimConfig {
        action_set: net
            .as_ref()
            .map_or(SimConfig::default().action_set, |n| n.meta.action_set),
        ..SimConfig::default()
    };
    let runs = run_formation(
        &task,
        a.policy,
        &sim,
        &PolicyContext::new(net.as_ref()),
        a.seed,
    )?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut summary = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        let path = a.out.join(format!("formation_{k:03}.csv"));
        run.log.save_csv(&path)?;
        summary.push(serde_json::json!({
            "formation": k,
            "assignment": run.assignment,
            "completed": run.completed,
            "steps": run.log.steps,
            "trajectory": path.file_name().map(|f| f.to_string_lossy().into_owned()),
        }));
        if !run.completed {
            eprintln!("formation {k} did not complete; continuing from the final positions");
        }
    }
    let path = a.out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mrta_core::eval::{
    run_eval, run_trial_from, sweep, write_communication, write_priorities, write_summaries,
    write_trajectory, write_trials, EvalSpec, MetricsSummary, SweepGrid, TrialLog,
};
use mrta_core::maddpg::{
    load_actor_set, run_training, save_checkpoint, ActorSet, CheckpointManifest, EpisodeReturn,
};
use mrta_core::neural::WEIGHT_FORMAT_VERSION;
use mrta_core::plot::{render, PlotKind};
use mrta_core::world::WorldState;
use mrta_core::{Method, RunConfig};

mod manifest;

use manifest::{config_hash, default_dir, write_atomic, RunManifest};

#[derive(Parser)]
#[command(name = "mrta", version, about = "Cooperative transport task allocation: training, evaluation and plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train actors and critics; writes checkpoints, rewards.csv and a manifest.
    Train(TrainArgs),
    /// Evaluate one method on one (N, M, P) cell.
    Eval(EvalArgs),
    /// Evaluate methods over a grid of cells.
    Sweep(SweepArgs),
    /// Render a CSV produced by train or demo as SVG.
    Plot(PlotArgs),
    /// Run one episode and log trajectories, priorities and messages.
    Demo(DemoArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: $MRTA_OUTPUT_ROOT/train-<time>]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Method>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(clap::Args)]
struct CellArgs {
    /// Number of robots
    #[arg(long, short = 'n', default_value_t = 3)]
    robots: usize,
    /// Number of objects
    #[arg(long, short = 'm', default_value_t = 6)]
    objects: usize,
    /// Probability that an object is heavy
    #[arg(long, default_value_t = 0.5)]
    heavy: f64,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    method: Method,
    /// Checkpoint directory, or a training run directory
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    cell: CellArgs,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = mrta_core::eval::DEFAULT_EVAL_SEED)]
    seed0: u64,
    /// Summary CSV path [default: $MRTA_OUTPUT_ROOT/eval-<time>/summary.csv]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one row per trial here
    #[arg(long)]
    trials_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated methods
    #[arg(long, value_delimiter = ',', default_values_t = Method::SCRIPTED)]
    methods: Vec<Method>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(clap::Args)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    /// reward-curves | trajectories | priorities
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct DemoArgs {
    #[arg(long, default_value_t = Method::NearestOne)]
    method: Method,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    cell: CellArgs,
    #[arg(long, default_value_t = mrta_core::eval::DEFAULT_EVAL_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn load_actors(method: Method, checkpoint: Option<&Path>) -> Result<Option<ActorSet>> {
    if !method.is_learned() {
        return Ok(None);
    }
    let Some(dir) = checkpoint else {
        bail!("method {method} needs --checkpoint");
    };
    let dir = if dir.join("final").is_dir() {
        dir.join("final")
    } else {
        dir.to_path_buf()
    };
    let set = load_actor_set(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok(Some(set))
}

fn curve_csv(curve: &[EpisodeReturn]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "R1", "R2"])?;
    for e in curve {
        w.write_record([e.episode.to_string(), e.r1.to_string(), e.r2.to_string()])?;
    }
    Ok(w.into_inner()?)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(Some(&args.config))?;
    if let Some(e) = args.episodes {
        config.train.episodes = e;
    }
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
    if let Some(m) = args.variant {
        config.train.variant = m
            .variant()
            .with_context(|| format!("{m} is not a learned method"))?;
    }
    if let Some(c) = args.checkpoint_every {
        config.train.checkpoint_every = c;
    }
    config.world.validate()?;
    config.train.validate()?;
    let out = args.out.unwrap_or_else(|| default_dir("train"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let hash = config_hash(&config);
    let ckpt_manifest = |episode: usize| CheckpointManifest {
        run_seed: config.train.seed,
        episode,
        config_hash: hash.clone(),
        variant: config.train.variant,
        n_agents: config.world.n_robots,
        k_neighbors: config.world.k_neighbors,
        hidden_layers: config.train.hidden_layers,
        hidden_units: config.train.hidden_units,
        weight_format_version: WEIGHT_FORMAT_VERSION,
    };
    let checkpoints = out.join("checkpoints");
    let outcome = run_training(&config.world, &config.train, |learner, episode| {
        save_checkpoint(
            &checkpoints.join(format!("episode-{episode:08}")),
            learner,
            &ckpt_manifest(episode),
        )
    })?;
    save_checkpoint(&out.join("final"), &outcome.learner, &ckpt_manifest(config.train.episodes))?;
    write_atomic(&out.join("rewards.csv"), &curve_csv(&outcome.curve)?)?;

    let mut manifest = RunManifest::new(&config, config.train.seed);
    manifest.outputs = vec!["rewards.csv".into(), "final".into()];
    if checkpoints.is_dir() {
        manifest.outputs.push("checkpoints".into());
    }
    manifest.write(&out)?;
    println!("trained {} episodes, outputs in {}", config.train.episodes, out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let config = load_config(args.config.as_deref())?;
    let actors = load_actors(args.method, args.checkpoint.as_deref())?;
    let spec = EvalSpec {
        n_robots: args.cell.robots,
        n_objects: args.cell.objects,
        heavy_proportion: args.cell.heavy,
        n_trials: args.trials,
        seed0: args.seed0,
    };
    let (summary, trials) = run_eval(args.method, actors.as_ref(), &config.world, spec, args.jobs)?;
    let out = args.out.unwrap_or_else(|| default_dir("eval").join("summary.csv"));
    let mut buf = Vec::new();
    write_summaries(&mut buf, std::slice::from_ref(&summary))?;
    write_atomic(&out, &buf)?;
    let mut outputs = vec![out.display().to_string()];
    if let Some(path) = &args.trials_out {
        let world = config.world.for_evaluation(spec.n_robots, spec.n_objects, spec.heavy_proportion);
        let mut buf = Vec::new();
        write_trials(&mut buf, args.method, &world, spec.heavy_proportion, &trials)?;
        write_atomic(path, &buf)?;
        outputs.push(path.display().to_string());
    }
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut manifest = RunManifest::new(&config, args.seed0);
    manifest.outputs = outputs;
    manifest.write(dir)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &MetricsSummary) {
    let tt = s.tt_mean.map_or("NA".to_string(), |t| format!("{t:.1}"));
    println!(
        "{} N={} M={} P={}: SR {:.2}, TT {tt}, t_a {:.1} over {} trials",
        s.method, s.n_robots, s.n_objects, s.heavy_proportion, s.sr, s.t_a_mean, s.n_trials
    );
}

fn sweep_cmd(args: SweepArgs) -> Result<bool> {
    let config = load_config(Some(&args.config))?;
    let grid: &SweepGrid = &config.sweep;
    if grid.trials == 0 {
        bail!("sweep.trials must be at least 1");
    }
    let actors = match args.methods.iter().find(|m| m.is_learned()) {
        Some(&m) => load_actors(m, args.checkpoint.as_deref())?,
        None => None,
    };
    let out = args.out.unwrap_or_else(|| default_dir("sweep"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let cells = sweep(&args.methods, grid, &config.world, actors.as_ref(), args.jobs);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for cell in cells {
        match cell.result {
            Ok(s) => {
                print_summary(&s);
                rows.push(s);
            }
            Err(e) => {
                let msg = format!(
                    "{} ({},{},{}): {e}",
                    cell.method, cell.spec.n_robots, cell.spec.n_objects, cell.spec.heavy_proportion
                );
                eprintln!("cell failed: {msg}");
                failures.push(msg);
            }
        }
    }
    let mut buf = Vec::new();
    write_summaries(&mut buf, &rows)?;
    write_atomic(&out.join("results.csv"), &buf)?;
    let mut manifest = RunManifest::new(&config, grid.seed0);
    manifest.outputs = vec!["results.csv".into()];
    manifest.failures = failures;
    manifest.write(&out)?;
    Ok(manifest.failures.is_empty())
}

fn plot(args: PlotArgs) -> Result<()> {
    let kind: PlotKind = args.kind.parse()?;
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let svg = render(kind, &text).with_context(|| format!("{}", args.input.display()))?;
    write_atomic(&args.out, svg.as_bytes())
}

fn demo(args: DemoArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let actors = load_actors(args.method, args.checkpoint.as_deref())?;
    let world_cfg = config
        .world
        .for_evaluation(args.cell.robots, args.cell.objects, args.cell.heavy);
    world_cfg.validate()?;
    let world = WorldState::new(&world_cfg, args.seed)?;
    let mut log = TrialLog::default();
    let result = run_trial_from(args.method, actors.as_ref(), world, args.seed, Some(&mut log))?;
    let out = args.out.unwrap_or_else(|| default_dir("demo"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut buf = Vec::new();
    write_trajectory(&mut buf, &log.trajectory)?;
    write_atomic(&out.join("trajectory.csv"), &buf)?;
    buf.clear();
    write_priorities(&mut buf, &log.priorities)?;
    write_atomic(&out.join("priorities.csv"), &buf)?;
    buf.clear();
    write_communication(&mut buf, &log.communication)?;
    write_atomic(&out.join("communication.csv"), &buf)?;
    buf.clear();
    write_trials(&mut buf, args.method, &world_cfg, args.cell.heavy, std::slice::from_ref(&result))?;
    write_atomic(&out.join("trial.csv"), &buf)?;

    let mut manifest = RunManifest::new(&config, args.seed);
    manifest.outputs = ["trajectory.csv", "priorities.csv", "communication.csv", "trial.csv"]
        .map(String::from)
        .to_vec();
    manifest.write(&out)?;
    let tt = result.transport_time.map_or("NA".to_string(), |t| format!("{t:.1}"));
    println!(
        "{} seed {}: success {}, TT {tt}, {} messages, outputs in {}",
        args.method,
        args.seed,
        result.success,
        result.messages,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Plot(a) => plot(a).map(|_| true),
        Command::Demo(a) => demo(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some sweep cells failed; see manifest.json");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

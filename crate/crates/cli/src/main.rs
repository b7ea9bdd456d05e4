//! `swm`: record datasets, evaluate policies, list environments, inspect
//! datasets.
//!
//! Datasets live under `$SWM_HOME` when set, else under the per-user data
//! directory. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use swm::envs::{self, DEFAULT_IMAGE_SIZE, TWO_ROOM_ID};
use swm::planning::{Bounds, CemParams, GradParams, MppiParams, SimulatorCostModel};
use swm::policy::{DatasetReplayPolicy, RandomPolicy, TwoRoomExpert, ZeroPolicy};
use swm::{
    evaluate, evaluate_from_dataset, Dataset, EvalConfig, MpcPolicy, OfflineConfig, PlanConfig, Solver,
    VariationRequest, World, WorldConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "swm",
    version,
    about = "Simulated worlds with factors of variation: record, evaluate, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List registered environments and their factors of variation.
    Envs,
    /// Roll out a policy and store the episodes as a dataset.
    Record(RecordArgs),
    /// Evaluate a policy online, or offline against a recorded dataset.
    Evaluate(EvaluateArgs),
    /// Print a summary of a stored dataset.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct VariationArgs {
    /// Variation selector: `all`, a group such as `agent`, or a leaf such as
    /// `block.color`. Repeatable.
    #[arg(long = "vary", value_name = "SELECTOR")]
    vary: Vec<String>,
    /// Pin a leaf to a value, e.g. `agent.color=255,0,0`. Repeatable.
    #[arg(long = "set", value_name = "LEAF=VALUE")]
    set: Vec<String>,
    /// JSON file with `{"variation": [...], "variation_values": {...}}`,
    /// merged with --vary and --set.
    #[arg(long, value_name = "FILE")]
    options: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecordArgs {
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    num_envs: usize,
    /// Dataset name; defaults to a slug of the env id.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_enum, default_value_t = RecordPolicy::Random)]
    policy: RecordPolicy,
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    image_size: usize,
    /// Episode truncation length; defaults to the env's own limit.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Replace an existing dataset with the same name.
    #[arg(long)]
    overwrite: bool,
    #[command(flatten)]
    variation: VariationArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RecordPolicy {
    Random,
    Zero,
    /// Scripted navigator (TwoRoom only).
    Expert,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Env id; offline runs default to the dataset's env.
    #[arg(long)]
    env: Option<String>,
    /// Evaluate offline on start/goal pairs drawn from this dataset.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    num_envs: usize,
    /// Step budget per episode.
    #[arg(long, default_value_t = swm::eval::DEFAULT_BUDGET)]
    budget: usize,
    /// Offline only: largest step gap between start and goal frames.
    #[arg(long, default_value_t = 25)]
    max_gap: usize,
    #[arg(long, value_enum, default_value_t = EvalPolicy::Cem)]
    policy: EvalPolicy,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    #[arg(long, default_value_t = 5)]
    receding_horizon: usize,
    #[arg(long)]
    no_warm_start: bool,
    /// Candidate sequences per solver iteration (CEM, MPPI).
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Solver iterations (gradient steps for `grad`); solver default if unset.
    #[arg(long)]
    iterations: Option<usize>,
    /// CEM elite fraction.
    #[arg(long)]
    elite_fraction: Option<f64>,
    /// Render size; offline runs default to the dataset's frame size.
    #[arg(long)]
    image_size: Option<usize>,
    /// Write the full JSON report here.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[command(flatten)]
    variation: VariationArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalPolicy {
    /// MPC with the cross-entropy method over simulator rollouts.
    Cem,
    /// MPC with MPPI over simulator rollouts.
    Mppi,
    /// MPC with gradient descent (finite differences) over simulator rollouts.
    Grad,
    /// Scripted navigator (TwoRoom only).
    Expert,
    Random,
    Zero,
    /// Replays the recorded actions between start and goal (offline only).
    Replay,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Dataset name under the dataset root.
    name: String,
    /// Also list every episode.
    #[arg(long)]
    verbose: bool,
}

/// Argument problems found after parsing; reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn data_root() -> PathBuf {
    if let Some(home) = std::env::var_os("SWM_HOME").filter(|v| !v.is_empty()) {
        return PathBuf::from(home);
    }
    dirs::data_dir()
        .map(|d| d.join("swm"))
        .unwrap_or_else(|| PathBuf::from("swm-data"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = data_root();
    eprintln!("dataset root: {}", root.display());
    let mut out = String::new();
    let result = run(cli.command, &root, &mut out);
    emit(&out);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
            eprintln!("error: {line}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Writes buffered stdout; a reader that hung up early is not an error.
fn emit(out: &str) {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            eprintln!("error: writing output: {e}")
        }
        _ => {}
    }
}

fn run(command: Command, root: &Path, out: &mut String) -> Result<()> {
    match command {
        Command::Envs => list_envs(out),
        Command::Record(args) => record(args, root, out),
        Command::Evaluate(args) => evaluate_cmd(args, root, out),
        Command::Inspect(args) => inspect(args, root, out),
    }
}

fn list_envs(out: &mut String) -> Result<()> {
    for id in envs::registered_ids() {
        let env = envs::make(id, swm::EnvConfig { image_size: 1 })?;
        let space = env.variation_space();
        writeln!(out, "{id} ({} FoVs)", space.len())?;
        for name in space.names() {
            let domain = space.domain(&name).expect("listed leaf");
            writeln!(out, "  {name:<24} {domain}")?;
        }
    }
    Ok(())
}

fn check_env(id: &str) -> Result<()> {
    if !envs::registered_ids().contains(&id) {
        return Err(usage(format!(
            "unknown env `{id}`; registered: {}",
            envs::registered_ids().join(", ")
        )));
    }
    Ok(())
}

/// Builds the variation request from --options, --vary and --set.
fn variation_request(args: &VariationArgs, env_id: &str) -> Result<VariationRequest> {
    let mut request = match &args.options {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            VariationRequest::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => VariationRequest::default(),
    };
    request.variation.extend(args.vary.iter().cloned());
    let env = envs::make(env_id, swm::EnvConfig { image_size: 1 })?;
    let space = env.variation_space();
    for pair in &args.set {
        let (leaf, text) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects LEAF=VALUE, got `{pair}`")))?;
        let domain = space
            .domain(leaf)
            .ok_or_else(|| usage(format!("unknown leaf `{leaf}`; valid: {}", space.names().join(", "))))?;
        let value = domain.parse_value(leaf, text).map_err(|e| usage(e.to_string()))?;
        request.variation_values.insert(leaf.to_string(), value);
    }
    request.check(space).map_err(|e| usage(e.to_string()))?;
    Ok(request)
}

fn default_name(env_id: &str) -> String {
    env_id.trim_start_matches("swm/").to_lowercase().replace('/', "-")
}

fn record(args: RecordArgs, root: &Path, out: &mut String) -> Result<()> {
    check_env(&args.env)?;
    if args.episodes == 0 || args.num_envs == 0 {
        return Err(usage("--episodes and --num-envs must be at least 1"));
    }
    if args.policy == RecordPolicy::Expert && args.env != TWO_ROOM_ID {
        return Err(usage(format!("--policy expert is only available for {TWO_ROOM_ID}")));
    }
    let request = variation_request(&args.variation, &args.env)?;
    let config = WorldConfig {
        image_size: args.image_size,
        max_steps: args.max_steps,
    };
    let mut world = World::with_config(&args.env, args.num_envs, config)?;
    match args.policy {
        RecordPolicy::Random => world.set_policy(RandomPolicy::new(args.seed)),
        RecordPolicy::Zero => world.set_policy(ZeroPolicy),
        RecordPolicy::Expert => world.set_policy(TwoRoomExpert::new()),
    }
    let name = args.name.unwrap_or_else(|| default_name(&args.env));
    std::fs::create_dir_all(root).with_context(|| format!("creating dataset root {}", root.display()))?;
    let manifest = world.record_dataset(root, &name, args.episodes, args.seed, &request, args.overwrite)?;
    writeln!(
        out,
        "recorded {} episodes ({} steps) to {}",
        manifest.episode_count,
        manifest.total_steps(),
        swm::datastore::dataset_dir(root, &name).display()
    )?;
    Ok(())
}

fn solver(args: &EvaluateArgs) -> Result<Option<Solver>> {
    if args.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    Ok(match args.policy {
        EvalPolicy::Cem => {
            let d = CemParams::default();
            Some(Solver::Cem(CemParams {
                num_samples: args.samples,
                iterations: args.iterations.unwrap_or(d.iterations),
                elite_fraction: args.elite_fraction.unwrap_or(d.elite_fraction),
                ..d
            }))
        }
        EvalPolicy::Mppi => {
            let d = MppiParams::default();
            Some(Solver::Mppi(MppiParams {
                num_samples: args.samples,
                iterations: args.iterations.unwrap_or(d.iterations),
                ..d
            }))
        }
        EvalPolicy::Grad => {
            let d = GradParams::default();
            Some(Solver::Grad(GradParams {
                steps: args.iterations.unwrap_or(d.steps),
                ..d
            }))
        }
        _ => None,
    })
}

fn evaluate_cmd(args: EvaluateArgs, root: &Path, out: &mut String) -> Result<()> {
    if args.episodes == 0 || args.num_envs == 0 {
        return Err(usage("--episodes and --num-envs must be at least 1"));
    }
    let dataset = match &args.dataset {
        Some(name) => Some(open_dataset(root, name)?),
        None => None,
    };
    let env_id = match (&args.env, &dataset) {
        (Some(e), _) => e.clone(),
        (None, Some(ds)) => ds.manifest().env_id.clone(),
        (None, None) => return Err(usage("--env is required for online evaluation")),
    };
    check_env(&env_id)?;
    if args.policy == EvalPolicy::Replay && dataset.is_none() {
        return Err(usage("--policy replay needs --dataset"));
    }
    if args.policy == EvalPolicy::Expert && env_id != TWO_ROOM_ID {
        return Err(usage(format!("--policy expert is only available for {TWO_ROOM_ID}")));
    }
    if dataset.is_some()
        && (!args.variation.vary.is_empty() || !args.variation.set.is_empty() || args.variation.options.is_some())
    {
        return Err(usage("--vary/--set/--options apply to online evaluation only"));
    }
    let plan_config = PlanConfig {
        horizon: args.horizon,
        receding_horizon: args.receding_horizon,
        warm_start: !args.no_warm_start,
    };
    plan_config.validate().map_err(|e| usage(e.to_string()))?;

    let image_size = args
        .image_size
        .or_else(|| {
            let ds = dataset.as_ref()?;
            let px = ds.manifest().keys.get("pixels")?;
            (px.shape.len() == 3 && px.shape[0] == px.shape[1]).then_some(px.shape[0])
        })
        .unwrap_or(DEFAULT_IMAGE_SIZE);
    let config = WorldConfig {
        image_size,
        max_steps: None,
    };
    let mut world = World::with_config(&env_id, args.num_envs, config)?;
    match (args.policy, solver(&args)?) {
        (_, Some(solver)) => {
            let model = Arc::new(SimulatorCostModel::new(&env_id)?);
            let bounds = Bounds::from(world.action_spec());
            world.set_policy(MpcPolicy::new(model, solver, plan_config, bounds, args.seed)?);
        }
        (EvalPolicy::Expert, None) => world.set_policy(TwoRoomExpert::new()),
        (EvalPolicy::Random, None) => world.set_policy(RandomPolicy::new(args.seed)),
        (EvalPolicy::Zero, None) => world.set_policy(ZeroPolicy),
        (EvalPolicy::Replay, None) => {
            let ds = dataset.clone().expect("checked above");
            world.set_policy(DatasetReplayPolicy::new(ds));
        }
        (p, None) => bail!("policy {p:?} has no solver"),
    }

    let report = match &dataset {
        Some(ds) => {
            let config = OfflineConfig {
                episodes: args.episodes,
                seed: args.seed,
                budget: args.budget,
                max_gap: args.max_gap,
            };
            evaluate_from_dataset(&mut world, ds, &config)?
        }
        None => {
            let options = variation_request(&args.variation, &env_id)?;
            let config = EvalConfig {
                episodes: args.episodes,
                seed: args.seed,
                budget: args.budget,
                options,
            };
            evaluate(&mut world, &config)?
        }
    };
    writeln!(
        out,
        "{} evaluation on {}: {} episodes, budget {}, policy {}",
        report.protocol,
        report.env_id,
        report.episodes,
        report.budget,
        policy_name(args.policy)
    )?;
    if report.skipped > 0 {
        writeln!(out, "skipped {} episodes shorter than 2 frames", report.skipped)?;
    }
    writeln!(out, "{}", report.summary())?;
    if let Some(path) = &args.output {
        std::fs::write(path, report.to_json()).with_context(|| format!("writing report to {}", path.display()))?;
        writeln!(out, "report written to {}", path.display())?;
    }
    Ok(())
}

fn policy_name(p: EvalPolicy) -> String {
    p.to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default()
}

fn open_dataset(root: &Path, name: &str) -> Result<Dataset> {
    Dataset::open(root, name).with_context(|| format!("opening dataset `{name}` under {}", root.display()))
}

fn inspect(args: InspectArgs, root: &Path, out: &mut String) -> Result<()> {
    let ds = open_dataset(root, &args.name)?;
    let m = ds.manifest();
    writeln!(out, "dataset: {}", m.name)?;
    writeln!(out, "path: {}", ds.dir().display())?;
    writeln!(out, "env: {}", m.env_id)?;
    writeln!(out, "format version: {}", m.format_version)?;
    writeln!(out, "{} episodes, {} steps", m.episode_count, m.total_steps())?;
    if let (Some(min), Some(max)) = (
        m.episodes.iter().map(|e| e.length).min(),
        m.episodes.iter().map(|e| e.length).max(),
    ) {
        writeln!(out, "episode length: min {min}, max {max}")?;
    }
    if !m.keys.is_empty() {
        writeln!(out, "keys:")?;
        for (k, sig) in &m.keys {
            writeln!(out, "  {k:<12} {sig}")?;
        }
    }
    let varied: BTreeSet<&str> = m
        .episodes
        .iter()
        .flat_map(|e| e.meta.varied.iter().map(String::as_str))
        .collect();
    if !varied.is_empty() {
        writeln!(
            out,
            "varied leaves: {}",
            varied.into_iter().collect::<Vec<_>>().join(", ")
        )?;
    }
    if args.verbose {
        for (i, e) in m.episodes.iter().enumerate() {
            writeln!(out, "  episode {i:>6}: length {:>4}, seed {}", e.length, e.meta.seed)?;
        }
    }
    Ok(())
}

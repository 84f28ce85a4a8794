//! Subcommands and their exit codes: 0 success, 1 skill needs the fallback
//! path, 2 bad arguments/config/artifacts, 3 runtime failure, 4 skill
//! discarded.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use arise_core::library::{ig_proxy, TwoTierLibrary};
use arise_core::policy::ToyPolicy;
use arise_core::reward::{advantage_profile, compositions};
use arise_core::skill_doc::{run_pipeline, PipelineOutcome, MAX_TOTAL_CHARS};
use arise_core::trainer::{eval_queries, evaluate, EvalSettings, Trainer};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::bridge::echo::EchoModel;
use crate::bridge::ChildBridge;
use crate::config::{ConfigError, RunConfig, SEED_ENV_VAR};
use crate::manifest::RunManifest;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FALLBACK: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_DISCARD: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "arise", version, about = "Skill-library co-training with a toy GRPO policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train the toy policy and its skill library.
    Train(TrainArgs),
    /// Held-out pass@1 of a trained policy and library.
    Eval(EvalArgs),
    /// Show both library tiers sorted by utility.
    InspectLibrary(InspectArgs),
    /// Run skill text from stdin through the validation pipeline.
    ValidateSkill(ValidateArgs),
    /// Advantage of each reward level for every group composition.
    AdvantageProfile(ProfileArgs),
    /// Serve the deterministic echo adapter over stdio.
    BridgeEcho(EchoArgs),
    /// Spawn the configured bridge adapter and ping it.
    BridgePing(PingArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the warm-up phase.
    #[arg(long)]
    pub phase2_only: bool,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Seed for the held-out queries and evaluation sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Successful trace text for the fallback path; repeatable.
    #[arg(long)]
    pub trace: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long = "G", default_value_t = 8)]
    pub g: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EchoArgs {
    #[arg(long, default_value_t = 32)]
    pub vocab: usize,
}

#[derive(Debug, Args)]
pub struct PingArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Dispatches a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::InspectLibrary(a) => cmd_inspect_library(&a),
        Cmd::ValidateSkill(a) => return cmd_validate_skill(&a),
        Cmd::AdvantageProfile(a) => cmd_advantage_profile(&a),
        Cmd::BridgeEcho(a) => cmd_bridge_echo(&a),
        Cmd::BridgePing(a) => cmd_bridge_ping(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed(seed, std::env::var(SEED_ENV_VAR).ok())?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_at(path))
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    if args.phase2_only {
        cfg.trainer.warmup_steps = 0;
    }
    if let Some(s) = args.steps {
        cfg.trainer.steps = s;
    }
    cfg.validate()?;
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    let out = &args.out;
    let mut manifest = RunManifest {
        config_path: args.config.clone(),
        config_hash: cfg.hash(),
        seed: cfg.trainer.seed,
        out_dir: out.clone(),
        metrics: out.join(RunManifest::METRICS),
        policy: out.join(RunManifest::POLICY),
        snapshots: Vec::new(),
        steps_completed: 0,
    };
    info!("config hash {} seed {} -> {}", manifest.config_hash, manifest.seed, out.display());

    let mut trainer = Trainer::toy(cfg.trainer.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let metrics_file = fs::File::create(&manifest.metrics).map_err(io_at(&manifest.metrics))?;
    let mut metrics = BufWriter::new(metrics_file);
    while trainer.step < cfg.trainer.steps {
        let m = trainer.run_step().map_err(runtime)?;
        serde_json::to_writer(&mut metrics, &m).map_err(runtime)?;
        metrics.write_all(b"\n").and_then(|_| metrics.flush()).map_err(io_at(&manifest.metrics))?;
        if cfg.snapshot_interval > 0 && m.step % cfg.snapshot_interval == 0 {
            let path = out.join(RunManifest::snapshot_name(m.step));
            write_file(&path, &trainer.library.snapshot())?;
            manifest.snapshots.push(path);
        }
        if m.step % 100 == 0 {
            info!(
                "step {} phase {:?} success {:.3} utilization {:.3} cache {} reservoir {}",
                m.step, m.phase, m.success_rate, m.skill_utilization_rate, m.cache_size, m.reservoir_size
            );
        }
    }
    manifest.steps_completed = trainer.step;
    let final_snapshot = out.join(RunManifest::FINAL_SNAPSHOT);
    write_file(&final_snapshot, &trainer.library.snapshot())?;
    manifest.snapshots.push(final_snapshot);
    write_file(&manifest.policy, &serde_json::to_string(&trainer.policy).map_err(runtime)?)?;
    let manifest_path = out.join(RunManifest::FILE_NAME);
    write_file(&manifest_path, &serde_json::to_string_pretty(&manifest).map_err(runtime)?)?;
    println!("trained {} steps; manifest at {}", trainer.step, manifest_path.display());
    Ok(())
}

fn read_artifact(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_library(path: &Path) -> Result<TwoTierLibrary, CliError> {
    TwoTierLibrary::restore(&read_artifact(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct EvalReport {
    pass_at_1: f64,
    runs: usize,
    queries: usize,
    seed: u64,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    let policy: ToyPolicy = serde_json::from_str(&read_artifact(&args.policy)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.policy.display())))?;
    let library = load_library(&args.library)?;
    let env = &cfg.trainer.env;
    if policy.layout.vocab_size != env.vocab_size {
        return Err(CliError::Usage(format!(
            "policy vocabulary {} does not match env vocabulary {}",
            policy.layout.vocab_size, env.vocab_size
        )));
    }
    let runs = args.runs.unwrap_or(cfg.trainer.eval_runs);
    let n = args.queries.unwrap_or(cfg.trainer.eval_queries);
    if runs == 0 || n == 0 {
        return Err(CliError::Usage("--runs and --queries must be at least 1".into()));
    }
    let seed = cfg.trainer.seed;
    let queries = eval_queries(env, n, seed);
    let settings = EvalSettings { runs, ..EvalSettings::from_config(&cfg.trainer) };
    let pass_at_1 = evaluate(&policy, &library, &queries, &settings, seed).map_err(runtime)?;
    if args.json {
        let report = EvalReport { pass_at_1, runs, queries: n, seed };
        println!("{}", serde_json::to_string(&report).map_err(runtime)?);
    } else {
        println!("{pass_at_1:.4}");
    }
    Ok(())
}

pub fn cmd_inspect_library(args: &InspectArgs) -> Result<(), CliError> {
    let lib = load_library(&args.library)?;
    if args.json {
        print!("{}", lib.snapshot());
        return Ok(());
    }
    println!(
        "{:<9} {:>6} {:<32} {:<15} {:>9} {:>6} {:>9}",
        "tier", "id", "skill", "type", "utility", "usage", "proxy_ig"
    );
    for (tier, entries) in [("cache", &lib.cache), ("reservoir", &lib.reservoir)] {
        let mut sorted: Vec<_> = entries.iter().collect();
        sorted.sort_by(|a, b| b.utility.total_cmp(&a.utility).then(a.id.cmp(&b.id)));
        for e in sorted {
            println!(
                "{:<9} {:>6} {:<32} {:<15} {:>9.4} {:>6} {:>9.4}",
                tier,
                e.id.to_string(),
                e.doc.skill_name,
                e.doc.problem_type.as_str(),
                e.utility,
                e.usage_count,
                ig_proxy(e, &lib)
            );
        }
    }
    Ok(())
}

pub fn cmd_validate_skill(args: &ValidateArgs) -> u8 {
    let mut raw = String::new();
    if let Err(e) = io::stdin().read_to_string(&mut raw) {
        eprintln!("error: cannot read stdin: {e}");
        return EXIT_USAGE;
    }
    match run_pipeline(&raw, &args.trace) {
        PipelineOutcome::Accepted(doc) => {
            println!("{}", doc.to_canonical_json());
            EXIT_OK
        }
        PipelineOutcome::Fallback { doc, stage } => {
            eprintln!("fallback needed ({stage}); abstracted from the first trace");
            println!("{}", doc.to_canonical_json());
            EXIT_FALLBACK
        }
        PipelineOutcome::Rejected(stage) => {
            eprintln!("fallback needed ({stage}); no trace given");
            EXIT_FALLBACK
        }
        PipelineOutcome::Discarded => {
            eprintln!("discarded: content exceeds {MAX_TOTAL_CHARS} characters after clipping");
            EXIT_DISCARD
        }
    }
}

#[derive(Serialize)]
struct ProfileRow {
    n0: usize,
    n1: usize,
    n2: usize,
    mu: f64,
    sigma: f64,
    a0: Option<f64>,
    a1: Option<f64>,
    a2: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn sign(v: Option<f64>) -> &'static str {
    match v {
        None => "n/a",
        Some(x) if x > 0.0 => "+",
        Some(x) if x < 0.0 => "-",
        Some(_) => "0",
    }
}

pub fn cmd_advantage_profile(args: &ProfileArgs) -> Result<(), CliError> {
    if args.g == 0 {
        return Err(CliError::Usage("--G must be at least 1".into()));
    }
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(CliError::Usage("--eps must be positive".into()));
    }
    let rows: Vec<ProfileRow> = compositions(args.g)
        .map(|(n0, n1, n2)| {
            let p = advantage_profile(n0, n1, n2, args.eps);
            let present = |n: usize, a: f64| (n > 0).then_some(a);
            ProfileRow {
                n0,
                n1,
                n2,
                mu: p.mu,
                sigma: p.sigma,
                a0: present(n0, p.a0),
                a1: present(n1, p.a1),
                a2: present(n2, p.a2),
            }
        })
        .collect();
    if args.json {
        println!("{}", serde_json::to_string(&rows).map_err(runtime)?);
        return Ok(());
    }
    println!("{:>3} {:>3} {:>3} {:>8} {:>8} {:>9} {:>9} {:>9} {:>7}", "n0", "n1", "n2", "mu", "sigma", "a0", "a1", "a2", "sign_a1");
    for r in &rows {
        println!(
            "{:>3} {:>3} {:>3} {:>8.4} {:>8.4} {:>9} {:>9} {:>9} {:>7}",
            r.n0,
            r.n1,
            r.n2,
            r.mu,
            r.sigma,
            cell(r.a0),
            cell(r.a1),
            cell(r.a2),
            sign(r.a1)
        );
    }
    Ok(())
}

pub fn cmd_bridge_echo(args: &EchoArgs) -> Result<(), CliError> {
    if args.vocab < 2 {
        return Err(CliError::Usage("--vocab must be at least 2".into()));
    }
    let stdin = io::stdin();
    EchoModel { vocab_size: args.vocab }.serve(stdin.lock(), io::stdout().lock()).map_err(runtime)
}

pub fn cmd_bridge_ping(args: &PingArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let bridge = cfg.bridge.ok_or_else(|| CliError::Usage(format!("{} has no [bridge] section", args.config.display())))?;
    let mut child = ChildBridge::spawn(&bridge.command).map_err(runtime)?;
    child.client.ping().map_err(runtime)?;
    println!("ok");
    Ok(())
}

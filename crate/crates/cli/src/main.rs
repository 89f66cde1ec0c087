//! Experiment runner CLI: run task suites, sweep search budgets, export
//! fine-tuning datasets from recorded runs, and summarize reports.
//!
//! Exit codes: 0 success, 1 completed with task failures, 2 configuration
//! error, 3 provider error.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rmcts_core::error::Error as CoreError;
use rmcts_core::export::{export_chain, export_tree, filter_by_length, write_records, ChatRecord};
use rmcts_core::harness::{
    report_by_difficulty, run_suite, sweep_budget, sweep_series_csv, ExperimentConfig,
    ProviderKind, RunReport,
};
use rmcts_core::provider::TokenTotals;
use rmcts_core::search::SearchTree;
use rmcts_core::Trajectory;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rmcts", version, about = "Search-augmented web-agent experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task suite with the configured agent.
    Run(RunArgs),
    /// Run the suite once per node budget and emit a scaling series.
    Sweep(SweepArgs),
    /// Export chain- or tree-style fine-tuning datasets from a recorded run.
    ExportSft(ExportArgs),
    /// Summarize a recorded run (success rates by difficulty, tokens).
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// react | tot-bfs | tot-dfs | best-first | mcts | rmcts | rmcts-mad
    #[arg(long)]
    agent: Option<String>,
    /// single-agent | debate
    #[arg(long)]
    value: Option<String>,
    /// scripted | http
    #[arg(long)]
    provider: Option<String>,
    /// Fixture path or bundled:<name>; repeatable.
    #[arg(long = "fixture")]
    fixtures: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Simulations per search tree.
    #[arg(long = "budget-nodes")]
    budget_nodes: Option<usize>,
    /// Wall-clock cap per search in seconds (0 disables).
    #[arg(long)]
    seconds: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    breadth: Option<usize>,
    #[arg(long)]
    c_p: Option<f64>,
    /// most-visited | highest-value
    #[arg(long)]
    prediction: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    /// Ablation: disable search (greedy stepping).
    #[arg(long)]
    no_search: bool,
    /// Ablation: disable policy reflection.
    #[arg(long)]
    no_policy_reflection: bool,
    /// Ablation: disable value reflection.
    #[arg(long)]
    no_value_reflection: bool,
    #[arg(long)]
    retrieval_m: Option<usize>,
    #[arg(long)]
    retrieval_threshold: Option<f64>,
    /// Gaussian noise sigma for the scripted value oracle.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Restrict to these task ids; repeatable.
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => {
                let mut c = ExperimentConfig::scripted("run", rmcts_core::agent::AgentKind::Mcts, 0);
                c.seed = None; // must be provided explicitly for scripted runs
                c
            }
        };
        if let Some(name) = &self.name {
            config.name = name.clone();
        }
        if let Some(agent) = &self.agent {
            config.agent = agent.clone();
        }
        if let Some(value) = &self.value {
            config.value = value.clone();
        }
        if let Some(provider) = &self.provider {
            config.provider = match provider.as_str() {
                "scripted" => ProviderKind::Scripted,
                "http" => ProviderKind::Http,
                other => bail!("unknown provider `{other}` (expected scripted|http)"),
            };
        }
        if !self.fixtures.is_empty() {
            config.fixtures = self.fixtures.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if self.max_steps.is_some() {
            config.max_steps = self.max_steps;
        }
        if let Some(nodes) = self.budget_nodes {
            config.budget_nodes = nodes;
        }
        if let Some(seconds) = self.seconds {
            config.budget_seconds = seconds;
        }
        if let Some(depth) = self.depth {
            config.depth_limit = depth;
        }
        if let Some(breadth) = self.breadth {
            config.breadth_limit = breadth;
        }
        if let Some(c_p) = self.c_p {
            config.c_p = c_p;
        }
        if let Some(prediction) = &self.prediction {
            config.prediction = prediction.clone();
        }
        if let Some(samples) = self.samples {
            config.samples = samples;
        }
        if self.no_search {
            config.search = false;
        }
        if self.no_policy_reflection {
            config.policy_reflection = false;
        }
        if self.no_value_reflection {
            config.value_reflection = false;
        }
        if let Some(m) = self.retrieval_m {
            config.retrieval_m = m;
        }
        if let Some(threshold) = self.retrieval_threshold {
            config.retrieval_threshold = threshold;
        }
        if let Some(sigma) = self.sigma {
            config.value_noise_sigma = sigma;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if !self.tasks.is_empty() {
            config.tasks = self.tasks.clone();
        }
        if let Some(out) = &self.out {
            config.output_dir = Some(out.clone());
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// A previous run directory to compute relative token usage against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated node budgets, e.g. 2,5,10,15.
    #[arg(long, default_value = "2,5,10,15")]
    nodes: String,
}

#[derive(Args)]
struct ExportArgs {
    /// A run directory produced by `rmcts run`.
    #[arg(long)]
    run: PathBuf,
    /// chain (executed actions only) or tree (search traversals).
    #[arg(long)]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    /// Drop records with more than this many actions.
    #[arg(long, default_value_t = 20)]
    max_actions: usize,
    /// Keep only records whose estimated final value is at least this.
    #[arg(long)]
    min_value: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Another run directory used as the 1x token baseline.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ExportSft(args) => cmd_export(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify(&err)
        }
    }
}

/// Map error kinds onto the documented exit codes.
fn classify(err: &anyhow::Error) -> ExitCode {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return match core {
            CoreError::Config(_) | CoreError::Fixture(_) => ExitCode::from(2),
            CoreError::Provider(_) | CoreError::Protocol(_) => ExitCode::from(3),
            _ => ExitCode::from(1),
        };
    }
    ExitCode::from(1)
}

fn print_report(report: &RunReport, baseline: Option<TokenTotals>) {
    let tiers = report_by_difficulty(report);
    println!("run: {} (agent {}, seed {})", report.name, report.agent, report.seed);
    println!(
        "success: {}/{} ({:.1}%)",
        tiers.overall_successes,
        tiers.overall_tasks,
        tiers.overall_rate() * 100.0
    );
    for (tier, n, s) in &tiers.tiers {
        println!("  {tier:>6}: {s}/{n} ({:.1}%)", *s as f64 / *n as f64 * 100.0);
    }
    let totals = report.totals();
    println!(
        "tokens: {} in / {} out / {} total",
        totals.input_tokens,
        totals.output_tokens,
        totals.combined()
    );
    if let Some(base) = baseline {
        match rmcts_core::provider::relative_totals(totals, base) {
            Ok(ratio) => println!("relative tokens vs baseline: {ratio:.2}x"),
            Err(err) => println!("relative tokens vs baseline: n/a ({err})"),
        }
    }
    if report.error_count() > 0 {
        println!("errors: {} task(s) aborted", report.error_count());
        for row in &report.rows {
            if row.status != "ok" {
                println!("  {}: {}", row.task_id, row.error);
            }
        }
    }
}

fn baseline_totals(dir: &Path) -> anyhow::Result<TokenTotals> {
    let rows = RunReport::read_csv(dir.join("report.csv"))
        .with_context(|| format!("reading baseline report in {}", dir.display()))?;
    let mut totals = TokenTotals::default();
    for row in rows {
        totals.input_tokens += row.input_tokens;
        totals.output_tokens += row.output_tokens;
    }
    Ok(totals)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let config = args.config.resolve()?;
    let report = run_suite(&config)?;
    let baseline = match &args.baseline {
        Some(dir) => Some(baseline_totals(dir)?),
        None => None,
    };
    print_report(&report, baseline);
    Ok(if report.error_count() > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let config = args.config.resolve()?;
    let nodes: Vec<usize> = args
        .nodes
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("parsing --nodes"))
        .collect::<anyhow::Result<_>>()?;
    let reports = sweep_budget(&config, &nodes)?;
    let series = sweep_series_csv(&reports);
    print!("{series}");
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), &series)?;
        println!("wrote {}", dir.join("sweep.csv").display());
    }
    let errors: usize = reports.iter().map(|r| r.error_count()).sum();
    Ok(if errors > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

/// Load the persisted (trajectory, trees) episode artifacts of a run.
fn load_episodes(run: &Path) -> anyhow::Result<Vec<(Trajectory, Vec<SearchTree>)>> {
    let tasks_dir = run.join("tasks");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&tasks_dir)
        .with_context(|| format!("no tasks directory in {}", run.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut episodes = Vec::new();
    for task_dir in entries {
        let trajectory_path = task_dir.join("trajectory.json");
        if !trajectory_path.exists() {
            continue;
        }
        let trajectory: Trajectory =
            serde_json::from_str(&std::fs::read_to_string(&trajectory_path)?)
                .with_context(|| format!("parsing {}", trajectory_path.display()))?;
        let mut tree_paths: Vec<PathBuf> = std::fs::read_dir(&task_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("tree_") && n.ends_with(".jsonl"))
                    .unwrap_or(false)
            })
            .collect();
        tree_paths.sort();
        let mut trees = Vec::new();
        for path in tree_paths {
            trees.push(SearchTree::from_records(&std::fs::read_to_string(&path)?)?);
        }
        episodes.push((trajectory, trees));
    }
    Ok(episodes)
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<ExitCode> {
    let episodes = load_episodes(&args.run)?;
    if episodes.is_empty() {
        bail!("no episodes found under {}", args.run.display());
    }
    let mut records: Vec<ChatRecord> = Vec::new();
    let mut skipped = 0usize;
    for (trajectory, trees) in &episodes {
        if trajectory.steps.is_empty() {
            skipped += 1;
            continue;
        }
        let record = match args.mode.as_str() {
            "chain" => export_chain(trajectory)?,
            "tree" => {
                if trees.len() != trajectory.steps.len() {
                    log::warn!(
                        "task {}: {} trees for {} steps, skipped",
                        trajectory.task_id,
                        trees.len(),
                        trajectory.steps.len()
                    );
                    skipped += 1;
                    continue;
                }
                export_tree(trajectory, trees)?
            }
            other => bail!("unknown mode `{other}` (expected chain|tree)"),
        };
        if let Some(min) = args.min_value {
            if record.metadata.estimated_final_value.unwrap_or(0.0) < min {
                skipped += 1;
                continue;
            }
        }
        records.push(record);
    }
    let before = records.len();
    let records = filter_by_length(records, args.max_actions);
    let over_length = before - records.len();
    write_records(&args.out, &records)?;
    println!(
        "wrote {} records to {} ({} skipped, {} over the {}-action cap)",
        records.len(),
        args.out.display(),
        skipped,
        over_length,
        args.max_actions
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<ExitCode> {
    let rows = RunReport::read_csv(args.run.join("report.csv"))
        .with_context(|| format!("reading report in {}", args.run.display()))?;
    // recover the header from the config echo when present
    let (name, agent, seed, nodes) = match ExperimentConfig::load(args.run.join("config.toml")) {
        Ok(config) => (
            config.name.clone(),
            config.agent.clone(),
            config.seed_or_zero(),
            config.budget_nodes,
        ),
        Err(_) => ("(unknown)".to_string(), "(unknown)".to_string(), 0, 0),
    };
    let report = RunReport {
        name,
        agent,
        seed,
        budget_nodes: nodes,
        rows,
        timings_ms: Vec::new(),
    };
    let baseline = match &args.baseline {
        Some(dir) => Some(baseline_totals(dir)?),
        None => None,
    };
    print_report(&report, baseline);
    Ok(ExitCode::SUCCESS)
}

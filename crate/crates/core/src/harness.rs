//! Experiment runner: resolve a config into agents and fixtures, execute
//! the task suite, persist per-task artifacts, and aggregate metrics.

use crate::agent::{
    improve_from_episode, run_episode, AgentKind, AgentSettings, EpisodeResult, ReflectionToggles,
};
use crate::env::fixture::{self, PageGraph, TaskSpec};
use crate::env::fixture_agents::{GraphPolicy, GraphValue, ValueCallProfile};
use crate::env::web::WebEnv;
use crate::error::{Error, Result};
use crate::policy::{ChatPolicy, Policy, PolicyConfig};
use crate::provider::http::{HttpProvider, HttpProviderConfig};
use crate::provider::scripted::{ScriptedChatProvider, ScriptedEmbedder};
use crate::provider::{
    ChatProvider, EmbeddingProvider, LedgerRecord, Purpose, TokenLedger, TokenTotals,
};
use crate::reflection::{shared_store, ReflectionStore, ReflectivePolicy, ReflectiveValue, RetrievalConfig, SharedStore};
use crate::search::{SearchBudget, SearchOptions, SelectionCriterion};
use crate::seeds::substream;
use crate::value::{DebateValue, SingleAgentValue, ValueEstimator, ValueMethod};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Fixture-driven deterministic oracles (no network).
    Scripted,
    /// OpenAI-compatible HTTP endpoints.
    Http,
}

fn default_true() -> bool {
    true
}
fn default_c_p() -> f64 {
    1.0
}
fn default_samples() -> usize {
    20
}
fn default_budget_nodes() -> usize {
    5
}
fn default_budget_seconds() -> u64 {
    300
}
fn default_limit() -> usize {
    5
}
fn default_retrieval_m() -> usize {
    2
}
fn default_retrieval_threshold() -> f64 {
    0.25
}
fn default_n_policy() -> usize {
    3
}
fn default_n_value() -> usize {
    1
}
fn default_workers() -> usize {
    1
}
fn default_fixtures() -> Vec<String> {
    vec!["bundled:all".to_string()]
}
fn default_prediction() -> String {
    "most-visited".to_string()
}
fn default_value_kind() -> String {
    "single-agent".to_string()
}

/// One experiment, loadable from a TOML file with every field overridable
/// on the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub agent: String,
    #[serde(default = "default_value_kind")]
    pub value: String,
    pub provider: ProviderKind,
    /// Fixture file paths, or `bundled:mini-classifieds` / `bundled:all`.
    #[serde(default = "default_fixtures")]
    pub fixtures: Vec<String>,
    /// Master seed; mandatory for scripted runs.
    pub seed: Option<u64>,
    /// Episode step cap; the agent-kind default applies when absent.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_budget_nodes")]
    pub budget_nodes: usize,
    /// Per-search wall-clock cap in seconds; 0 disables it.
    #[serde(default = "default_budget_seconds")]
    pub budget_seconds: u64,
    #[serde(default = "default_limit")]
    pub depth_limit: usize,
    #[serde(default = "default_limit")]
    pub breadth_limit: usize,
    #[serde(default = "default_c_p")]
    pub c_p: f64,
    /// `most-visited` (default) or `highest-value`.
    #[serde(default = "default_prediction")]
    pub prediction: String,
    /// Policy samples per expansion and value samples per estimate.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Ablation toggle: disable search to reduce any agent to greedy steps.
    #[serde(default = "default_true")]
    pub search: bool,
    #[serde(default = "default_true")]
    pub policy_reflection: bool,
    #[serde(default = "default_true")]
    pub value_reflection: bool,
    #[serde(default = "default_retrieval_m")]
    pub retrieval_m: usize,
    #[serde(default = "default_retrieval_threshold")]
    pub retrieval_threshold: f64,
    #[serde(default = "default_n_policy")]
    pub policy_reflections_per_episode: usize,
    #[serde(default = "default_n_value")]
    pub value_reflections_per_episode: usize,
    /// Seeded Gaussian noise on the scripted value oracle.
    #[serde(default)]
    pub value_noise_sigma: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Restrict the run to these task ids (substring of full suite).
    #[serde(default)]
    pub tasks: Vec<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub http: Option<HttpProviderConfig>,
}

impl ExperimentConfig {
    pub fn scripted(name: &str, agent: AgentKind, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            agent: agent.to_string(),
            value: default_value_kind(),
            provider: ProviderKind::Scripted,
            fixtures: default_fixtures(),
            seed: Some(seed),
            max_steps: None,
            budget_nodes: default_budget_nodes(),
            budget_seconds: default_budget_seconds(),
            depth_limit: default_limit(),
            breadth_limit: default_limit(),
            c_p: default_c_p(),
            prediction: default_prediction(),
            samples: default_samples(),
            search: true,
            policy_reflection: true,
            value_reflection: true,
            retrieval_m: default_retrieval_m(),
            retrieval_threshold: default_retrieval_threshold(),
            policy_reflections_per_episode: default_n_policy(),
            value_reflections_per_episode: default_n_value(),
            value_noise_sigma: 0.0,
            workers: default_workers(),
            tasks: Vec::new(),
            output_dir: None,
            http: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn agent_kind(&self) -> Result<AgentKind> {
        AgentKind::parse(&self.agent)
    }

    pub fn value_kind(&self) -> Result<ValueMethod> {
        if self.agent_kind()? == AgentKind::RMctsMad {
            return Ok(ValueMethod::MultiAgentDebate);
        }
        match self.value.trim().to_lowercase().as_str() {
            "single-agent" | "sa" => Ok(ValueMethod::SingleAgent),
            "debate" | "mad" | "multi-agent-debate" => Ok(ValueMethod::MultiAgentDebate),
            other => Err(Error::Config(format!("unknown value kind `{other}`"))),
        }
    }

    pub fn criterion(&self) -> Result<SelectionCriterion> {
        match self.prediction.trim().to_lowercase().as_str() {
            "most-visited" => Ok(SelectionCriterion::MostVisited),
            "highest-value" => Ok(SelectionCriterion::HighestValue),
            other => Err(Error::Config(format!("unknown prediction rule `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.agent_kind()?;
        self.value_kind()?;
        self.criterion()?;
        self.settings_for(kind).budget.validate()?;
        if self.provider == ProviderKind::Scripted && self.seed.is_none() {
            return Err(Error::Config("scripted runs require an explicit seed".into()));
        }
        if self.provider == ProviderKind::Http && self.http.is_none() {
            return Err(Error::Config("http provider selected but [http] is missing".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn settings_for(&self, kind: AgentKind) -> AgentSettings {
        let mut settings = AgentSettings::new(kind);
        settings.budget = SearchBudget {
            max_nodes: self.budget_nodes,
            max_wall_clock: if self.budget_seconds == 0 {
                None
            } else {
                Some(Duration::from_secs(self.budget_seconds))
            },
            depth_limit: self.depth_limit,
            breadth_limit: self.breadth_limit,
        };
        settings.options = SearchOptions {
            c_p: self.c_p,
            criterion: self.criterion().unwrap_or(SelectionCriterion::MostVisited),
        };
        settings.max_steps = self.max_steps.unwrap_or_else(|| kind.default_max_steps());
        settings.search_enabled = self.search && kind.uses_search();
        settings.reflection = if kind.uses_reflection() {
            ReflectionToggles {
                policy: self.policy_reflection,
                value: self.value_reflection,
            }
        } else {
            ReflectionToggles::off()
        };
        settings.retrieval = RetrievalConfig {
            m: self.retrieval_m,
            threshold: self.retrieval_threshold,
            ..RetrievalConfig::default()
        };
        settings.policy_reflections_per_episode = self.policy_reflections_per_episode;
        settings.value_reflections_per_episode = self.value_reflections_per_episode;
        settings
    }

    /// Load the configured fixture set (`bundled:` names or file paths).
    pub fn load_fixtures(&self) -> Result<Vec<Arc<PageGraph>>> {
        let mut graphs = Vec::new();
        for entry in &self.fixtures {
            match entry.as_str() {
                "bundled:all" => graphs.extend(fixture::bundled::all()?),
                "bundled:mini-classifieds" => graphs.push(fixture::bundled::mini_classifieds()?),
                "bundled:mini-forum" => graphs.push(fixture::bundled::mini_forum()?),
                "bundled:mini-shop" => graphs.push(fixture::bundled::mini_shop()?),
                path => graphs.push(fixture::load_site(path)?),
            }
        }
        Ok(graphs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub site: String,
    pub difficulty: String,
    pub success: u8,
    pub steps: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub status: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub agent: String,
    pub seed: u64,
    pub budget_nodes: usize,
    /// Per-task rows, sorted by task id for deterministic output.
    pub rows: Vec<TaskRow>,
    /// Wall-clock milliseconds per task; kept out of `report.csv` so equal
    /// seeds diff byte-identically.
    pub timings_ms: Vec<(String, u128)>,
}

impl RunReport {
    pub fn success_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.success as usize).sum::<usize>() as f64
            / self.rows.len() as f64
    }

    pub fn totals(&self) -> TokenTotals {
        let mut totals = TokenTotals::default();
        for row in &self.rows {
            totals.input_tokens += row.input_tokens;
            totals.output_tokens += row.output_tokens;
        }
        totals
    }

    pub fn error_count(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for row in &self.rows {
            writer
                .serialize(row)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        writer
            .flush()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TaskRow>> {
        let mut reader = csv::Reader::from_path(path.as_ref())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let mut rows = Vec::new();
        for row in reader.deserialize() {
            rows.push(row.map_err(|e| Error::Parse(format!("report row: {e}")))?);
        }
        Ok(rows)
    }
}

/// Success-rate table per difficulty tier plus overall.
#[derive(Debug, Clone, PartialEq)]
pub struct TierTable {
    /// (tier, tasks, successes); tiers in easy/medium/hard order, only
    /// tiers that occur are present.
    pub tiers: Vec<(String, usize, usize)>,
    pub overall_tasks: usize,
    pub overall_successes: usize,
}

impl TierTable {
    pub fn rate(&self, tier: &str) -> Option<f64> {
        self.tiers
            .iter()
            .find(|(name, _, _)| name == tier)
            .map(|(_, n, s)| *s as f64 / *n as f64)
    }

    pub fn overall_rate(&self) -> f64 {
        if self.overall_tasks == 0 {
            0.0
        } else {
            self.overall_successes as f64 / self.overall_tasks as f64
        }
    }
}

/// Aggregate per-tier success rates. Rows with unknown tiers count only in
/// the overall numbers (with a warning).
pub fn report_by_difficulty(report: &RunReport) -> TierTable {
    let mut tiers: Vec<(String, usize, usize)> = Vec::new();
    let mut overall_tasks = 0usize;
    let mut overall_successes = 0usize;
    for tier in ["easy", "medium", "hard"] {
        let rows: Vec<&TaskRow> = report.rows.iter().filter(|r| r.difficulty == tier).collect();
        if !rows.is_empty() {
            tiers.push((
                tier.to_string(),
                rows.len(),
                rows.iter().map(|r| r.success as usize).sum(),
            ));
        }
    }
    for row in &report.rows {
        if !["easy", "medium", "hard"].contains(&row.difficulty.as_str()) {
            log::warn!(
                "task {} has unknown difficulty `{}`; counted only in overall",
                row.task_id,
                row.difficulty
            );
        }
        overall_tasks += 1;
        overall_successes += row.success as usize;
    }
    TierTable {
        tiers,
        overall_tasks,
        overall_successes,
    }
}

struct TaskOutcome {
    row: TaskRow,
    elapsed_ms: u128,
    ledger_records: Vec<LedgerRecord>,
    episode: Option<EpisodeResult>,
}

struct SuiteContext {
    config: ExperimentConfig,
    kind: AgentKind,
    value_kind: ValueMethod,
    policy_store: SharedStore,
    value_store: SharedStore,
}

/// Execute every task in the configured fixtures and aggregate a report.
/// Task aborts are recorded as failed rows; the suite continues.
pub fn run_suite(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let kind = config.agent_kind()?;
    let graphs = config.load_fixtures()?;

    let out_dir = config.output_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
        let echo = toml::to_string_pretty(config)
            .map_err(|e| Error::Config(format!("config echo: {e}")))?;
        std::fs::write(dir.join("config.toml"), echo)?;
    }

    let (policy_store, value_store) = match &out_dir {
        Some(dir) => (
            shared_store(ReflectionStore::open(dir.join("reflections_policy.jsonl"), 64)?),
            shared_store(ReflectionStore::open(dir.join("reflections_value.jsonl"), 64)?),
        ),
        None => (
            shared_store(ReflectionStore::in_memory(64)),
            shared_store(ReflectionStore::in_memory(64)),
        ),
    };

    let ctx = SuiteContext {
        config: config.clone(),
        kind,
        value_kind: config.value_kind()?,
        policy_store,
        value_store,
    };

    // (graph, task) work items in fixture order
    let mut items: Vec<(Arc<PageGraph>, TaskSpec)> = Vec::new();
    for graph in &graphs {
        for task in &graph.tasks {
            if !config.tasks.is_empty() && !config.tasks.iter().any(|t| t == &task.id) {
                continue;
            }
            items.push((graph.clone(), task.clone()));
        }
    }
    if items.is_empty() {
        return Err(Error::Config("no tasks selected".into()));
    }

    let outcomes: Vec<TaskOutcome> = if config.workers <= 1 {
        items
            .iter()
            .map(|(graph, task)| run_task(&ctx, graph, task))
            .collect()
    } else {
        let queue = Mutex::new(items.clone().into_iter());
        let collected: Mutex<Vec<TaskOutcome>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..config.workers {
                scope.spawn(|| loop {
                    let item = queue.lock().unwrap().next();
                    let Some((graph, task)) = item else { break };
                    let outcome = run_task(&ctx, &graph, &task);
                    collected.lock().unwrap().push(outcome);
                });
            }
        });
        collected.into_inner().unwrap()
    };

    let mut rows: Vec<TaskRow> = Vec::new();
    let mut timings: Vec<(String, u128)> = Vec::new();
    let mut ledger_rows: Vec<(String, LedgerRecord)> = Vec::new();
    let mut sorted = outcomes;
    sorted.sort_by(|a, b| a.row.task_id.cmp(&b.row.task_id));
    for outcome in sorted {
        timings.push((outcome.row.task_id.clone(), outcome.elapsed_ms));
        for record in &outcome.ledger_records {
            ledger_rows.push((outcome.row.task_id.clone(), record.clone()));
        }
        if let (Some(dir), Some(episode)) = (&out_dir, &outcome.episode) {
            persist_episode(dir, &outcome.row.task_id, episode)?;
        }
        rows.push(outcome.row);
    }

    let report = RunReport {
        name: config.name.clone(),
        agent: config.agent.clone(),
        seed: config.seed_or_zero(),
        budget_nodes: config.budget_nodes,
        rows,
        timings_ms: timings,
    };

    if let Some(dir) = &out_dir {
        report.write_csv(dir.join("report.csv"))?;
        write_timings(dir.join("timings.csv"), &report.timings_ms)?;
        write_ledger(dir.join("ledger.csv"), &ledger_rows)?;
        std::fs::write(dir.join("summary.txt"), render_summary(&report))?;
    }
    Ok(report)
}

fn run_task(ctx: &SuiteContext, graph: &Arc<PageGraph>, task: &TaskSpec) -> TaskOutcome {
    let started = Instant::now();
    let ledger = TokenLedger::new();
    let mut row = TaskRow {
        task_id: task.id.clone(),
        site: graph.name.clone(),
        difficulty: task.difficulty.to_string(),
        success: 0,
        steps: 0,
        input_tokens: 0,
        output_tokens: 0,
        status: "ok".to_string(),
        error: String::new(),
    };
    let episode = match execute_task(ctx, graph, task, &ledger) {
        Ok(episode) => {
            row.success = if episode.reward >= 1.0 { 1 } else { 0 };
            row.steps = episode.trajectory.steps.len();
            Some(episode)
        }
        Err(err) => {
            row.status = "error".to_string();
            row.error = err.to_string();
            None
        }
    };
    let totals = ledger.totals();
    row.input_tokens = totals.input_tokens;
    row.output_tokens = totals.output_tokens;
    TaskOutcome {
        row,
        elapsed_ms: started.elapsed().as_millis(),
        ledger_records: ledger.snapshot(),
        episode,
    }
}

fn execute_task(
    ctx: &SuiteContext,
    graph: &Arc<PageGraph>,
    task: &TaskSpec,
    ledger: &Arc<TokenLedger>,
) -> Result<EpisodeResult> {
    let config = &ctx.config;
    let settings = config.settings_for(ctx.kind);
    let mut env = WebEnv::new(graph.clone(), &task.id)?;

    let (policy, value, reflection_chat, embedder) =
        build_agents(ctx, graph, task, ledger, &settings)?;

    let mut episode = run_episode(
        &mut env,
        &task.id,
        &task.goal,
        &policy,
        &value,
        &settings,
    )?;
    episode.trajectory.token_usage = ledger.snapshot();

    if settings.reflection.policy || settings.reflection.value {
        improve_from_episode(
            &episode,
            &settings,
            reflection_chat.as_ref(),
            embedder.as_ref(),
            &ctx.policy_store,
            &ctx.value_store,
        )?;
    }
    Ok(episode)
}

type AgentStack = (
    Box<dyn Policy>,
    Box<dyn ValueEstimator>,
    Arc<dyn ChatProvider>,
    Arc<dyn EmbeddingProvider>,
);

fn build_agents(
    ctx: &SuiteContext,
    graph: &Arc<PageGraph>,
    task: &TaskSpec,
    ledger: &Arc<TokenLedger>,
    settings: &AgentSettings,
) -> Result<AgentStack> {
    let config = &ctx.config;
    let (base_policy, base_value, chat, embedder): AgentStack = match config.provider {
        ProviderKind::Scripted => {
            let mut policy = GraphPolicy::new(graph.clone(), task).with_ledger(ledger.clone());
            policy.samples = config.samples;
            policy.breadth = config.breadth_limit;
            let noise_rng = substream(config.seed_or_zero(), &["value-noise", &task.id]);
            let profile = match ctx.value_kind {
                ValueMethod::SingleAgent => ValueCallProfile::SingleAgent {
                    samples: config.samples,
                },
                ValueMethod::MultiAgentDebate => ValueCallProfile::Debate,
            };
            let value = GraphValue::new(graph.clone(), task, config.value_noise_sigma, noise_rng)
                .with_ledger(ledger.clone())
                .with_profile(profile);
            let chat: Arc<dyn ChatProvider> = Arc::new(
                ScriptedChatProvider::new()
                    .respond(
                        Purpose::Reflection,
                        "Lesson: compare the page contents against the objective before acting.",
                    )
                    .with_ledger(ledger.clone()),
            );
            let embedder: Arc<dyn EmbeddingProvider> =
                Arc::new(ScriptedEmbedder::default().with_ledger(ledger.clone()));
            (Box::new(policy), Box::new(value), chat, embedder)
        }
        ProviderKind::Http => {
            let http_config = config
                .http
                .clone()
                .ok_or_else(|| Error::Config("missing [http] section".into()))?;
            let provider = Arc::new(HttpProvider::new(http_config, ledger.clone())?);
            let policy = ChatPolicy::new(
                provider.clone(),
                PolicyConfig {
                    samples: config.samples,
                    breadth: config.breadth_limit,
                    ..PolicyConfig::default()
                },
            );
            let value: Box<dyn ValueEstimator> = match ctx.value_kind {
                ValueMethod::SingleAgent => Box::new(
                    SingleAgentValue::new(provider.clone()).with_samples(config.samples),
                ),
                ValueMethod::MultiAgentDebate => Box::new(DebateValue::new(provider.clone())),
            };
            let chat: Arc<dyn ChatProvider> = provider.clone();
            let embedder: Arc<dyn EmbeddingProvider> = provider;
            (Box::new(policy), value, chat, embedder)
        }
    };

    // reflection injection wraps the base functions only when enabled, so
    // disabled toggles leave prompts byte-identical to plain MCTS
    let policy: Box<dyn Policy> = if settings.reflection.policy {
        Box::new(ReflectivePolicy::new(
            base_policy,
            ctx.policy_store.clone(),
            embedder.clone(),
            settings.retrieval.clone(),
        ))
    } else {
        base_policy
    };
    let value: Box<dyn ValueEstimator> = if settings.reflection.value {
        Box::new(ReflectiveValue::new(
            base_value,
            ctx.value_store.clone(),
            embedder.clone(),
            settings.retrieval.clone(),
        ))
    } else {
        base_value
    };
    Ok((policy, value, chat, embedder))
}

fn persist_episode(dir: &Path, task_id: &str, episode: &EpisodeResult) -> Result<()> {
    let task_dir = dir.join("tasks").join(sanitize(task_id));
    std::fs::create_dir_all(&task_dir)?;
    let trajectory = serde_json::to_string_pretty(&episode.trajectory)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(task_dir.join("trajectory.json"), trajectory)?;
    for (i, tree) in episode.trees.iter().enumerate() {
        std::fs::write(task_dir.join(format!("tree_{i:03}.jsonl")), tree.to_records())?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_timings(path: PathBuf, timings: &[(String, u128)]) -> Result<()> {
    let mut out = String::from("task_id,wall_clock_ms\n");
    for (task, ms) in timings {
        out.push_str(&format!("{task},{ms}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_ledger(path: PathBuf, rows: &[(String, LedgerRecord)]) -> Result<()> {
    let mut out = String::from("task_id,purpose,input_tokens,output_tokens\n");
    for (task, record) in rows {
        out.push_str(&format!(
            "{task},{},{},{}\n",
            record.purpose, record.input_tokens, record.output_tokens
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn render_summary(report: &RunReport) -> String {
    let tiers = report_by_difficulty(report);
    let totals = report.totals();
    let mut out = String::new();
    out.push_str(&format!(
        "run: {}\nagent: {}\nseed: {}\nbudget_nodes: {}\n",
        report.name, report.agent, report.seed, report.budget_nodes
    ));
    out.push_str(&format!(
        "tasks: {}\nsuccesses: {}\nsuccess_rate: {:.4}\n",
        tiers.overall_tasks,
        tiers.overall_successes,
        tiers.overall_rate()
    ));
    for (tier, n, s) in &tiers.tiers {
        out.push_str(&format!(
            "{tier}: {s}/{n} ({:.4})\n",
            *s as f64 / *n as f64
        ));
    }
    out.push_str(&format!(
        "tokens_input: {}\ntokens_output: {}\ntokens_total: {}\n",
        totals.input_tokens,
        totals.output_tokens,
        totals.combined()
    ));
    out.push_str(&format!("errors: {}\n", report.error_count()));
    out
}

/// Run the suite once per node budget, with the wall-clock cap disabled so
/// the node count is the only budget. Returns one report per budget.
pub fn sweep_budget(base: &ExperimentConfig, node_counts: &[usize]) -> Result<Vec<RunReport>> {
    if node_counts.is_empty() {
        return Err(Error::Config("sweep requires at least one node count".into()));
    }
    let mut reports = Vec::new();
    for &nodes in node_counts {
        let mut config = base.clone();
        config.budget_nodes = nodes;
        config.budget_seconds = 0; // node count is the only budget in sweeps
        if let Some(dir) = &base.output_dir {
            config.output_dir = Some(dir.join(format!("nodes-{nodes}")));
        }
        reports.push(run_suite(&config)?);
    }
    Ok(reports)
}

/// The (budget, tokens, success) series emitted for scaling plots.
pub fn sweep_series_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("budget_nodes,total_tokens,success_rate\n");
    for report in reports {
        out.push_str(&format!(
            "{},{},{:.6}\n",
            report.budget_nodes,
            report.totals().combined(),
            report.success_rate()
        ));
    }
    out
}

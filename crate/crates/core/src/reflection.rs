//! Contrastive reflection: error attribution over finished episodes,
//! reflection generation, the embedding-keyed store, and the decorators
//! that inject retrieved lessons into policy and value prompts.

use crate::action::Action;
use crate::error::{Error, Result};
use crate::policy::{ActionDistribution, DecisionContext, Policy};
use crate::prompts::{self, RenderedReflection};
use crate::provider::{
    approx_tokens, ChatMessage, ChatProvider, ChatRequest, EmbeddingProvider, Purpose,
};
use crate::search::SearchTree;
use crate::trajectory::Trajectory;
use crate::value::{EvalContext, ValueEstimate, ValueEstimator};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionKind {
    Policy,
    Value,
}

/// A stored lesson: what the agent expected, what actually happened, and
/// the takeaway, keyed by an embedding of (goal, observation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub kind: ReflectionKind,
    pub goal: String,
    pub observation: String,
    /// The erroneous action text (policy) or value estimate (value).
    pub erroneous: String,
    /// Expected next observation (policy) or expected action (value).
    pub expected: String,
    /// What actually happened: next observation or actual action.
    pub actual: String,
    pub lesson: String,
    #[serde(with = "embedding_base64")]
    pub key: Vec<f32>,
}

impl Reflection {
    pub fn rendered(&self) -> RenderedReflection {
        let context = match self.kind {
            ReflectionKind::Policy => self.erroneous.clone(),
            ReflectionKind::Value => {
                let mut excerpt: String = self.observation.chars().take(200).collect();
                if excerpt.len() < self.observation.len() {
                    excerpt.push_str(" ...");
                }
                format!("(evaluated state) {excerpt}")
            }
        };
        RenderedReflection {
            objective: self.goal.clone(),
            context,
            lesson: self.lesson.clone(),
        }
    }
}

/// Embeddings persist as base64 of little-endian f32 bytes, so round-trips
/// are bit-exact.
mod embedding_base64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f32], serializer: S) -> Result<S::Ok, S::Error> {
        let mut bytes = Vec::with_capacity(v.len() * 4);
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        base64::engine::general_purpose::STANDARD
            .encode(bytes)
            .serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<f32>, D::Error> {
        let text = String::deserialize(deserializer)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)?;
        if bytes.len() % 4 != 0 {
            return Err(serde::de::Error::custom("embedding byte length not a multiple of 4"));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!(
            "embedding dimensions differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        dot += *a as f64 * *b as f64;
        nu += (*a as f64).powi(2);
        nv += (*b as f64).powi(2);
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Contract("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Default whitespace-token cap for embedding key texts.
pub const EMBED_TOKEN_LIMIT: usize = 6000;

/// The retrieval/storage key text: the goal and observation concatenated
/// into a single string. The observation's tail is truncated to the token
/// limit; the goal is always kept whole.
pub fn embed_key_text(goal: &str, observation: &str, token_limit: usize) -> String {
    let goal_tokens = approx_tokens(goal) as usize;
    let budget = token_limit.saturating_sub(goal_tokens);
    let obs_tokens: Vec<&str> = observation.split_whitespace().collect();
    if obs_tokens.len() <= budget {
        format!("{goal}\n{observation}")
    } else {
        format!("{goal}\n{}", obs_tokens[..budget].join(" "))
    }
}

/// Flat persisted store with exhaustive scan retrieval. One writer at a
/// time; readers see a consistent snapshot via the surrounding lock.
#[derive(Debug)]
pub struct ReflectionStore {
    records: Vec<Reflection>,
    dimension: usize,
    path: Option<PathBuf>,
}

impl ReflectionStore {
    pub fn in_memory(dimension: usize) -> Self {
        Self {
            records: Vec::new(),
            dimension,
            path: None,
        }
    }

    /// Open (or create) a persisted store, loading any existing records.
    pub fn open(path: impl AsRef<Path>, dimension: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: Reflection = serde_json::from_str(line).map_err(|e| {
                    Error::Parse(format!(
                        "reflection store {} line {}: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                if r.key.len() != dimension {
                    return Err(Error::Contract(format!(
                        "reflection store {} line {}: dimension {} != store dimension {}",
                        path.display(),
                        lineno + 1,
                        r.key.len(),
                        dimension
                    )));
                }
                records.push(r);
            }
        }
        Ok(Self {
            records,
            dimension,
            path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Reflection] {
        &self.records
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Append a reflection and persist it.
    pub fn add(&mut self, reflection: Reflection) -> Result<()> {
        if reflection.key.len() != self.dimension {
            return Err(Error::Contract(format!(
                "reflection embedding dimension {} != store dimension {}",
                reflection.key.len(),
                self.dimension
            )));
        }
        if reflection.lesson.trim().is_empty() {
            return Err(Error::Contract("reflection lesson is empty".into()));
        }
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            let line = serde_json::to_string(&reflection)
                .map_err(|e| Error::Parse(format!("serialize reflection: {e}")))?;
            writeln!(file, "{line}")?;
        }
        self.records.push(reflection);
        Ok(())
    }

    /// Top-`m` records by cosine similarity to `query`, all at or above
    /// `threshold`, in non-increasing order. Similarity ties keep insertion
    /// order.
    pub fn retrieve(&self, query: &[f32], m: usize, threshold: f64) -> Result<Vec<&Reflection>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, usize)> = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            let sim = cosine_similarity(query, &r.key)?;
            if sim >= threshold {
                scored.push((sim, i));
            }
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        Ok(scored
            .into_iter()
            .take(m)
            .map(|(_, i)| &self.records[i])
            .collect())
    }
}

/// Retrieval settings; the defaults are two reflections at a minimum
/// similarity of 0.25.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub m: usize,
    pub threshold: f64,
    pub token_limit: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            m: 2,
            threshold: 0.25,
            token_limit: EMBED_TOKEN_LIMIT,
        }
    }
}

/// Embed (goal, observation) and return the most relevant stored lessons.
pub fn retrieve_reflections(
    store: &ReflectionStore,
    goal: &str,
    observation: &str,
    config: &RetrievalConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<Reflection>> {
    if config.m == 0 || store.is_empty() {
        return Ok(Vec::new());
    }
    let key_text = embed_key_text(goal, observation, config.token_limit);
    let query = embedder.embed(&key_text, Purpose::Reflection)?;
    Ok(store
        .retrieve(&query, config.m, config.threshold)?
        .into_iter()
        .cloned()
        .collect())
}

// --- error attribution ---

/// Steps ranked by |V(o_{t+1}) - Q(o_t, a_t)| descending (ties keep the
/// earlier step). Steps missing either quantity are excluded with a warning.
pub fn attribute_policy_errors(
    trajectory: &Trajectory,
    trees: &[SearchTree],
    n: usize,
) -> Vec<(usize, Action)> {
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (t, step) in trajectory.steps.iter().enumerate() {
        let q = trees.get(t).and_then(|tree| tree.root_q(&step.action));
        let v_next = trees.get(t + 1).and_then(|tree| tree.root_value());
        match (q, v_next) {
            (Some(q), Some(v)) => scored.push(((v - q).abs(), t)),
            _ => log::warn!("policy error attribution: step {t} lacks Q or V, skipped"),
        }
    }
    rank(scored, n)
        .into_iter()
        .map(|t| (t, trajectory.steps[t].action.clone()))
        .collect()
}

/// Observations ranked by |V(o_t) - Q(o_{t-1}, a_{t-1})| descending.
pub fn attribute_value_errors(
    trajectory: &Trajectory,
    trees: &[SearchTree],
    n: usize,
) -> Vec<(usize, String)> {
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for t in 1..trajectory.steps.len() {
        let prev_action = &trajectory.steps[t - 1].action;
        let q = trees.get(t - 1).and_then(|tree| tree.root_q(prev_action));
        let v = trees.get(t).and_then(|tree| tree.root_value());
        match (q, v) {
            (Some(q), Some(v)) => scored.push(((v - q).abs(), t)),
            _ => log::warn!("value error attribution: step {t} lacks Q or V, skipped"),
        }
    }
    rank(scored, n)
        .into_iter()
        .map(|t| (t, trajectory.steps[t].observation.clone()))
        .collect()
}

fn rank(mut scored: Vec<(f64, usize)>, n: usize) -> Vec<usize> {
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    scored.into_iter().take(n).map(|(_, t)| t).collect()
}

// --- reflection generation ---

fn policy_prompt_messages(trajectory: &Trajectory, t: usize) -> Vec<ChatMessage> {
    let previous: Vec<String> = trajectory.steps[..t]
        .iter()
        .map(|s| s.action.canonical())
        .collect();
    let user = prompts::render(
        prompts::POLICY_USER,
        &[
            ("reflections", ""),
            ("observation", &trajectory.steps[t].observation),
            ("objective", &trajectory.goal),
            ("previous_actions", &prompts::previous_actions(&previous)),
        ],
    );
    vec![prompts::system_message(), ChatMessage::user(user)]
}

fn next_observation(trajectory: &Trajectory, t: usize) -> Option<String> {
    if t + 1 < trajectory.steps.len() {
        Some(trajectory.steps[t + 1].observation.clone())
    } else {
        trajectory.final_observation.clone()
    }
}

/// Policy reflection for the erroneous action at step `t`: first predict
/// the expected transition, then contrast it with what actually happened.
/// Two provider calls plus one embedding call.
pub fn generate_policy_reflection(
    trajectory: &Trajectory,
    t: usize,
    provider: &dyn ChatProvider,
    embedder: &dyn EmbeddingProvider,
    token_limit: usize,
) -> Result<Reflection> {
    let step = trajectory
        .steps
        .get(t)
        .ok_or_else(|| Error::Contract(format!("trajectory has no step {t}")))?;
    let actual = next_observation(trajectory, t).ok_or_else(|| {
        Error::Contract(format!("step {t} has no recorded next observation"))
    })?;
    let action_text = format!(
        "In summary, the next action I will perform is ```{}```",
        step.action.canonical()
    );

    let mut messages = policy_prompt_messages(trajectory, t);
    messages.push(ChatMessage::assistant(action_text.clone()));
    messages.push(ChatMessage::user(prompts::EXPECTATION_USER));
    let expected = provider
        .chat_complete(&ChatRequest::new(Purpose::Reflection, messages))?
        .text;

    let mut messages = policy_prompt_messages(trajectory, t);
    messages.push(ChatMessage::assistant(format!(
        "{action_text}\n\nExpectation: {expected}"
    )));
    messages.push(ChatMessage::user(prompts::render(
        prompts::POLICY_REFLECTION_USER,
        &[("next_observation", actual.as_str())],
    )));
    let lesson = provider
        .chat_complete(&ChatRequest::new(Purpose::Reflection, messages))?
        .text;

    let key_text = embed_key_text(&trajectory.goal, &step.observation, token_limit);
    let key = embedder.embed(&key_text, Purpose::Reflection)?;
    Ok(Reflection {
        kind: ReflectionKind::Policy,
        goal: trajectory.goal.clone(),
        observation: step.observation.clone(),
        erroneous: step.action.canonical(),
        expected,
        actual,
        lesson,
        key,
    })
}

/// Value reflection for the erroneous estimate at step `t`: predict the
/// action a competent agent would take there, then contrast it with the
/// action that was actually taken.
pub fn generate_value_reflection(
    trajectory: &Trajectory,
    t: usize,
    provider: &dyn ChatProvider,
    embedder: &dyn EmbeddingProvider,
    token_limit: usize,
) -> Result<Reflection> {
    if t == 0 {
        return Err(Error::Contract(
            "value reflection needs a preceding action (t >= 1)".into(),
        ));
    }
    let step = trajectory
        .steps
        .get(t)
        .ok_or_else(|| Error::Contract(format!("trajectory has no step {t}")))?;
    let previous_action = trajectory.steps[t - 1].action.canonical();
    let actual_action = step.action.canonical();
    let history: Vec<String> = trajectory.steps[..t]
        .iter()
        .map(|s| s.action.canonical())
        .collect();
    let trajectory_text = prompts::previous_actions(&history);

    let user = prompts::render(
        prompts::VALUE_EXPECTED_ACTION_USER,
        &[
            ("objective", trajectory.goal.as_str()),
            ("trajectory", trajectory_text.as_str()),
            ("observation", step.observation.as_str()),
        ],
    );
    let expected = provider
        .chat_complete(&ChatRequest::new(
            Purpose::Reflection,
            vec![prompts::system_message(), ChatMessage::user(user)],
        ))?
        .text;

    let user = prompts::render(
        prompts::VALUE_REFLECTION_USER,
        &[
            ("objective", trajectory.goal.as_str()),
            ("previous_action", previous_action.as_str()),
            ("observation", step.observation.as_str()),
            ("expected_action", expected.as_str()),
            ("actual_action", actual_action.as_str()),
        ],
    );
    let lesson = provider
        .chat_complete(&ChatRequest::new(
            Purpose::Reflection,
            vec![prompts::system_message(), ChatMessage::user(user)],
        ))?
        .text;

    let key_text = embed_key_text(&trajectory.goal, &step.observation, token_limit);
    let key = embedder.embed(&key_text, Purpose::Reflection)?;
    Ok(Reflection {
        kind: ReflectionKind::Value,
        goal: trajectory.goal.clone(),
        observation: step.observation.clone(),
        erroneous: format!("value estimate at step {t}"),
        expected,
        actual: actual_action,
        lesson,
        key,
    })
}

// --- improvement decorators ---

pub type SharedStore = Arc<RwLock<ReflectionStore>>;

pub fn shared_store(store: ReflectionStore) -> SharedStore {
    Arc::new(RwLock::new(store))
}

/// Wraps a policy so each proposal first retrieves relevant lessons for
/// (goal, current observation) and injects them into the prompt context.
pub struct ReflectivePolicy<P> {
    inner: P,
    store: SharedStore,
    embedder: Arc<dyn EmbeddingProvider>,
    config: RetrievalConfig,
}

impl<P: Policy> ReflectivePolicy<P> {
    pub fn new(
        inner: P,
        store: SharedStore,
        embedder: Arc<dyn EmbeddingProvider>,
        config: RetrievalConfig,
    ) -> Self {
        Self {
            inner,
            store,
            embedder,
            config,
        }
    }

    fn enrich(&self, ctx: &DecisionContext) -> Result<DecisionContext> {
        let store = self.store.read().unwrap();
        let found = retrieve_reflections(
            &store,
            &ctx.goal,
            &ctx.observation,
            &self.config,
            self.embedder.as_ref(),
        )?;
        let mut enriched = ctx.clone();
        enriched.reflections = found.iter().map(Reflection::rendered).collect();
        Ok(enriched)
    }
}

impl<P: Policy> Policy for ReflectivePolicy<P> {
    fn propose(&self, ctx: &DecisionContext) -> Result<ActionDistribution> {
        self.inner.propose(&self.enrich(ctx)?)
    }

    fn propose_one(&self, ctx: &DecisionContext) -> Result<Action> {
        self.inner.propose_one(&self.enrich(ctx)?)
    }
}

/// Same wrapping for a value estimator.
pub struct ReflectiveValue<V> {
    inner: V,
    store: SharedStore,
    embedder: Arc<dyn EmbeddingProvider>,
    config: RetrievalConfig,
}

impl<V: ValueEstimator> ReflectiveValue<V> {
    pub fn new(
        inner: V,
        store: SharedStore,
        embedder: Arc<dyn EmbeddingProvider>,
        config: RetrievalConfig,
    ) -> Self {
        Self {
            inner,
            store,
            embedder,
            config,
        }
    }
}

impl<V: ValueEstimator> ValueEstimator for ReflectiveValue<V> {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate> {
        let store = self.store.read().unwrap();
        let found = retrieve_reflections(
            &store,
            &ctx.goal,
            &ctx.observation,
            &self.config,
            self.embedder.as_ref(),
        )?;
        let mut enriched = ctx.clone();
        enriched.reflections = found.iter().map(Reflection::rendered).collect();
        self.inner.estimate(&enriched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::scripted::{ScriptedChatProvider, ScriptedEmbedder};
    use crate::search::tree::ROOT;
    use crate::trajectory::TrajectoryStep;
    use std::sync::Mutex;

    fn unit(v: &[f32]) -> Vec<f32> {
        v.to_vec()
    }

    #[test]
    fn cosine_oracles() {
        let u = unit(&[1.0, 2.0, 2.0]);
        let v = unit(&[2.0, 1.0, 2.0]);
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&u, &v).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        let x = unit(&[1.0, 0.0]);
        let y = unit(&[0.0, 3.0]);
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn cosine_rejects_zero_norm_and_dim_mismatch() {
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    fn reflection(kind: ReflectionKind, lesson: &str, key: Vec<f32>) -> Reflection {
        Reflection {
            kind,
            goal: "goal".into(),
            observation: "obs".into(),
            erroneous: "click [1]".into(),
            expected: "exp".into(),
            actual: "act".into(),
            lesson: lesson.into(),
            key,
        }
    }

    #[test]
    fn store_grows_and_validates_dimension() {
        let mut store = ReflectionStore::in_memory(3);
        store
            .add(reflection(ReflectionKind::Policy, "l", vec![1.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(store.len(), 1);
        assert!(store
            .add(reflection(ReflectionKind::Policy, "l", vec![1.0, 0.0]))
            .is_err());
        assert!(store
            .add(reflection(ReflectionKind::Policy, "  ", vec![0.0, 1.0, 0.0]))
            .is_err());
    }

    #[test]
    fn persistence_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.jsonl");
        let key: Vec<f32> = vec![0.123_456_79, -4.2e-7, 1.0, f32::MIN_POSITIVE];
        {
            let mut store = ReflectionStore::open(&path, 4).unwrap();
            store
                .add(reflection(ReflectionKind::Policy, "lesson one", key.clone()))
                .unwrap();
            store
                .add(reflection(ReflectionKind::Value, "lesson two", vec![1.0; 4]))
                .unwrap();
        }
        let reloaded = ReflectionStore::open(&path, 4).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.records()[0].key, key);
        assert_eq!(reloaded.records()[0].lesson, "lesson one");
        assert_eq!(reloaded.records()[1].kind, ReflectionKind::Value);
    }

    #[test]
    fn retrieval_sorts_filters_and_caps() {
        let mut store = ReflectionStore::in_memory(2);
        // query (1,0): similarities 0.9-ish, 0.3-ish, 0.2-ish by angle
        let entry = |angle: f64, lesson: &str| {
            reflection(
                ReflectionKind::Policy,
                lesson,
                vec![angle.cos() as f32, angle.sin() as f32],
            )
        };
        store.add(entry(0.9f64.acos(), "sim-0.9")).unwrap();
        store.add(entry(0.3f64.acos(), "sim-0.3")).unwrap();
        store.add(entry(0.2f64.acos(), "sim-0.2")).unwrap();
        let query = vec![1.0, 0.0];
        let got = store.retrieve(&query, 2, 0.25).unwrap();
        let lessons: Vec<&str> = got.iter().map(|r| r.lesson.as_str()).collect();
        assert_eq!(lessons, vec!["sim-0.9", "sim-0.3"]);
        assert!(store.retrieve(&query, 0, 0.25).unwrap().is_empty());
        // identical key retrieves itself first with similarity 1.0
        let exact = store.retrieve(&[0.9f64.acos().cos() as f32, 0.9f64.acos().sin() as f32], 3, 0.25).unwrap();
        assert_eq!(exact[0].lesson, "sim-0.9");
    }

    fn tree_with(q: f64, action: &str, root_value: f64) -> SearchTree {
        let mut tree = SearchTree::new("t", "g", "obs".into(), None);
        let mut samples = Vec::new();
        samples.extend(std::iter::repeat_n(Action::parse(action).unwrap(), 10));
        let dist = crate::policy::aggregate_actions(&samples, 5).unwrap();
        tree.attach_children(ROOT, &dist, 5);
        tree.backpropagate(&[(ROOT, 0)], q).unwrap();
        tree.set_value(ROOT, root_value);
        tree
    }

    fn trajectory_of(actions: &[&str]) -> Trajectory {
        let mut t = Trajectory::new("t", "g", "rmcts");
        for (i, a) in actions.iter().enumerate() {
            t.steps.push(TrajectoryStep {
                observation: format!("obs {i}"),
                action: Action::parse(a).unwrap(),
                value_estimate: None,
            });
        }
        t.final_observation = Some("final obs".into());
        t
    }

    #[test]
    fn policy_attribution_ranks_by_td_gap() {
        // errors |V(o_{t+1}) - Q(o_t, a_t)|: t0 -> |0.6-0.5|=0.1, t1 -> |0.9-0.3|=0.6,
        // t2 -> |0.2-0.5|=0.3, t3 excluded (no tree 4)
        let trajectory = trajectory_of(&["click [1]", "click [2]", "click [3]", "click [4]"]);
        let trees = vec![
            tree_with(0.5, "click [1]", 0.5),
            tree_with(0.3, "click [2]", 0.6),
            tree_with(0.5, "click [3]", 0.9),
            tree_with(0.5, "click [4]", 0.2),
        ];
        let ranked = attribute_policy_errors(&trajectory, &trees, 2);
        let steps: Vec<usize> = ranked.iter().map(|(t, _)| *t).collect();
        assert_eq!(steps, vec![1, 2]);
        assert_eq!(ranked[0].1.canonical(), "click [2]");
        // n larger than candidates returns what exists
        assert_eq!(attribute_policy_errors(&trajectory, &trees, 10).len(), 3);
    }

    #[test]
    fn policy_attribution_all_zero_ties_keep_step_order() {
        let trajectory = trajectory_of(&["click [1]", "click [1]", "click [1]"]);
        let trees = vec![
            tree_with(0.5, "click [1]", 0.5),
            tree_with(0.5, "click [1]", 0.5),
            tree_with(0.5, "click [1]", 0.5),
        ];
        let ranked = attribute_policy_errors(&trajectory, &trees, 3);
        let steps: Vec<usize> = ranked.iter().map(|(t, _)| *t).collect();
        assert_eq!(steps, vec![0, 1]); // last step excluded (no next V)
    }

    #[test]
    fn value_attribution_picks_the_largest_gap() {
        // t1: |V(o_1) - Q(o_0,a_0)| = |0.6-0.4| = 0.2, t2: |0.9-0.4| = 0.5
        let trajectory = trajectory_of(&["click [1]", "click [2]", "click [3]"]);
        let trees = vec![
            tree_with(0.4, "click [1]", 0.3),
            tree_with(0.4, "click [2]", 0.6),
            tree_with(0.1, "click [3]", 0.9),
        ];
        let ranked = attribute_value_errors(&trajectory, &trees, 1);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].0, 2);
        assert_eq!(ranked[0].1, "obs 2");
    }

    #[test]
    fn single_step_trajectory_yields_no_value_candidates() {
        let trajectory = trajectory_of(&["stop [x]"]);
        let trees = vec![tree_with(0.4, "stop [x]", 0.3)];
        assert!(attribute_value_errors(&trajectory, &trees, 1).is_empty());
        // and policy attribution has nothing either (no next-step V)
        assert!(attribute_policy_errors(&trajectory, &trees, 3).is_empty());
    }

    /// Embedder that records every text it is asked to embed.
    struct RecordingEmbedder {
        inner: ScriptedEmbedder,
        calls: Mutex<Vec<String>>,
    }

    impl EmbeddingProvider for RecordingEmbedder {
        fn embed(&self, text: &str, purpose: Purpose) -> Result<Vec<f32>> {
            self.calls.lock().unwrap().push(text.to_string());
            self.inner.embed(text, purpose)
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
    }

    #[test]
    fn policy_reflection_pipeline_is_scripted_and_keys_on_goal_plus_observation() {
        let trajectory = trajectory_of(&["click [1]", "stop []"]);
        let provider = ScriptedChatProvider::new()
            .at_index(Purpose::Reflection, 0, "I expect results to appear")
            .at_index(Purpose::Reflection, 1, "The search was too broad; use filters instead");
        let embedder = RecordingEmbedder {
            inner: ScriptedEmbedder::default(),
            calls: Mutex::new(Vec::new()),
        };
        let r = generate_policy_reflection(&trajectory, 0, &provider, &embedder, EMBED_TOKEN_LIMIT)
            .unwrap();
        assert_eq!(r.kind, ReflectionKind::Policy);
        assert_eq!(r.expected, "I expect results to appear");
        assert_eq!(r.lesson, "The search was too broad; use filters instead");
        assert_eq!(r.actual, "obs 1");
        assert_eq!(r.erroneous, "click [1]");
        // the embedding key is the concatenated (goal, observation) string
        let calls = embedder.calls.lock().unwrap();
        assert_eq!(calls.as_slice(), ["g\nobs 0"]);
    }

    #[test]
    fn value_reflection_contrasts_expected_and_actual_actions() {
        let trajectory = trajectory_of(&["click [1]", "click [2]", "stop []"]);
        let provider = ScriptedChatProvider::new()
            .at_index(Purpose::Reflection, 0, "a competent agent would sort by price")
            .at_index(Purpose::Reflection, 1, "high estimates on unsorted listings are misleading");
        let embedder = ScriptedEmbedder::default();
        let r = generate_value_reflection(&trajectory, 1, &provider, &embedder, EMBED_TOKEN_LIMIT)
            .unwrap();
        assert_eq!(r.kind, ReflectionKind::Value);
        assert_eq!(r.expected, "a competent agent would sort by price");
        assert_eq!(r.actual, "click [2]");
        assert!(generate_value_reflection(&trajectory, 0, &provider, &embedder, EMBED_TOKEN_LIMIT).is_err());
    }

    #[test]
    fn embed_key_text_truncates_observation_tail_only() {
        let goal = "find the thing";
        let obs = "a b c d e f g h";
        assert_eq!(embed_key_text(goal, obs, 100), "find the thing\na b c d e f g h");
        assert_eq!(embed_key_text(goal, obs, 7), "find the thing\na b c d");
    }

    #[test]
    fn reflective_policy_injects_retrieved_lessons() {
        use crate::policy::PolicyConfig;
        let embedder = Arc::new(ScriptedEmbedder::default());
        let mut store = ReflectionStore::in_memory(64);
        let goal = "find the red toyota";
        let observation = "[5] [INPUT] []\nURL: http://x/";
        let key_text = embed_key_text(goal, observation, EMBED_TOKEN_LIMIT);
        let key = embedder.embed(&key_text, Purpose::Reflection).unwrap();
        store
            .add(Reflection {
                kind: ReflectionKind::Policy,
                goal: goal.into(),
                observation: observation.into(),
                erroneous: "click [1]".into(),
                expected: "e".into(),
                actual: "a".into(),
                lesson: "the first link is an ad, use the search box".into(),
                key,
            })
            .unwrap();
        let provider = Arc::new(
            ScriptedChatProvider::new()
                .when_contains(Purpose::Policy, "use the search box", "```type [5] [red toyota]```")
                .respond(Purpose::Policy, "```click [1]```"),
        );
        let chat = crate::policy::ChatPolicy::new(provider, PolicyConfig::default());
        let reflective = ReflectivePolicy::new(
            chat,
            shared_store(store),
            embedder,
            RetrievalConfig::default(),
        );
        let ctx = DecisionContext {
            goal: goal.into(),
            observation: observation.into(),
            ..Default::default()
        };
        // retrieval hits (identical key text -> similarity 1.0) and the
        // injected lesson flips the scripted response
        let action = reflective.propose_one(&ctx).unwrap();
        assert_eq!(action.canonical(), "type [5] [red toyota]");
    }
}

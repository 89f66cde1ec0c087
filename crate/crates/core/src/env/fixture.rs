//! Site fixtures: the TOML schema describing a mock website and its tasks,
//! parsed and validated into an immutable [`PageGraph`].
//!
//! See `docs/fixture-format.md` for the field-by-field reference.

use crate::action::Action;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        };
        f.write_str(s)
    }
}

/// How a task's terminal reward is decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evaluator {
    /// Final focused page URL must equal `expected` exactly.
    UrlMatch { expected: String },
    /// Normalized stop answer must equal normalized `expected`.
    AnswerMatch { expected: String },
    /// Site-state `key` must equal `expected`.
    StatePredicate { key: String, expected: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub goal: String,
    pub difficulty: Difficulty,
    pub eval: Evaluator,
    /// Ground-truth state values by page id (plus `_default`), consumed by
    /// the scripted value oracle. Optional; empty when running live models.
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    /// Candidate actions by page id for the scripted policy oracle, ordered
    /// by descending prior.
    #[serde(default)]
    pub hints: BTreeMap<String, Vec<String>>,
    /// Observation substring that marks success for the scripted value
    /// oracle (used by state-predicate tasks).
    #[serde(default)]
    pub success_text: Option<String>,
}

/// A state-mutation or navigation effect attached to an element or key.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectOp {
    /// Navigate to a page.
    Goto(String),
    /// Store the typed text under a site-state key (type effects only).
    Store(String),
    /// Set a site-state key to a literal value.
    Set(String, String),
    /// Navigate to `table[state[key]]`, falling back to the table's
    /// `_default` entry.
    Lookup { table: String, key: String },
}

impl EffectOp {
    /// Parse the colon-separated op syntax: `goto:page`, `store:key`,
    /// `set:key:value`, `lookup:table:key`.
    pub fn parse(s: &str) -> Result<EffectOp> {
        let mut parts = s.splitn(3, ':');
        let verb = parts.next().unwrap_or_default();
        let a = parts.next();
        let b = parts.next();
        match (verb, a, b) {
            ("goto", Some(page), None) => Ok(EffectOp::Goto(page.to_string())),
            ("store", Some(key), None) => Ok(EffectOp::Store(key.to_string())),
            ("set", Some(key), Some(value)) => {
                Ok(EffectOp::Set(key.to_string(), value.to_string()))
            }
            ("lookup", Some(table), Some(key)) => Ok(EffectOp::Lookup {
                table: table.to_string(),
                key: key.to_string(),
            }),
            _ => Err(Error::Fixture(format!("cannot parse effect op `{s}`"))),
        }
    }
}

/// Condition `key=value` gating an item's visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct ShowIf {
    pub key: String,
    pub value: String,
}

impl ShowIf {
    fn parse(s: &str) -> Result<ShowIf> {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Fixture(format!("show_if `{s}` is not of the form key=value")))?;
        Ok(ShowIf {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub id: u32,
    pub kind: String,
    pub text: String,
    /// Render the current value of this site-state key instead of `text`.
    pub value_key: Option<String>,
    pub on_click: Vec<EffectOp>,
    pub on_type: Vec<EffectOp>,
    pub show_if: Option<ShowIf>,
}

#[derive(Debug, Clone)]
pub enum PageItem {
    Text { text: String, show_if: Option<ShowIf> },
    Element(Element),
}

#[derive(Debug, Clone)]
pub struct Page {
    pub id: String,
    pub url: String,
    pub title: String,
    pub items: Vec<PageItem>,
    pub on_press: BTreeMap<String, Vec<EffectOp>>,
}

impl Page {
    pub fn element(&self, id: u32) -> Option<&Element> {
        self.items.iter().find_map(|item| match item {
            PageItem::Element(e) if e.id == id => Some(e),
            _ => None,
        })
    }
}

/// Immutable, validated mock website: pages, transitions, lookup tables,
/// site-state schema, and its task suite.
#[derive(Debug)]
pub struct PageGraph {
    pub name: String,
    pub initial_page: String,
    pub viewport_lines: usize,
    pub state_defaults: BTreeMap<String, String>,
    pub tables: BTreeMap<String, BTreeMap<String, String>>,
    pages: Vec<Page>,
    page_index: BTreeMap<String, usize>,
    url_index: BTreeMap<String, usize>,
    pub tasks: Vec<TaskSpec>,
}

impl PageGraph {
    pub fn page(&self, id: &str) -> Option<&Page> {
        self.page_index.get(id).map(|&i| &self.pages[i])
    }

    pub fn page_by_url(&self, url: &str) -> Option<&Page> {
        self.url_index.get(url).map(|&i| &self.pages[i])
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn pages(&self) -> impl Iterator<Item = &Page> {
        self.pages.iter()
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

// --- raw serde layer (pre-validation) ---

#[derive(Deserialize)]
struct RawFixture {
    #[allow(dead_code)]
    schema: Option<u32>,
    name: String,
    initial_page: String,
    #[serde(default = "default_viewport")]
    viewport_lines: usize,
    #[serde(default)]
    state: BTreeMap<String, String>,
    #[serde(default)]
    tables: BTreeMap<String, BTreeMap<String, String>>,
    pages: Vec<RawPage>,
    #[serde(default)]
    tasks: Vec<TaskSpec>,
}

fn default_viewport() -> usize {
    40
}

#[derive(Deserialize)]
struct RawPage {
    id: String,
    url: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    items: Vec<RawItem>,
    #[serde(default)]
    on_press: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct RawItem {
    id: Option<u32>,
    #[serde(default)]
    kind: String,
    #[serde(default)]
    text: String,
    value_key: Option<String>,
    #[serde(default)]
    on_click: Vec<String>,
    #[serde(default)]
    on_type: Vec<String>,
    show_if: Option<String>,
}

/// Load and validate a site fixture from a TOML file.
pub fn load_site(path: impl AsRef<Path>) -> Result<Arc<PageGraph>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Fixture(format!("cannot read {}: {e}", path.display())))?;
    load_site_str(&text)
}

/// Same as [`load_site`] but from fixture text already in memory.
pub fn load_site_str(text: &str) -> Result<Arc<PageGraph>> {
    let raw: RawFixture =
        toml::from_str(text).map_err(|e| Error::Fixture(format!("TOML parse error: {e}")))?;
    validate(raw).map(Arc::new)
}

fn validate(raw: RawFixture) -> Result<PageGraph> {
    let mut pages = Vec::with_capacity(raw.pages.len());
    let mut page_index = BTreeMap::new();
    let mut url_index = BTreeMap::new();

    for raw_page in &raw.pages {
        if page_index.contains_key(&raw_page.id) {
            return Err(Error::Fixture(format!("duplicate page id `{}`", raw_page.id)));
        }
        if url_index.contains_key(&raw_page.url) {
            return Err(Error::Fixture(format!(
                "page `{}`: duplicate url `{}`",
                raw_page.id, raw_page.url
            )));
        }
        let mut items = Vec::with_capacity(raw_page.items.len());
        let mut seen_ids = BTreeSet::new();
        for item in &raw_page.items {
            let show_if = item.show_if.as_deref().map(ShowIf::parse).transpose()?;
            match item.id {
                None => items.push(PageItem::Text {
                    text: item.text.clone(),
                    show_if,
                }),
                Some(id) => {
                    if !seen_ids.insert(id) {
                        return Err(Error::Fixture(format!(
                            "page `{}`: duplicate element id {id}",
                            raw_page.id
                        )));
                    }
                    let parse_ops = |ops: &[String], what: &str| -> Result<Vec<EffectOp>> {
                        ops.iter()
                            .map(|s| {
                                EffectOp::parse(s).map_err(|e| {
                                    Error::Fixture(format!(
                                        "page `{}` element {id} {what}: {e}",
                                        raw_page.id
                                    ))
                                })
                            })
                            .collect()
                    };
                    items.push(PageItem::Element(Element {
                        id,
                        kind: if item.kind.is_empty() {
                            "BUTTON".to_string()
                        } else {
                            item.kind.clone()
                        },
                        text: item.text.clone(),
                        value_key: item.value_key.clone(),
                        on_click: parse_ops(&item.on_click, "on_click")?,
                        on_type: parse_ops(&item.on_type, "on_type")?,
                        show_if,
                    }));
                }
            }
        }
        let mut on_press = BTreeMap::new();
        for (key, ops) in &raw_page.on_press {
            let parsed: Vec<EffectOp> = ops
                .iter()
                .map(|s| {
                    EffectOp::parse(s).map_err(|e| {
                        Error::Fixture(format!("page `{}` on_press `{key}`: {e}", raw_page.id))
                    })
                })
                .collect::<Result<_>>()?;
            on_press.insert(key.clone(), parsed);
        }
        page_index.insert(raw_page.id.clone(), pages.len());
        url_index.insert(raw_page.url.clone(), pages.len());
        pages.push(Page {
            id: raw_page.id.clone(),
            url: raw_page.url.clone(),
            title: raw_page.title.clone(),
            items,
            on_press,
        });
    }

    let graph = PageGraph {
        name: raw.name,
        initial_page: raw.initial_page,
        viewport_lines: raw.viewport_lines.max(1),
        state_defaults: raw.state,
        tables: raw.tables,
        pages,
        page_index,
        url_index,
        tasks: raw.tasks,
    };
    check_references(&graph)?;
    Ok(graph)
}

fn check_references(graph: &PageGraph) -> Result<()> {
    if graph.page(&graph.initial_page).is_none() {
        return Err(Error::Fixture(format!(
            "initial_page `{}` does not exist",
            graph.initial_page
        )));
    }
    for (table, entries) in &graph.tables {
        for (value, page) in entries {
            if graph.page(page).is_none() {
                return Err(Error::Fixture(format!(
                    "table `{table}` entry `{value}`: target page `{page}` does not exist"
                )));
            }
        }
    }
    let check_ops = |ops: &[EffectOp], at: &str| -> Result<()> {
        for op in ops {
            match op {
                EffectOp::Goto(page) => {
                    if graph.page(page).is_none() {
                        return Err(Error::Fixture(format!(
                            "{at}: goto target page `{page}` does not exist"
                        )));
                    }
                }
                EffectOp::Store(key) | EffectOp::Set(key, _) => {
                    if !graph.state_defaults.contains_key(key) {
                        return Err(Error::Fixture(format!(
                            "{at}: state key `{key}` is not declared in [state]"
                        )));
                    }
                }
                EffectOp::Lookup { table, key } => {
                    if !graph.tables.contains_key(table) {
                        return Err(Error::Fixture(format!(
                            "{at}: lookup table `{table}` does not exist"
                        )));
                    }
                    if !graph.state_defaults.contains_key(key) {
                        return Err(Error::Fixture(format!(
                            "{at}: lookup state key `{key}` is not declared in [state]"
                        )));
                    }
                }
            }
        }
        Ok(())
    };
    for page in graph.pages() {
        for item in &page.items {
            match item {
                PageItem::Text { show_if, .. } => {
                    if let Some(cond) = show_if {
                        if !graph.state_defaults.contains_key(&cond.key) {
                            return Err(Error::Fixture(format!(
                                "page `{}`: show_if key `{}` is not declared in [state]",
                                page.id, cond.key
                            )));
                        }
                    }
                }
                PageItem::Element(e) => {
                    let at = format!("page `{}` element {}", page.id, e.id);
                    check_ops(&e.on_click, &at)?;
                    check_ops(&e.on_type, &at)?;
                    if let Some(key) = &e.value_key {
                        if !graph.state_defaults.contains_key(key) {
                            return Err(Error::Fixture(format!(
                                "{at}: value_key `{key}` is not declared in [state]"
                            )));
                        }
                    }
                    if let Some(cond) = &e.show_if {
                        if !graph.state_defaults.contains_key(&cond.key) {
                            return Err(Error::Fixture(format!(
                                "{at}: show_if key `{}` is not declared in [state]",
                                cond.key
                            )));
                        }
                    }
                }
            }
        }
        for (key, ops) in &page.on_press {
            check_ops(ops, &format!("page `{}` on_press `{key}`", page.id))?;
        }
    }
    let mut task_ids = BTreeSet::new();
    for task in &graph.tasks {
        if !task_ids.insert(&task.id) {
            return Err(Error::Fixture(format!("duplicate task id `{}`", task.id)));
        }
        match &task.eval {
            Evaluator::UrlMatch { expected } => {
                if graph.page_by_url(expected).is_none() {
                    return Err(Error::Fixture(format!(
                        "task `{}`: url-match expected url `{expected}` matches no page",
                        task.id
                    )));
                }
            }
            Evaluator::StatePredicate { key, .. } => {
                if !graph.state_defaults.contains_key(key) {
                    return Err(Error::Fixture(format!(
                        "task `{}`: state-predicate key `{key}` is not declared in [state]",
                        task.id
                    )));
                }
            }
            Evaluator::AnswerMatch { .. } => {}
        }
        for (page, hints) in &task.hints {
            if graph.page(page).is_none() {
                return Err(Error::Fixture(format!(
                    "task `{}`: hints reference unknown page `{page}`",
                    task.id
                )));
            }
            for hint in hints {
                Action::parse(hint).map_err(|e| {
                    Error::Fixture(format!(
                        "task `{}` hints for `{page}`: bad action `{hint}`: {e}",
                        task.id
                    ))
                })?;
            }
        }
        for page in task.values.keys() {
            if page != "_default" && graph.page(page).is_none() {
                return Err(Error::Fixture(format!(
                    "task `{}`: values reference unknown page `{page}`",
                    task.id
                )));
            }
        }
    }
    Ok(())
}

/// The three bundled sites, compiled into the crate so tests and the CLI
/// work regardless of working directory.
pub mod bundled {
    use super::{load_site_str, PageGraph};
    use crate::error::Result;
    use std::sync::Arc;

    pub const MINI_CLASSIFIEDS: &str =
        include_str!("../../../../fixtures/mini-classifieds.toml");
    pub const MINI_FORUM: &str = include_str!("../../../../fixtures/mini-forum.toml");
    pub const MINI_SHOP: &str = include_str!("../../../../fixtures/mini-shop.toml");

    pub fn mini_classifieds() -> Result<Arc<PageGraph>> {
        load_site_str(MINI_CLASSIFIEDS)
    }

    pub fn mini_forum() -> Result<Arc<PageGraph>> {
        load_site_str(MINI_FORUM)
    }

    pub fn mini_shop() -> Result<Arc<PageGraph>> {
        load_site_str(MINI_SHOP)
    }

    /// All bundled sites in a fixed order.
    pub fn all() -> Result<Vec<Arc<PageGraph>>> {
        Ok(vec![mini_classifieds()?, mini_forum()?, mini_shop()?])
    }
}

//! The deterministic mock-web environment: a state machine over a
//! [`PageGraph`] with text accessibility-tree observations, tab and history
//! handling, snapshot/restore, and terminal-reward evaluation.

use super::fixture::{EffectOp, Evaluator, PageGraph, PageItem, TaskSpec};
use super::{Environment, SnapshotToken};
use crate::action::{Action, ScrollDirection};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Tab {
    pub page: String,
    pub back_stack: Vec<String>,
    pub forward_stack: Vec<String>,
    pub scroll: usize,
}

impl Tab {
    fn at(page: impl Into<String>) -> Self {
        Self {
            page: page.into(),
            back_stack: Vec::new(),
            forward_stack: Vec::new(),
            scroll: 0,
        }
    }
}

/// Complete environment state: everything an observation or a reward can
/// depend on lives here, so cloning it is a full snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub tabs: Vec<Tab>,
    pub focused: usize,
    pub site_state: BTreeMap<String, String>,
    pub steps: u32,
    pub finished: bool,
    pub answer: Option<String>,
    /// Transient notes describing the previous step, rendered in the
    /// observation footer and cleared on the next step.
    pub banner: Option<String>,
    pub hovered: Option<u32>,
}

impl EnvState {
    fn fresh(graph: &PageGraph) -> Self {
        Self {
            tabs: vec![Tab::at(graph.initial_page.clone())],
            focused: 0,
            site_state: graph.state_defaults.clone(),
            steps: 0,
            finished: false,
            answer: None,
            banner: None,
            hovered: None,
        }
    }

    pub fn current_page_id(&self) -> &str {
        &self.tabs[self.focused].page
    }
}

pub struct WebEnv {
    graph: Arc<PageGraph>,
    task: TaskSpec,
    state: EnvState,
    snapshots: BTreeMap<u64, EnvState>,
    episode: u64,
    next_snapshot: u64,
}

impl WebEnv {
    /// Bind a task and start a fresh episode at the initial page.
    pub fn new(graph: Arc<PageGraph>, task_id: &str) -> Result<Self> {
        let task = graph
            .task(task_id)
            .ok_or_else(|| Error::Env(format!("unknown task `{task_id}`")))?
            .clone();
        let state = EnvState::fresh(&graph);
        Ok(Self {
            graph,
            task,
            state,
            snapshots: BTreeMap::new(),
            episode: 1,
            next_snapshot: 0,
        })
    }

    /// Start a fresh episode: site-state reverts to defaults, history and
    /// snapshots are discarded, and old snapshot tokens become stale.
    pub fn reset(&mut self) {
        self.state = EnvState::fresh(&self.graph);
        self.snapshots.clear();
        self.episode += 1;
        self.next_snapshot = 0;
    }

    pub fn graph(&self) -> &Arc<PageGraph> {
        &self.graph
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }

    fn navigate(&mut self, page_id: String) {
        let tab = &mut self.state.tabs[self.state.focused];
        if tab.page != page_id {
            tab.back_stack.push(tab.page.clone());
            tab.forward_stack.clear();
            tab.page = page_id;
            tab.scroll = 0;
        }
    }

    fn apply_ops(&mut self, ops: &[EffectOp], typed_text: Option<&str>) {
        for op in ops {
            match op {
                EffectOp::Goto(page) => self.navigate(page.clone()),
                EffectOp::Store(key) => {
                    if let Some(text) = typed_text {
                        self.state
                            .site_state
                            .insert(key.clone(), text.trim().to_string());
                    }
                }
                EffectOp::Set(key, value) => {
                    self.state.site_state.insert(key.clone(), value.clone());
                }
                EffectOp::Lookup { table, key } => {
                    let value = self
                        .state
                        .site_state
                        .get(key)
                        .cloned()
                        .unwrap_or_default()
                        .trim()
                        .to_lowercase();
                    let entries = &self.graph.tables[table];
                    let target = entries
                        .get(&value)
                        .or_else(|| entries.get("_default"))
                        .cloned();
                    match target {
                        Some(page) => self.navigate(page),
                        None => {
                            self.state.banner =
                                Some(format!("Error: no result for `{value}` in {table}"))
                        }
                    }
                }
            }
        }
    }

    fn element_banner(&mut self, elem: &str) {
        self.state.banner = Some(format!(
            "Error: no element with id {elem} on this page"
        ));
    }

    /// Resolve an element id string against the current page; wrong ids
    /// produce an error banner instead of failing the step.
    fn parse_element(&mut self, elem: &str) -> Option<u32> {
        let id = match elem.trim().parse::<u32>() {
            Ok(id) => id,
            Err(_) => {
                self.element_banner(elem);
                return None;
            }
        };
        let page = self.graph.page(self.state.current_page_id()).expect("page exists");
        let visible = page
            .element(id)
            .map(|e| match &e.show_if {
                Some(cond) => {
                    self.state.site_state.get(&cond.key).map(String::as_str)
                        == Some(cond.value.as_str())
                }
                None => true,
            })
            .unwrap_or(false);
        if visible {
            Some(id)
        } else {
            self.element_banner(elem);
            None
        }
    }
}

/// Render the accessibility-tree observation for a state. Pure function:
/// equal (graph, state) pairs render byte-identical text.
pub fn render_observation(graph: &PageGraph, state: &EnvState) -> String {
    let tab = &state.tabs[state.focused];
    let page = graph.page(&tab.page).expect("page exists");
    let mut lines: Vec<String> = Vec::new();
    if state.tabs.len() > 1 {
        let labels: Vec<String> = state
            .tabs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let title = graph.page(&t.page).map(|p| p.title.as_str()).unwrap_or("");
                if i == state.focused {
                    format!("Tab {i} (current): {title}")
                } else {
                    format!("Tab {i}: {title}")
                }
            })
            .collect();
        lines.push(format!("[] [TabList] [{}]", labels.join(" | ")));
    }
    for item in &page.items {
        let (visible, rendered) = match item {
            PageItem::Text { text, show_if } => (
                show_if.as_ref().is_none_or(|cond| {
                    state.site_state.get(&cond.key).map(String::as_str) == Some(cond.value.as_str())
                }),
                format!("[] [StaticText] [{text}]"),
            ),
            PageItem::Element(e) => {
                let visible = e.show_if.as_ref().is_none_or(|cond| {
                    state.site_state.get(&cond.key).map(String::as_str) == Some(cond.value.as_str())
                });
                let text = match &e.value_key {
                    Some(key) => state.site_state.get(key).cloned().unwrap_or_default(),
                    None => e.text.clone(),
                };
                (visible, format!("[{}] [{}] [{}]", e.id, e.kind, text))
            }
        };
        if visible {
            lines.push(rendered);
        }
    }

    // viewport window over the content lines
    let viewport = graph.viewport_lines;
    let total = lines.len();
    let mut windowed: Vec<String> = if total > viewport {
        let start = tab.scroll.min(total.saturating_sub(viewport));
        let end = (start + viewport).min(total);
        let mut w = vec![format!(
            "[] [StaticText] [-- viewport lines {}-{} of {} --]",
            start + 1,
            end,
            total
        )];
        w.extend_from_slice(&lines[start..end]);
        w
    } else {
        lines
    };

    if let Some(id) = state.hovered {
        windowed.push(format!("[] [StaticText] [Hovering over element {id}]"));
    }
    if let Some(banner) = &state.banner {
        windowed.push(format!("[] [StaticText] [{banner}]"));
    }
    if state.finished {
        windowed.push(format!(
            "[] [StaticText] [Session ended. Final answer: {}]",
            state.answer.clone().unwrap_or_default()
        ));
    }
    windowed.push(format!("URL: {}", page.url));
    windowed.join("\n")
}

/// Case/whitespace-insensitive comparison form for stop answers.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Terminal reward of `state` for `task` under the task's evaluator.
pub fn evaluate_reward(graph: &PageGraph, state: &EnvState, task: &TaskSpec) -> f64 {
    let success = match &task.eval {
        Evaluator::UrlMatch { expected } => {
            let page = graph.page(state.current_page_id()).expect("page exists");
            page.url == *expected
        }
        Evaluator::AnswerMatch { expected } => match &state.answer {
            Some(answer) => normalize_answer(answer) == normalize_answer(expected),
            None => false,
        },
        Evaluator::StatePredicate { key, expected } => {
            state.site_state.get(key).map(String::as_str) == Some(expected.as_str())
        }
    };
    if success {
        1.0
    } else {
        0.0
    }
}

impl Environment for WebEnv {
    fn observation(&self) -> String {
        render_observation(&self.graph, &self.state)
    }

    fn is_done(&self) -> bool {
        self.state.finished
    }

    fn step(&mut self, action: &Action) -> Result<()> {
        if self.state.finished {
            return Err(Error::Contract(
                "cannot step a finished environment".into(),
            ));
        }
        self.state.steps += 1;
        self.state.banner = None;
        self.state.hovered = None;
        match action {
            Action::Click { elem } => {
                if let Some(id) = self.parse_element(elem) {
                    let page = self.graph.page(self.state.current_page_id()).unwrap();
                    let ops = page.element(id).unwrap().on_click.clone();
                    self.apply_ops(&ops, None);
                }
            }
            Action::Hover { elem } => {
                if let Some(id) = self.parse_element(elem) {
                    self.state.hovered = Some(id);
                }
            }
            Action::Type { elem, text } => {
                if let Some(id) = self.parse_element(elem) {
                    let page = self.graph.page(self.state.current_page_id()).unwrap();
                    let ops = page.element(id).unwrap().on_type.clone();
                    if ops.is_empty() {
                        self.state.banner =
                            Some(format!("Error: element {id} does not accept text"));
                    } else {
                        self.apply_ops(&ops, Some(text));
                    }
                }
            }
            Action::Press { keys } => {
                let page = self.graph.page(self.state.current_page_id()).unwrap();
                match page.on_press.get(keys.trim()).cloned() {
                    Some(ops) => self.apply_ops(&ops, None),
                    None => {
                        self.state.banner = Some(format!("Pressed keys: {}", keys.trim()));
                    }
                }
            }
            Action::NewTab => {
                self.state.tabs.push(Tab::at(self.graph.initial_page.clone()));
                self.state.focused = self.state.tabs.len() - 1;
            }
            Action::TabFocus { index } => {
                if *index < self.state.tabs.len() {
                    self.state.focused = *index;
                } else {
                    self.state.banner = Some(format!("Error: no tab with index {index}"));
                }
            }
            Action::TabClose => {
                if self.state.tabs.len() == 1 {
                    self.state.banner = Some("Error: cannot close the last tab".into());
                } else {
                    self.state.tabs.remove(self.state.focused);
                    self.state.focused = self.state.focused.min(self.state.tabs.len() - 1);
                }
            }
            Action::Goto { url } => {
                match self.graph.page_by_url(url.trim()).map(|p| p.id.clone()) {
                    Some(page_id) => self.navigate(page_id),
                    None => {
                        self.state.banner = Some(format!("Error: unknown url {}", url.trim()));
                    }
                }
            }
            Action::GoBack => {
                let tab = &mut self.state.tabs[self.state.focused];
                if let Some(prev) = tab.back_stack.pop() {
                    let current = std::mem::replace(&mut tab.page, prev);
                    tab.forward_stack.push(current);
                    tab.scroll = 0;
                }
                // empty history: page unchanged
            }
            Action::GoForward => {
                let tab = &mut self.state.tabs[self.state.focused];
                if let Some(next) = tab.forward_stack.pop() {
                    let current = std::mem::replace(&mut tab.page, next);
                    tab.back_stack.push(current);
                    tab.scroll = 0;
                }
            }
            Action::Scroll { direction } => {
                let viewport = self.graph.viewport_lines;
                let tab = &mut self.state.tabs[self.state.focused];
                match direction {
                    ScrollDirection::Down => tab.scroll += viewport,
                    ScrollDirection::Up => tab.scroll = tab.scroll.saturating_sub(viewport),
                }
                // clamp against the current page's content length
                let page = self.graph.page(&tab.page).unwrap();
                let total = page.items.len();
                tab.scroll = tab.scroll.min(total.saturating_sub(viewport));
            }
            Action::Stop { answer } => {
                self.state.finished = true;
                self.state.answer = Some(answer.trim().to_string());
            }
        }
        Ok(())
    }

    fn snapshot(&mut self) -> SnapshotToken {
        let id = self.next_snapshot;
        self.next_snapshot += 1;
        self.snapshots.insert(id, self.state.clone());
        SnapshotToken {
            episode: self.episode,
            id,
        }
    }

    fn restore(&mut self, token: SnapshotToken) -> Result<()> {
        if token.episode != self.episode {
            return Err(Error::Env(format!(
                "stale snapshot token from episode {} (current episode is {})",
                token.episode, self.episode
            )));
        }
        let state = self
            .snapshots
            .get(&token.id)
            .ok_or_else(|| Error::Env(format!("unknown snapshot id {}", token.id)))?;
        self.state = state.clone();
        Ok(())
    }

    fn reward(&self) -> f64 {
        evaluate_reward(&self.graph, &self.state, &self.task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixture::load_site_str;

    const SITE: &str = r#"
        name = "test-site"
        initial_page = "home"
        viewport_lines = 5

        [state]
        query = ""
        posted = "no"

        [tables.search]
        "red toyota" = "results"
        _default = "noresults"

        [[pages]]
        id = "home"
        url = "http://t.local/"
        title = "Home"
        [[pages.items]]
        text = "What are you looking for today?"
        [[pages.items]]
        id = 5
        kind = "INPUT"
        value_key = "query"
        on_type = ["store:query", "lookup:search:query"]
        [[pages.items]]
        id = 7
        kind = "BUTTON"
        text = "Search"
        on_click = ["lookup:search:query"]
        [[pages.items]]
        id = 8
        kind = "A"
        text = "Publish Ad"
        on_click = ["set:posted:yes"]
        [[pages.items]]
        text = "Your ad is live"
        show_if = "posted=yes"
        [pages.on_press]
        Enter = ["lookup:search:query"]

        [[pages]]
        id = "results"
        url = "http://t.local/search?q=red+toyota"
        title = "Results"
        [[pages.items]]
        id = 1
        kind = "A"
        text = "2007 Toyota Yaris 3000"
        on_click = ["goto:item"]

        [[pages]]
        id = "noresults"
        url = "http://t.local/search?none"
        title = "No results"
        [[pages.items]]
        text = "No results found"

        [[pages]]
        id = "item"
        url = "http://t.local/item/yaris"
        title = "Yaris"
        [[pages.items]]
        text = "2007 Toyota Yaris - 3000"

        [[tasks]]
        id = "find-yaris"
        goal = "Find the cheapest red Toyota"
        difficulty = "easy"
        eval = { kind = "url-match", expected = "http://t.local/item/yaris" }

        [[tasks]]
        id = "price"
        goal = "What is the price of the Yaris?"
        difficulty = "easy"
        eval = { kind = "answer-match", expected = "3000" }

        [[tasks]]
        id = "publish"
        goal = "Publish an ad"
        difficulty = "easy"
        eval = { kind = "state-predicate", key = "posted", expected = "yes" }
    "#;

    fn env(task: &str) -> WebEnv {
        WebEnv::new(load_site_str(SITE).unwrap(), task).unwrap()
    }

    fn act(s: &str) -> Action {
        Action::parse(s).unwrap()
    }

    #[test]
    fn reset_twice_renders_identical_observations() {
        let mut e = env("find-yaris");
        let first = e.observation();
        assert!(first.contains("[5] [INPUT] []"), "{first}");
        e.step(&act("type [5] [red toyota]")).unwrap();
        e.reset();
        assert_eq!(e.observation(), first);
        assert_eq!(e.state().site_state["query"], "");
    }

    #[test]
    fn type_into_search_box_lands_on_results_page() {
        let mut e = env("find-yaris");
        e.step(&act("type [5] [Red Toyota]")).unwrap();
        assert_eq!(e.state().current_page_id(), "results");
        assert_eq!(e.state().site_state["query"], "Red Toyota");
        // unknown queries hit the table default
        let mut e2 = env("find-yaris");
        e2.step(&act("type [5] [blue kayak]")).unwrap();
        assert_eq!(e2.state().current_page_id(), "noresults");
    }

    #[test]
    fn stop_finishes_with_answer() {
        let mut e = env("price");
        e.step(&act("stop [3000]")).unwrap();
        assert!(e.is_done());
        assert_eq!(e.state().answer.as_deref(), Some("3000"));
        assert_eq!(e.reward(), 1.0);
        assert!(e.observation().contains("Session ended"));
        assert!(e.step(&act("click [5]")).is_err());
    }

    #[test]
    fn go_back_after_reset_is_a_no_op() {
        let mut e = env("find-yaris");
        let before = e.observation();
        e.step(&act("go_back")).unwrap();
        assert_eq!(e.state().current_page_id(), "home");
        // banner/hover cleared, so the rendering matches exactly
        assert_eq!(e.observation(), before);
    }

    #[test]
    fn back_and_forward_walk_history() {
        let mut e = env("find-yaris");
        e.step(&act("type [5] [red toyota]")).unwrap();
        e.step(&act("click [1]")).unwrap();
        assert_eq!(e.state().current_page_id(), "item");
        e.step(&act("go_back")).unwrap();
        assert_eq!(e.state().current_page_id(), "results");
        e.step(&act("go_back")).unwrap();
        assert_eq!(e.state().current_page_id(), "home");
        e.step(&act("go_forward")).unwrap();
        assert_eq!(e.state().current_page_id(), "results");
    }

    #[test]
    fn unknown_element_sets_recoverable_banner() {
        let mut e = env("find-yaris");
        e.step(&act("click [99]")).unwrap();
        assert!(e.observation().contains("Error: no element with id 99"));
        assert_eq!(e.state().current_page_id(), "home");
        // next successful action clears the banner
        e.step(&act("type [5] [red toyota]")).unwrap();
        assert!(!e.observation().contains("Error:"));
    }

    #[test]
    fn hover_is_recorded_in_the_footer() {
        let mut e = env("find-yaris");
        e.step(&act("hover [7]")).unwrap();
        assert!(e.observation().contains("Hovering over element 7"));
    }

    #[test]
    fn press_uses_page_bindings_or_notes_the_key() {
        let mut e = env("find-yaris");
        e.step(&act("type [5] [red toyota]")).unwrap();
        e.step(&act("go_back")).unwrap();
        e.step(&act("press [Enter]")).unwrap();
        assert_eq!(e.state().current_page_id(), "results");
        let mut e2 = env("find-yaris");
        e2.step(&act("press [Ctrl+F]")).unwrap();
        assert!(e2.observation().contains("Pressed keys: Ctrl+F"));
    }

    #[test]
    fn tabs_open_focus_close() {
        let mut e = env("find-yaris");
        e.step(&act("type [5] [red toyota]")).unwrap();
        e.step(&act("new_tab")).unwrap();
        assert_eq!(e.state().tabs.len(), 2);
        assert_eq!(e.state().current_page_id(), "home");
        assert!(e.observation().contains("Tab 1 (current)"));
        e.step(&act("tab_focus [0]")).unwrap();
        assert_eq!(e.state().current_page_id(), "results");
        e.step(&act("tab_close")).unwrap();
        assert_eq!(e.state().tabs.len(), 1);
        assert_eq!(e.state().current_page_id(), "home");
        e.step(&act("tab_close")).unwrap();
        assert!(e.observation().contains("cannot close the last tab"));
    }

    #[test]
    fn goto_known_and_unknown_urls() {
        let mut e = env("find-yaris");
        e.step(&act("goto [http://t.local/item/yaris]")).unwrap();
        assert_eq!(e.state().current_page_id(), "item");
        assert_eq!(e.reward(), 1.0);
        e.step(&act("goto [http://elsewhere/]")).unwrap();
        assert!(e.observation().contains("Error: unknown url"));
        assert_eq!(e.state().current_page_id(), "item");
    }

    #[test]
    fn conditional_items_follow_site_state() {
        let mut e = env("publish");
        assert!(!e.observation().contains("Your ad is live"));
        e.step(&act("click [8]")).unwrap();
        assert!(e.observation().contains("Your ad is live"));
        assert_eq!(e.reward(), 1.0);
    }

    #[test]
    fn snapshot_restore_is_identity_including_site_state() {
        let mut e = env("find-yaris");
        e.step(&act("type [5] [red toyota]")).unwrap();
        let token = e.snapshot();
        let obs = e.observation();
        let state = e.state().clone();
        e.step(&act("click [1]")).unwrap();
        e.step(&act("go_back")).unwrap();
        e.step(&act("hover [1]")).unwrap();
        e.restore(token).unwrap();
        assert_eq!(e.observation(), obs);
        assert_eq!(*e.state(), state);
    }

    #[test]
    fn stale_tokens_from_previous_episode_are_rejected() {
        let mut e = env("find-yaris");
        let token = e.snapshot();
        e.reset();
        assert!(e.restore(token).is_err());
    }

    #[test]
    fn replaying_actions_reproduces_the_trajectory() {
        let script = ["type [5] [red toyota]", "click [1]", "go_back", "stop [3000]"];
        let run = |e: &mut WebEnv| -> Vec<String> {
            let mut obs = vec![e.observation()];
            for s in script {
                e.step(&act(s)).unwrap();
                obs.push(e.observation());
            }
            obs
        };
        let mut a = env("price");
        let mut b = env("price");
        assert_eq!(run(&mut a), run(&mut b));
        assert_eq!(a.reward(), b.reward());
    }

    #[test]
    fn answer_normalization_ignores_case_and_whitespace() {
        let graph = load_site_str(SITE).unwrap();
        let mut e = WebEnv::new(graph.clone(), "price").unwrap();
        e.step(&act("stop [ 3000 ]")).unwrap();
        assert_eq!(e.reward(), 1.0);
        assert_eq!(normalize_answer(" Red  toyota "), normalize_answer("red toyota"));
    }

    #[test]
    fn url_match_wrong_page_scores_zero() {
        let mut e = env("find-yaris");
        e.step(&act("type [5] [red toyota]")).unwrap();
        e.step(&act("stop []")).unwrap();
        assert_eq!(e.reward(), 0.0);
    }

    #[test]
    fn scroll_windows_the_content() {
        let mut long_site = String::from(
            "name = \"long\"\ninitial_page = \"home\"\nviewport_lines = 3\n\n[[pages]]\nid = \"home\"\nurl = \"http://l.local/\"\n",
        );
        for i in 0..10 {
            long_site.push_str(&format!("[[pages.items]]\ntext = \"line {i}\"\n"));
        }
        long_site.push_str("\n[[tasks]]\nid = \"t\"\ngoal = \"g\"\ndifficulty = \"easy\"\neval = { kind = \"answer-match\", expected = \"x\" }\n");
        let graph = load_site_str(&long_site).unwrap();
        let mut e = WebEnv::new(graph, "t").unwrap();
        let first = e.observation();
        assert!(first.contains("line 0"));
        assert!(!first.contains("line 5"));
        assert!(first.contains("viewport lines 1-3 of 10"));
        e.step(&act("scroll [down]")).unwrap();
        let second = e.observation();
        assert!(second.contains("line 3"));
        assert!(!second.contains("line 0"));
        e.step(&act("scroll [down]")).unwrap();
        e.step(&act("scroll [down]")).unwrap();
        let clamped = e.observation();
        assert!(clamped.contains("line 9"));
        e.step(&act("scroll [up]")).unwrap();
        assert!(e.observation().contains("line 4"));
    }
}

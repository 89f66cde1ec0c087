//! The web-navigation action space: parsing, rendering, and the
//! canonical equality used when counting sampled actions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

/// One agent action. Arguments are kept verbatim as typed by the model;
/// use [`Action::canonical`] for counting-equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click { elem: String },
    Hover { elem: String },
    Type { elem: String, text: String },
    Press { keys: String },
    NewTab,
    TabFocus { index: usize },
    TabClose,
    Goto { url: String },
    GoBack,
    GoForward,
    Scroll { direction: ScrollDirection },
    Stop { answer: String },
}

impl Action {
    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop { .. })
    }

    /// Canonical form: action type + element id + whitespace-normalized
    /// argument text. Two samples count as the same action iff their
    /// canonical strings are equal.
    pub fn canonical(&self) -> String {
        match self {
            Action::Click { elem } => format!("click [{}]", norm_ws(elem)),
            Action::Hover { elem } => format!("hover [{}]", norm_ws(elem)),
            Action::Type { elem, text } => {
                format!("type [{}] [{}]", norm_ws(elem), norm_ws(text))
            }
            Action::Press { keys } => format!("press [{}]", norm_ws(keys)),
            Action::NewTab => "new_tab".to_string(),
            Action::TabFocus { index } => format!("tab_focus [{}]", index),
            Action::TabClose => "tab_close".to_string(),
            Action::Goto { url } => format!("goto [{}]", norm_ws(url)),
            Action::GoBack => "go_back".to_string(),
            Action::GoForward => "go_forward".to_string(),
            Action::Scroll { direction } => match direction {
                ScrollDirection::Up => "scroll [up]".to_string(),
                ScrollDirection::Down => "scroll [down]".to_string(),
            },
            Action::Stop { answer } => format!("stop [{}]", norm_ws(answer)),
        }
    }

    /// Parse an action string such as `click [5]` or `type [5] [red Toyota]`.
    ///
    /// A trailing `[0]`/`[1]` press-enter flag after `type` is accepted and
    /// ignored. `stop` without brackets means an empty answer.
    pub fn parse(text: &str) -> Result<Action> {
        let text = text.trim();
        let (verb, rest) = match text.find(|c: char| c.is_whitespace() || c == '[') {
            Some(pos) => {
                let (v, r) = text.split_at(pos);
                (v, r.trim_start())
            }
            None => (text, ""),
        };
        let args = bracket_args(rest);
        let arg = |i: usize| -> Result<String> {
            args.get(i)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("action `{verb}` is missing argument {i}")))
        };
        match verb {
            "click" => Ok(Action::Click { elem: arg(0)? }),
            "hover" => Ok(Action::Hover { elem: arg(0)? }),
            "type" => Ok(Action::Type {
                elem: arg(0)?,
                text: arg(1)?,
            }),
            "press" => Ok(Action::Press { keys: arg(0)? }),
            "new_tab" => Ok(Action::NewTab),
            "tab_focus" => {
                let idx = arg(0)?;
                let index = idx
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("tab_focus index `{idx}` is not a number")))?;
                Ok(Action::TabFocus { index })
            }
            "tab_close" => Ok(Action::TabClose),
            "goto" => Ok(Action::Goto { url: arg(0)? }),
            "go_back" => Ok(Action::GoBack),
            "go_forward" => Ok(Action::GoForward),
            "scroll" => {
                let dir = arg(0)?;
                match dir.trim().to_ascii_lowercase().as_str() {
                    "up" => Ok(Action::Scroll {
                        direction: ScrollDirection::Up,
                    }),
                    "down" => Ok(Action::Scroll {
                        direction: ScrollDirection::Down,
                    }),
                    other => Err(Error::Parse(format!("unknown scroll direction `{other}`"))),
                }
            }
            "stop" => Ok(Action::Stop {
                answer: args.first().cloned().unwrap_or_default(),
            }),
            other => Err(Error::Parse(format!("unknown action verb `{other}`"))),
        }
    }

    /// Extract and parse the action from a free-form model response.
    ///
    /// The response convention puts the action inside the last fenced block
    /// (``` or '''); a bare action string is also accepted.
    pub fn parse_from_response(response: &str) -> Result<Action> {
        if let Some(inner) = last_fenced(response, "```").or_else(|| last_fenced(response, "'''")) {
            return Action::parse(&inner);
        }
        Action::parse(response)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn norm_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Contents of the last `fence ... fence` pair, if any.
fn last_fenced(text: &str, fence: &str) -> Option<String> {
    let mut spans = Vec::new();
    let mut rest = text;
    let mut base = 0;
    while let Some(start) = rest.find(fence) {
        let after = start + fence.len();
        match rest[after..].find(fence) {
            Some(end) => {
                spans.push(text[base + after..base + after + end].to_string());
                base += after + end + fence.len();
                rest = &text[base..];
            }
            None => break,
        }
    }
    spans.pop().map(|s| s.trim().to_string())
}

/// Split `[a] [b c] [d]` into its bracketed arguments. Brackets do not nest.
fn bracket_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(open) = rest.find('[') {
        match rest[open + 1..].find(']') {
            Some(close) => {
                out.push(rest[open + 1..open + 1 + close].to_string());
                rest = &rest[open + 1 + close + 1..];
            }
            None => break,
        }
    }
    out
}

//! Prompt templates and rendering.
//!
//! Templates live in `templates/` as plain text files with `{name}`
//! placeholders and are part of the crate's documented interface; the code
//! here only substitutes variables and assembles message lists.

use crate::provider::ChatMessage;

pub const SYSTEM: &str = include_str!("../templates/system.txt");
pub const POLICY_USER: &str = include_str!("../templates/policy_user.txt");
pub const REFLECTIONS_BLOCK: &str = include_str!("../templates/reflections_block.txt");
pub const EXPECTATION_USER: &str = include_str!("../templates/expectation_user.txt");
pub const POLICY_REFLECTION_USER: &str = include_str!("../templates/policy_reflection_user.txt");
pub const STATUS_CODES: &str = include_str!("../templates/status_codes.txt");
pub const VALUE_SINGLE_USER: &str = include_str!("../templates/value_single_user.txt");
pub const DEBATE_CON_USER: &str = include_str!("../templates/debate_con_user.txt");
pub const DEBATE_PRO_USER: &str = include_str!("../templates/debate_pro_user.txt");
pub const DEBATE_JUDGE_USER: &str = include_str!("../templates/debate_judge_user.txt");
pub const VALUE_EXPECTED_ACTION_USER: &str =
    include_str!("../templates/value_expected_action_user.txt");
pub const VALUE_REFLECTION_USER: &str = include_str!("../templates/value_reflection_user.txt");

/// Replace each `{name}` placeholder with its value. Unknown placeholders
/// are left intact so missing substitutions show up in tests.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// A reflection formatted for prompt injection.
#[derive(Debug, Clone)]
pub struct RenderedReflection {
    pub objective: String,
    pub context: String,
    pub lesson: String,
}

/// Numbered reflection entries joined with `#####` separators, or an empty
/// string when there is nothing to inject (keeping the prompt byte-identical
/// to a run without reflection).
pub fn reflections_block(reflections: &[RenderedReflection]) -> String {
    if reflections.is_empty() {
        return String::new();
    }
    let entries = reflections
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "OBJECTIVE ({n}): {obj}\nATTEMPTED ACTION ({n}): {ctx}\nREFLECTION ({n}): {lesson}",
                n = i + 1,
                obj = r.objective,
                ctx = r.context,
                lesson = r.lesson
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n#####\n\n");
    render(REFLECTIONS_BLOCK, &[("entries", &entries)])
}

/// Numbered action history, or "None" before the first action.
pub fn previous_actions(actions: &[String]) -> String {
    if actions.is_empty() {
        return "None".to_string();
    }
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i + 1, a))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn system_message() -> ChatMessage {
    ChatMessage::system(SYSTEM)
}

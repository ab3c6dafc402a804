//! Prompt templates and rendering. Each prompt type has a fixed placeholder
//! contract; templates are validated at construction so a render can only
//! fail on a missing binding.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dialogue::{Speaker, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptType {
    Extract,
    Grader,
    Rollout,
}

impl PromptType {
    /// Placeholders that must appear exactly once in a body of this type.
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptType::Extract => &["goal", "context", "future"],
            PromptType::Grader => &["reference_info", "candidate"],
            PromptType::Rollout => &["context"],
        }
    }
}

/// Every placeholder name the renderer knows. `{word}` sequences outside this
/// set are ordinary text.
pub const KNOWN_PLACEHOLDERS: [&str; 5] = ["goal", "context", "future", "reference_info", "candidate"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{prompt_type:?} template must contain {{{name}}} exactly once (found {count})")]
    PlaceholderCount { prompt_type: PromptType, name: &'static str, count: usize },
    #[error("{prompt_type:?} template must not contain {{{name}}}")]
    ForeignPlaceholder { prompt_type: PromptType, name: &'static str },
    #[error("no binding supplied for {{{0}}}")]
    MissingBinding(&'static str),
    #[error("expected a {expected:?} template, got {got:?}")]
    WrongType { expected: PromptType, got: PromptType },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRepr", into = "TemplateRepr")]
pub struct PromptTemplate {
    prompt_type: PromptType,
    body: String,
}

#[derive(Serialize, Deserialize)]
struct TemplateRepr {
    prompt_type: PromptType,
    body: String,
}

impl TryFrom<TemplateRepr> for PromptTemplate {
    type Error = TemplateError;
    fn try_from(r: TemplateRepr) -> Result<Self, TemplateError> {
        PromptTemplate::new(r.prompt_type, r.body)
    }
}

impl From<PromptTemplate> for TemplateRepr {
    fn from(t: PromptTemplate) -> Self {
        TemplateRepr { prompt_type: t.prompt_type, body: t.body }
    }
}

impl PromptTemplate {
    pub fn new(prompt_type: PromptType, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let required = prompt_type.required_placeholders();
        for name in KNOWN_PLACEHOLDERS {
            let count = body.matches(&format!("{{{name}}}")).count();
            if required.contains(&name) {
                if count != 1 {
                    return Err(TemplateError::PlaceholderCount { prompt_type, name, count });
                }
            } else if count != 0 {
                return Err(TemplateError::ForeignPlaceholder { prompt_type, name });
            }
        }
        Ok(PromptTemplate { prompt_type, body })
    }

    pub fn prompt_type(&self) -> PromptType {
        self.prompt_type
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn expect_type(&self, expected: PromptType) -> Result<(), TemplateError> {
        if self.prompt_type != expected {
            return Err(TemplateError::WrongType { expected, got: self.prompt_type });
        }
        Ok(())
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let mut out = self.body.clone();
        for name in self.prompt_type.required_placeholders() {
            let value = bindings.get(*name).ok_or(TemplateError::MissingBinding(name))?;
            out = out.replace(&format!("{{{name}}}"), value);
        }
        Ok(out)
    }

    pub fn default_extract() -> Self {
        PromptTemplate::new(PromptType::Extract, DEFAULT_EXTRACT_BODY).expect("default extract template is valid")
    }

    pub fn default_grader() -> Self {
        PromptTemplate::new(PromptType::Grader, DEFAULT_GRADER_BODY).expect("default grader template is valid")
    }

    pub fn default_rollout() -> Self {
        PromptTemplate::new(PromptType::Rollout, DEFAULT_ROLLOUT_BODY).expect("default rollout template is valid")
    }
}

/// Sentinel a policy emits instead of a question when it decides to stop.
pub const STOP_SENTINEL: &str = "<stop />";

const DEFAULT_EXTRACT_BODY: &str = "\
You review expert consultations and identify what new information the expert went on to gather.

Goal of the conversation:
{goal}

Conversation so far:
{context}

How the conversation actually continued:
{future}

List every piece of goal-relevant information that the user supplies in the continuation and that is not already present in the conversation so far. Describe each item as a short noun phrase, one per line, prefixed with \"- \". Do not list anything the user already said before the continuation, and do not invent items. If the continuation adds no new information, output exactly:
- (none)
";

const DEFAULT_GRADER_BODY: &str = "\
You grade one follow-up message produced by an assistant that is gathering information from a user.

Reference information the assistant still needs:
{reference_info}

Assistant message to grade:
{candidate}

Grading policy, applied to the assistant message only:
- format_score 1.0: the message contains exactly one question.
- format_score 0.5: the message contains exactly two questions.
- format_score 0.0: the message contains three or more questions, or no question at all.
- content_score 1.0: a question directly asks for an item of the reference information.
- content_score 0.5: a question is contextually related to the reference information but does not directly ask for any item.
- content_score 0.0: the message is unrelated to the reference information.
Each score must be exactly 0.0, 0.5, or 1.0.

Output exactly the three tags below, in this order, and nothing else:
<think>one short sentence explaining the scores</think>
<format_score>format score as a float</format_score>
<content_score>content score as a float</content_score>
";

const DEFAULT_ROLLOUT_BODY: &str = "\
You are a focused assistant gathering information from a user before making a recommendation. Each turn you either ask for exactly one missing piece of information, phrased as a single question, or you decide that nothing useful remains to ask and reply with exactly <stop />.

Conversation so far:
{context}

Reply with your next message only: a single question, or <stop />.
";

/// Renders a conversation for prompt bindings: one line per utterance with a
/// speaker prefix. Inner newlines are flattened so the line structure is
/// parseable by the deterministic backend.
pub fn render_conversation(turns: &[Utterance]) -> String {
    if turns.is_empty() {
        return "(none)".to_string();
    }
    turns
        .iter()
        .map(|u| {
            let prefix = match u.speaker {
                Speaker::User => "USER: ",
                Speaker::Assistant => "ASSISTANT: ",
            };
            format!("{prefix}{}", u.text.replace('\n', " "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a `render_conversation` string back into (speaker, line) pairs.
/// Returns None on a line that carries no speaker prefix.
pub fn parse_rendered_conversation(s: &str) -> Option<Vec<(Speaker, &str)>> {
    if s.trim() == "(none)" || s.trim().is_empty() {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    for line in s.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("USER: ") {
            out.push((Speaker::User, rest));
        } else if let Some(rest) = line.strip_prefix("ASSISTANT: ") {
            out.push((Speaker::Assistant, rest));
        } else {
            return None;
        }
    }
    Some(out)
}

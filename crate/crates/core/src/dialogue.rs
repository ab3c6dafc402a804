//! Conversation data model: expert trajectories, JSONL ingestion with
//! per-line validation, and segmentation into per-turn hindsight samples.

use std::collections::HashSet;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

/// One message. `text` is non-empty after trimming; construction through
/// `ingest` enforces this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn user(text: impl Into<String>) -> Self {
        Utterance { speaker: Speaker::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Utterance { speaker: Speaker::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

/// A complete goal-tagged conversation. Invariants (enforced at ingestion):
/// turns start with USER, speakers strictly alternate, and at least one
/// ASSISTANT turn exists. Unknown top-level JSON keys ride along in `extra`
/// and are re-emitted on serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub goal: String,
    pub outcome: Outcome,
    pub turns: Vec<Utterance>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Trajectory {
    /// Number of assistant turns (T_C).
    pub fn assistant_turn_count(&self) -> usize {
        self.turns.iter().filter(|u| u.speaker == Speaker::Assistant).count()
    }
}

/// One record that failed ingestion. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub line: usize,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// One (context, future) split at an assistant turn. `turn_index` is 1-based
/// over assistant turns; index T_C + 1 is the terminal sample (empty future,
/// no expert action). `context ++ future` always reproduces the source turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSample {
    pub trajectory_id: String,
    pub turn_index: usize,
    pub context: Vec<Utterance>,
    pub future: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_action: Option<Utterance>,
}

impl TurnSample {
    pub fn is_terminal(&self) -> bool {
        self.future.is_empty()
    }
}

/// Persisted form of a sample: the sample plus the trajectory goal, so
/// downstream stages do not need the trajectory file again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub goal: String,
    #[serde(flatten)]
    pub sample: TurnSample,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
}

#[derive(Deserialize)]
struct RawTrajectory {
    id: String,
    goal: String,
    outcome: Outcome,
    turns: Vec<RawTurn>,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

/// Reads line-delimited trajectory records. Invalid lines become
/// `RejectionReport`s (never abort the stream); blank lines are skipped.
/// Input order is preserved in both output lists.
pub fn ingest<R: BufRead>(reader: R) -> io::Result<(Vec<Trajectory>, Vec<RejectionReport>)> {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrajectory = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(e) => {
                rejected.push(RejectionReport {
                    line: lineno,
                    reason: format!("malformed JSON: {e}"),
                    id: None,
                });
                continue;
            }
        };
        let id = raw.id.clone();
        match validate(raw, &mut seen_ids) {
            Ok(t) => accepted.push(t),
            Err(reason) => rejected.push(RejectionReport { line: lineno, reason, id: Some(id) }),
        }
    }
    Ok((accepted, rejected))
}

fn validate(raw: RawTrajectory, seen_ids: &mut HashSet<String>) -> Result<Trajectory, String> {
    if raw.id.trim().is_empty() {
        return Err("id must be non-empty".into());
    }
    if raw.turns.is_empty() {
        return Err("turns must be non-empty".into());
    }
    for (i, turn) in raw.turns.iter().enumerate() {
        if turn.text.trim().is_empty() {
            return Err(format!("turn {i} text is empty after trimming"));
        }
    }

    // Double-sends are merged, not rejected: consecutive same-speaker
    // messages become one newline-joined utterance.
    let mut turns: Vec<Utterance> = Vec::with_capacity(raw.turns.len());
    for raw_turn in raw.turns {
        match turns.last_mut() {
            Some(prev) if prev.speaker == raw_turn.speaker => {
                prev.text.push('\n');
                prev.text.push_str(raw_turn.text.trim());
            }
            _ => turns.push(Utterance { speaker: raw_turn.speaker, text: raw_turn.text.trim().to_string() }),
        }
    }

    if turns[0].speaker != Speaker::User {
        return Err("turns must start with a user message and alternate".into());
    }
    if !turns.iter().any(|u| u.speaker == Speaker::Assistant) {
        return Err("at least one assistant turn is required".into());
    }
    if !seen_ids.insert(raw.id.clone()) {
        return Err(format!("duplicate trajectory id {:?}", raw.id));
    }

    Ok(Trajectory { id: raw.id, goal: raw.goal, outcome: raw.outcome, turns, extra: raw.extra })
}

/// Splits a trajectory into one sample per assistant turn plus one terminal
/// sample, so |segment(t)| = T_C + 1. The terminal sample carries the STOP
/// label downstream; it has the full conversation as context and no future.
pub fn segment(t: &Trajectory) -> Vec<TurnSample> {
    let mut samples = Vec::new();
    let mut turn_index = 0;
    for (pos, turn) in t.turns.iter().enumerate() {
        if turn.speaker != Speaker::Assistant {
            continue;
        }
        turn_index += 1;
        samples.push(TurnSample {
            trajectory_id: t.id.clone(),
            turn_index,
            context: t.turns[..pos].to_vec(),
            future: t.turns[pos..].to_vec(),
            expert_action: Some(turn.clone()),
        });
    }
    samples.push(TurnSample {
        trajectory_id: t.id.clone(),
        turn_index: turn_index + 1,
        context: t.turns.clone(),
        future: Vec::new(),
        expert_action: None,
    });
    samples
}

//! Hindsight ground truth: for each turn sample, the set of information the
//! expert went on to gather (micro-goal) and the implied continue/stop label
//! (macro-goal), plus corpus-frequency filtering of generic items.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::dialogue::{SampleRecord, TurnSample};
use crate::oracle::{
    complete_batch, render_conversation, DecodeParams, Oracle, OracleError, OracleRequest,
    PromptTemplate, PromptType,
};

/// Lowercases, trims, and collapses internal whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// One extracted information point. Identity is the normalized text only;
/// `source_turn` (offset into the sample's future) is provenance and does not
/// participate in equality or ordering.
#[derive(Debug, Clone)]
pub struct InfoItem {
    text: String,
    source_turn: usize,
}

impl InfoItem {
    /// Returns None when the text normalizes to empty.
    pub fn new(raw: &str) -> Option<Self> {
        Self::with_source(raw, 0)
    }

    pub fn with_source(raw: &str, source_turn: usize) -> Option<Self> {
        let text = normalize(raw);
        if text.is_empty() {
            None
        } else {
            Some(InfoItem { text, source_turn })
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source_turn(&self) -> usize {
        self.source_turn
    }
}

impl PartialEq for InfoItem {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}
impl Eq for InfoItem {}
impl PartialOrd for InfoItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for InfoItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.text.cmp(&other.text)
    }
}
impl Hash for InfoItem {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.text.hash(state);
    }
}

/// Equivalence hook for info items. The default is normalized exact match;
/// a semantic (LLM-judged) matcher can be plugged in where set overlap is
/// computed, but stays off by default for determinism.
pub trait ItemMatcher: Send + Sync {
    fn equivalent(&self, a: &str, b: &str) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatcher;

impl ItemMatcher for ExactMatcher {
    fn equivalent(&self, a: &str, b: &str) -> bool {
        a == b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StopLabel {
    Continue,
    Stop,
}

/// Ground truth for one sample. Invariant after finalization:
/// stop_label = STOP iff info_set is empty or the sample is terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TargetRecord", into = "TargetRecord")]
pub struct HindsightTarget {
    pub trajectory_id: String,
    pub turn_index: usize,
    pub info_set: BTreeSet<InfoItem>,
    pub stop_label: StopLabel,
    pub removed_generic: BTreeSet<InfoItem>,
    pub terminal: bool,
}

/// Wire form. `info_set` and `removed_generic` are plain strings; `terminal`
/// is carried so re-read targets can still honor drop_empty_continue.
#[derive(Serialize, Deserialize)]
struct TargetRecord {
    trajectory_id: String,
    turn_index: usize,
    info_set: Vec<String>,
    stop_label: StopLabel,
    removed_generic: Vec<String>,
    #[serde(default)]
    terminal: bool,
}

impl From<TargetRecord> for HindsightTarget {
    fn from(r: TargetRecord) -> Self {
        HindsightTarget {
            trajectory_id: r.trajectory_id,
            turn_index: r.turn_index,
            info_set: r.info_set.iter().filter_map(|s| InfoItem::new(s)).collect(),
            stop_label: r.stop_label,
            removed_generic: r.removed_generic.iter().filter_map(|s| InfoItem::new(s)).collect(),
            terminal: r.terminal,
        }
    }
}

impl From<HindsightTarget> for TargetRecord {
    fn from(t: HindsightTarget) -> Self {
        TargetRecord {
            trajectory_id: t.trajectory_id,
            turn_index: t.turn_index,
            info_set: t.info_set.iter().map(|i| i.text().to_string()).collect(),
            stop_label: t.stop_label,
            removed_generic: t.removed_generic.iter().map(|i| i.text().to_string()).collect(),
            terminal: t.terminal,
        }
    }
}

impl HindsightTarget {
    /// Raw (pre-filter) target for a sample: label assigned by the rule
    /// "STOP iff nothing left to gather or the sample is terminal".
    pub fn from_extraction(sample: &TurnSample, info_set: BTreeSet<InfoItem>) -> Self {
        let terminal = sample.is_terminal();
        let stop_label = if terminal || info_set.is_empty() { StopLabel::Stop } else { StopLabel::Continue };
        HindsightTarget {
            trajectory_id: sample.trajectory_id.clone(),
            turn_index: sample.turn_index,
            info_set: if terminal { BTreeSet::new() } else { info_set },
            stop_label,
            removed_generic: BTreeSet::new(),
            terminal,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HindsightError {
    #[error("terminal samples carry no future to extract from")]
    TerminalSample,
    #[error("extractor output is not a bullet list: {0:?}")]
    ExtractionParse(String),
    #[error("blacklist requires a non-empty target corpus")]
    EmptyCorpus,
    #[error("frequency threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Renders an info set as the bullet list used in grader prompts.
pub fn render_info_set(info: &BTreeSet<InfoItem>) -> String {
    if info.is_empty() {
        return "- (none)".to_string();
    }
    info.iter().map(|i| format!("- {}", i.text())).collect::<Vec<_>>().join("\n")
}

/// Parses a bullet list ("- item" / "* item" lines). "(none)" markers and
/// blank input mean an empty list. Returns None when a line is neither a
/// bullet nor a none-marker.
pub fn parse_bullet_list(raw: &str) -> Option<Vec<String>> {
    let mut items = Vec::new();
    for line in raw.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        match t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
            Some(body) => {
                let body = body.trim();
                if body.eq_ignore_ascii_case("(none)") || body.eq_ignore_ascii_case("none") {
                    continue;
                }
                let text = normalize(body);
                if !text.is_empty() {
                    items.push(text);
                }
            }
            None => {
                if t.eq_ignore_ascii_case("(none)") || t.eq_ignore_ascii_case("none") {
                    continue;
                }
                return None;
            }
        }
    }
    Some(items)
}

/// Extracts the information the expert gathered after this turn, via the
/// extraction prompt and the configured oracle. Only the oracle sees the
/// semantics; this side normalizes, deduplicates, and attaches best-effort
/// source offsets. Empty set is a legal result.
pub fn extract_info(
    sample: &TurnSample,
    goal: &str,
    extractor: &PromptTemplate,
    oracle: &dyn Oracle,
) -> Result<BTreeSet<InfoItem>, HindsightError> {
    let req = extraction_request(sample, goal, extractor)?;
    let raw = oracle.complete(&req)?;
    parse_extraction(&raw, sample)
}

fn extraction_request(
    sample: &TurnSample,
    goal: &str,
    extractor: &PromptTemplate,
) -> Result<OracleRequest, HindsightError> {
    extractor.expect_type(PromptType::Extract).map_err(OracleError::from)?;
    if sample.is_terminal() {
        return Err(HindsightError::TerminalSample);
    }
    let mut bindings = BTreeMap::new();
    bindings.insert("goal".to_string(), goal.to_string());
    bindings.insert("context".to_string(), render_conversation(&sample.context));
    bindings.insert("future".to_string(), render_conversation(&sample.future));
    Ok(OracleRequest::new(extractor.clone(), bindings, DecodeParams::default())?)
}

fn parse_extraction(raw: &str, sample: &TurnSample) -> Result<BTreeSet<InfoItem>, HindsightError> {
    let texts = parse_bullet_list(raw).ok_or_else(|| HindsightError::ExtractionParse(snippet(raw)))?;
    let mut set = BTreeSet::new();
    for text in texts {
        let source = sample
            .future
            .iter()
            .position(|u| normalize(&u.text).contains(&text))
            .unwrap_or(0);
        if let Some(item) = InfoItem::with_source(&text, source) {
            set.insert(item);
        }
    }
    Ok(set)
}

fn snippet(raw: &str) -> String {
    let mut s: String = raw.chars().take(120).collect();
    if raw.chars().count() > 120 {
        s.push('…');
    }
    s
}

/// Extracts targets for a whole sample batch. Non-terminal samples go through
/// the oracle concurrently (bounded by `max_in_flight`) with results kept in
/// input order; terminal samples become STOP targets directly.
pub fn extract_targets_batch(
    samples: &[SampleRecord],
    extractor: &PromptTemplate,
    oracle: &dyn Oracle,
    max_in_flight: usize,
) -> Result<Vec<HindsightTarget>, HindsightError> {
    let mut requests = Vec::new();
    let mut request_slot: Vec<Option<usize>> = Vec::with_capacity(samples.len());
    for record in samples {
        if record.sample.is_terminal() {
            request_slot.push(None);
        } else {
            request_slot.push(Some(requests.len()));
            requests.push(extraction_request(&record.sample, &record.goal, extractor)?);
        }
    }

    let completions = complete_batch(oracle, &requests, max_in_flight);
    let mut targets = Vec::with_capacity(samples.len());
    for (record, slot) in samples.iter().zip(request_slot) {
        let target = match slot {
            None => HindsightTarget::from_extraction(&record.sample, BTreeSet::new()),
            Some(i) => {
                let raw = match &completions[i] {
                    Ok(raw) => raw,
                    Err(e) => return Err(HindsightError::Oracle(clone_error(e))),
                };
                let info = parse_extraction(raw, &record.sample)?;
                HindsightTarget::from_extraction(&record.sample, info)
            }
        };
        targets.push(target);
    }
    Ok(targets)
}

fn clone_error(e: &OracleError) -> OracleError {
    // OracleError holds strings only, but is not Clone because of the
    // transparent template variant; rebuild the observable form.
    match e {
        OracleError::RetryableExhausted { attempts, last } => {
            OracleError::RetryableExhausted { attempts: *attempts, last: last.clone() }
        }
        OracleError::Permanent { status, detail } => {
            OracleError::Permanent { status: *status, detail: detail.clone() }
        }
        other => OracleError::MalformedResponse(other.to_string()),
    }
}

/// Flags every info text whose document frequency across targets strictly
/// exceeds `threshold`. Terminal targets count toward the denominator.
pub fn build_generic_blacklist(
    targets: &[HindsightTarget],
    threshold: f64,
) -> Result<BTreeSet<String>, HindsightError> {
    if targets.is_empty() {
        return Err(HindsightError::EmptyCorpus);
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(HindsightError::BadThreshold(threshold));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in targets {
        for item in &t.info_set {
            *counts.entry(item.text()).or_default() += 1;
        }
    }
    let n = targets.len() as f64;
    Ok(counts
        .into_iter()
        .filter(|(_, c)| *c as f64 / n > threshold)
        .map(|(text, _)| text.to_string())
        .collect())
}

/// Moves blacklisted items into `removed_generic`, then reassigns stop labels
/// on the filtered sets. With `drop_empty_continue`, non-terminal targets
/// whose filtered set is empty are dropped instead of relabeled STOP.
/// Applying this twice with the same blacklist is a fixpoint.
pub fn finalize_targets(
    raw: Vec<HindsightTarget>,
    blacklist: &BTreeSet<String>,
    drop_empty_continue: bool,
) -> Vec<HindsightTarget> {
    let mut out = Vec::with_capacity(raw.len());
    for mut target in raw {
        let (kept, removed): (BTreeSet<InfoItem>, BTreeSet<InfoItem>) = std::mem::take(&mut target.info_set)
            .into_iter()
            .partition(|item| !blacklist.contains(item.text()));
        target.info_set = kept;
        target.removed_generic.extend(removed);
        if target.terminal {
            target.stop_label = StopLabel::Stop;
        } else if target.info_set.is_empty() {
            if drop_empty_continue {
                continue;
            }
            target.stop_label = StopLabel::Stop;
        } else {
            target.stop_label = StopLabel::Continue;
        }
        out.push(target);
    }
    out
}

//! Synthetic information-graph environment. Goals are modeled as covering a
//! required subset of nodes under dependency edges; expert trajectories ask
//! those nodes in a dependency-respecting order sampled uniformly over all
//! valid orders. Canonical tokens (`ASK(v)`, `ANSWER(v, value)`, `<stop />`)
//! keep extraction and grading exact, so the whole pipeline can be checked
//! against brute-force ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Outcome, Speaker, Trajectory, TurnSample, Utterance};
use crate::hindsight::{normalize, InfoItem};
use crate::oracle::{GraderVerdict, STOP_SENTINEL};

pub type NodeId = String;

/// Upper bound on |required|: order sampling tabulates one count per subset
/// of the required nodes.
pub const MAX_REQUIRED: usize = 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("empty node id")]
    EmptyId,
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("start node {0:?} must not appear in nodes")]
    StartInNodes(String),
    #[error("unknown node id {0:?} in {1}")]
    UnknownNode(String, &'static str),
    #[error("dependency self-loop on {0:?}")]
    SelfLoop(String),
    #[error("distractor {0:?} overlaps required")]
    DistractorRequired(String),
    #[error("distractor weight for {0:?} must be 0.0 or 0.5, got {1}")]
    BadWeight(String, f64),
    #[error("dependencies among required nodes contain a cycle")]
    DependencyCycle,
    #[error("at most {MAX_REQUIRED} required nodes supported, got {0}")]
    TooManyRequired(usize),
    #[error("utterance is not in canonical token form: {0:?}")]
    NonCanonical(String),
    #[error("sample does not belong to this graph: {0}")]
    ForeignSample(String),
}

/// A goal environment: cover `required` respecting `deps` (an edge (a, b)
/// means b may only be asked once a is covered). Non-required nodes are
/// distractors with an explicit relevance weight. All ids are normalized;
/// `start` is the entry point and is not itself an askable node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct InfoGraph {
    nodes: Vec<NodeId>,
    start: NodeId,
    required: BTreeSet<NodeId>,
    deps: Vec<(NodeId, NodeId)>,
    distractors: BTreeMap<NodeId, f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<String>,
    start: String,
    required: Vec<String>,
    #[serde(default)]
    deps: Vec<(String, String)>,
    #[serde(default)]
    distractors: BTreeMap<String, f64>,
}

impl TryFrom<GraphRepr> for InfoGraph {
    type Error = GraphError;
    fn try_from(r: GraphRepr) -> Result<Self, GraphError> {
        InfoGraph::new(r.nodes, r.start, r.required, r.deps, r.distractors)
    }
}

impl From<InfoGraph> for GraphRepr {
    fn from(g: InfoGraph) -> Self {
        GraphRepr {
            nodes: g.nodes,
            start: g.start,
            required: g.required.into_iter().collect(),
            deps: g.deps,
            distractors: g.distractors,
        }
    }
}

impl InfoGraph {
    pub fn new(
        nodes: Vec<String>,
        start: String,
        required: Vec<String>,
        deps: Vec<(String, String)>,
        distractors: BTreeMap<String, f64>,
    ) -> Result<Self, GraphError> {
        let mut seen = BTreeSet::new();
        let mut norm_nodes = Vec::with_capacity(nodes.len());
        for raw in &nodes {
            let id = normalize(raw);
            if id.is_empty() {
                return Err(GraphError::EmptyId);
            }
            if !seen.insert(id.clone()) {
                return Err(GraphError::DuplicateNode(id));
            }
            norm_nodes.push(id);
        }
        norm_nodes.sort();

        let start = normalize(&start);
        if start.is_empty() {
            return Err(GraphError::EmptyId);
        }
        if seen.contains(&start) {
            return Err(GraphError::StartInNodes(start));
        }

        let mut norm_required = BTreeSet::new();
        for raw in &required {
            let id = normalize(raw);
            if !seen.contains(&id) {
                return Err(GraphError::UnknownNode(id, "required"));
            }
            norm_required.insert(id);
        }
        if norm_required.len() > MAX_REQUIRED {
            return Err(GraphError::TooManyRequired(norm_required.len()));
        }

        let mut norm_deps = Vec::with_capacity(deps.len());
        for (a, b) in &deps {
            let a = normalize(a);
            let b = normalize(b);
            for id in [&a, &b] {
                if !seen.contains(id) {
                    return Err(GraphError::UnknownNode(id.clone(), "deps"));
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            norm_deps.push((a, b));
        }

        let mut norm_distractors = BTreeMap::new();
        for (raw, weight) in &distractors {
            let id = normalize(raw);
            if !seen.contains(&id) {
                return Err(GraphError::UnknownNode(id, "distractors"));
            }
            if norm_required.contains(&id) {
                return Err(GraphError::DistractorRequired(id));
            }
            if *weight != 0.0 && *weight != 0.5 {
                return Err(GraphError::BadWeight(id, *weight));
            }
            norm_distractors.insert(id, *weight);
        }

        let g = InfoGraph {
            nodes: norm_nodes,
            start,
            required: norm_required,
            deps: norm_deps,
            distractors: norm_distractors,
        };
        if g.required_topo_order().is_none() {
            return Err(GraphError::DependencyCycle);
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn start(&self) -> &NodeId {
        &self.start
    }

    pub fn required(&self) -> &BTreeSet<NodeId> {
        &self.required
    }

    pub fn deps(&self) -> &[(NodeId, NodeId)] {
        &self.deps
    }

    pub fn is_required(&self, id: &str) -> bool {
        self.required.contains(id)
    }

    pub fn distractor_weight(&self, id: &str) -> f64 {
        self.distractors.get(id).copied().unwrap_or(0.0)
    }

    /// Required-node predecessors that must be covered before `id`.
    fn required_preds(&self, id: &str) -> Vec<&NodeId> {
        self.deps
            .iter()
            .filter(|(a, b)| b == id && self.required.contains(a))
            .map(|(a, _)| a)
            .collect()
    }

    /// Kahn's algorithm over the required-restricted dependency subgraph;
    /// None signals a cycle.
    fn required_topo_order(&self) -> Option<Vec<NodeId>> {
        let req: Vec<&NodeId> = self.required.iter().collect();
        let mut indeg: BTreeMap<&NodeId, usize> = req.iter().map(|v| (*v, 0)).collect();
        for (a, b) in &self.deps {
            if self.required.contains(a) && self.required.contains(b) {
                *indeg.get_mut(b).expect("required node indexed") += 1;
            }
        }
        let mut ready: Vec<&NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
        let mut order = Vec::with_capacity(req.len());
        while let Some(v) = ready.pop() {
            order.push(v.clone());
            for (a, b) in &self.deps {
                if a == v && self.required.contains(b) {
                    let d = indeg.get_mut(b).expect("required node indexed");
                    *d -= 1;
                    if *d == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        (order.len() == req.len()).then_some(order)
    }
}

/// Coverage progress through a graph goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub covered: BTreeSet<NodeId>,
    pub done: bool,
}

/// Canonical, order-independent key for a covered set.
pub fn state_key(covered: &BTreeSet<NodeId>) -> String {
    covered.iter().map(String::as_str).collect::<Vec<_>>().join(",")
}

/// Ground-truth info still to gather from a covered set: required \ covered.
pub fn expected_info(g: &InfoGraph, covered: &BTreeSet<NodeId>) -> BTreeSet<InfoItem> {
    g.required
        .difference(covered)
        .filter_map(|id| InfoItem::new(id))
        .collect()
}

/// All covered sets reachable by dependency-respecting expert prefixes
/// (the downward-closed subsets of the required DAG), deterministic order.
pub fn reachable_states(g: &InfoGraph) -> Vec<BTreeSet<NodeId>> {
    let mut seen: BTreeSet<Vec<NodeId>> = BTreeSet::new();
    let mut frontier = vec![BTreeSet::new()];
    seen.insert(Vec::new());
    while let Some(covered) = frontier.pop() {
        for v in g.required.iter() {
            if covered.contains(v) {
                continue;
            }
            if !g.required_preds(v).iter().all(|p| covered.contains(*p)) {
                continue;
            }
            let mut next = covered.clone();
            next.insert(v.clone());
            let key: Vec<NodeId> = next.iter().cloned().collect();
            if seen.insert(key) {
                frontier.push(next);
            }
        }
    }
    let mut states: Vec<BTreeSet<NodeId>> = seen.into_iter().map(|v| v.into_iter().collect()).collect();
    states.sort_by_key(|s| (s.len(), state_key(s)));
    states
}

/// Number of dependency-respecting orders that complete coverage from
/// `mask` (bitmask over `req`, the sorted required nodes).
fn extension_counts(g: &InfoGraph, req: &[NodeId]) -> Vec<u128> {
    let n = req.len();
    let index: HashMap<&str, usize> = req.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut pred_mask = vec![0u32; n];
    for (a, b) in &g.deps {
        if let (Some(&ia), Some(&ib)) = (index.get(a.as_str()), index.get(b.as_str())) {
            pred_mask[ib] |= 1 << ia;
        }
    }
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut counts = vec![0u128; 1 << n];
    counts[full as usize] = 1;
    for mask in (0..full).rev() {
        let mut total = 0u128;
        for i in 0..n {
            let bit = 1u32 << i;
            if mask & bit == 0 && pred_mask[i] & mask == pred_mask[i] {
                total += counts[(mask | bit) as usize];
            }
        }
        counts[mask as usize] = total;
    }
    counts
}

/// Draws a dependency-respecting order over the required nodes, uniformly
/// among all valid orders.
pub fn sample_required_order(g: &InfoGraph, rng: &mut impl Rng) -> Vec<NodeId> {
    let req: Vec<NodeId> = g.required.iter().cloned().collect();
    let n = req.len();
    if n == 0 {
        return Vec::new();
    }
    let counts = extension_counts(g, &req);
    let index: HashMap<&str, usize> = req.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut pred_mask = vec![0u32; n];
    for (a, b) in &g.deps {
        if let (Some(&ia), Some(&ib)) = (index.get(a.as_str()), index.get(b.as_str())) {
            pred_mask[ib] |= 1 << ia;
        }
    }

    let mut mask = 0u32;
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let total = counts[mask as usize];
        debug_assert!(total > 0, "validated graphs always extend");
        let mut draw = rng.gen_range(0..total);
        for i in 0..n {
            let bit = 1u32 << i;
            if mask & bit != 0 || pred_mask[i] & mask != pred_mask[i] {
                continue;
            }
            let branch = counts[(mask | bit) as usize];
            if draw < branch {
                order.push(req[i].clone());
                mask |= bit;
                break;
            }
            draw -= branch;
        }
    }
    order
}

pub fn goal_text(g: &InfoGraph) -> String {
    format!("collect the required information reachable from {}", g.start)
}

/// Emits a successful expert trajectory: an opening user turn anchoring the
/// start node, then one ASK/ANSWER pair per required node in a sampled valid
/// order. With nothing required, the expert immediately stops.
pub fn sample_expert_trajectory(g: &InfoGraph, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample_required_order(g, &mut rng);
    let mut turns = vec![Utterance::user(format!("ANSWER({}, ack)", g.start))];
    if order.is_empty() {
        turns.push(Utterance::assistant(STOP_SENTINEL));
    } else {
        for v in &order {
            turns.push(Utterance::assistant(format!("ASK({v})")));
            turns.push(Utterance::user(format!("ANSWER({v}, ack)")));
        }
    }
    Trajectory {
        id: format!("traj-{seed:016x}"),
        goal: goal_text(g),
        outcome: Outcome::Success,
        turns,
        extra: serde_json::Map::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Ask(NodeId),
    Answer(NodeId, String),
    Stop,
}

fn ask_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^ASK\(([^()]+)\)$").expect("static pattern compiles"))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^ANSWER\(([^(),]+),\s*([^()]*)\)$").expect("static pattern compiles"))
}

fn ask_scan_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"ASK\(([^()]+)\)").expect("static pattern compiles"))
}

fn parse_token(line: &str) -> Option<Token> {
    let line = line.trim();
    if line == STOP_SENTINEL {
        return Some(Token::Stop);
    }
    if let Some(c) = ask_re().captures(line) {
        return Some(Token::Ask(normalize(&c[1])));
    }
    if let Some(c) = answer_re().captures(line) {
        return Some(Token::Answer(normalize(&c[1]), c[2].trim().to_string()));
    }
    None
}

/// Parses an utterance as canonical tokens, one per non-empty line.
pub fn parse_canonical(text: &str) -> Result<Vec<Token>, GraphError> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        tokens.push(parse_token(line).ok_or_else(|| GraphError::NonCanonical(line.trim().to_string()))?);
    }
    Ok(tokens)
}

/// Node ids answered in the given turns (user side of the protocol).
fn answered_nodes(turns: &[Utterance], g: &InfoGraph) -> Result<BTreeSet<NodeId>, GraphError> {
    let mut covered = BTreeSet::new();
    for u in turns {
        for token in parse_canonical(&u.text)? {
            if let Token::Answer(id, _) = token {
                if u.speaker == Speaker::User && g.required.contains(&id) {
                    covered.insert(id);
                }
            }
        }
    }
    Ok(covered)
}

/// Ground-truth extraction: required nodes answered in the sample's future
/// and not already answered in its context. Depends only on the covered
/// sets, not on the order they were reached.
pub fn deterministic_extract(sample: &TurnSample, g: &InfoGraph) -> Result<BTreeSet<InfoItem>, GraphError> {
    let before = answered_nodes(&sample.context, g)?;
    let after = answered_nodes(&sample.future, g)?;
    Ok(after
        .difference(&before)
        .filter_map(|id| InfoItem::new(id))
        .collect())
}

/// Covered set implied by a sample's context.
pub fn covered_from_context(sample: &TurnSample, g: &InfoGraph) -> Result<BTreeSet<NodeId>, GraphError> {
    answered_nodes(&sample.context, g)
}

/// Scans free text for ASK tokens. Returns the asked node ids plus whether
/// the text consists of nothing but ASK tokens and whitespace.
pub fn scan_asks(text: &str) -> (Vec<NodeId>, bool) {
    let mut ids = Vec::new();
    let mut residue = String::from(text);
    for c in ask_scan_re().captures_iter(text) {
        ids.push(normalize(&c[1]));
        residue = residue.replacen(&c[0], "", 1);
    }
    let clean = residue.trim().is_empty();
    (ids, clean)
}

/// Deterministic grading rule. Content: 1.0 when an asked node is in the
/// target info set; 0.5 when it is a 0.5-weight distractor or shares a
/// dependency edge with a target node; else 0.0; multiple asks grade at the
/// best asked node. Format: 1.0 for exactly one ASK token and nothing else,
/// 0.5 for exactly two, 0.0 otherwise.
pub fn deterministic_grade(question: &str, info_set: &BTreeSet<InfoItem>, g: &InfoGraph) -> GraderVerdict {
    let (asked, clean) = scan_asks(question);
    let format_score = if !clean {
        0.0
    } else {
        match asked.len() {
            1 => 1.0,
            2 => 0.5,
            _ => 0.0,
        }
    };

    let target: BTreeSet<&str> = info_set.iter().map(|i| i.text()).collect();
    let neighbor = |id: &str| {
        g.deps
            .iter()
            .any(|(a, b)| (a == id && target.contains(b.as_str())) || (b == id && target.contains(a.as_str())))
    };
    let mut content_score = 0.0f64;
    let mut best: Option<&NodeId> = None;
    for id in &asked {
        let level = if target.contains(id.as_str()) {
            1.0
        } else if g.distractor_weight(id) == 0.5 || neighbor(id) {
            0.5
        } else {
            0.0
        };
        if level > content_score || best.is_none() {
            content_score = level;
            best = Some(id);
        }
    }

    let rationale = match best {
        None => "no question token found".to_string(),
        Some(id) if content_score == 1.0 => format!("{id} is a target item"),
        Some(id) if content_score == 0.5 => format!("{id} is adjacent to the target"),
        Some(id) => format!("{id} is irrelevant to the target"),
    };
    GraderVerdict { format_score, content_score, rationale }
}

/// Natural-language rendering of a canonical utterance, for demo output.
pub fn render_natural(u: &Utterance) -> String {
    let Ok(tokens) = parse_canonical(&u.text) else {
        return u.text.clone();
    };
    let phrases: Vec<String> = tokens
        .iter()
        .map(|t| match t {
            Token::Ask(v) => format!("Could you tell me about {v}?"),
            Token::Answer(v, val) => format!("About {v}: {val}."),
            Token::Stop => "I have everything I need, thank you.".to_string(),
        })
        .collect();
    phrases.join(" ")
}

//! Group-relative policy training on the graph environment: a tabular
//! softmax policy over coverage states, rewards from the deterministic
//! grading pipeline, advantages standardized within each sampled group, and
//! a plain log-likelihood-ratio gradient step. Verifies that the hindsight
//! reward signal alone teaches both what to ask and when to stop.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{
    covered_from_context, deterministic_grade, expected_info, reachable_states, state_key,
    GraphError, InfoGraph, NodeId,
};
use crate::hindsight::{HindsightTarget, StopLabel};
use crate::metrics::{self, GradedSample, MetricsError, MetricsReport};
use crate::oracle::{GraphOracle, PromptTemplate, STOP_SENTINEL};
use crate::reward::{
    ablated_total, grade_candidate, Ablation, CandidateAction, RewardConfig, RewardError,
};
use crate::dialogue::segment;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    BadConfig(String),
    #[error("advantage groups need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("mean reward stayed below the uniform baseline {baseline:.4} for {consecutive} consecutive iterations (up to iteration {iteration})")]
    Diverged { iteration: usize, baseline: f64, consecutive: usize },
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Standardizes rewards within a group: (r − mean) / (population std + eps).
/// All-equal groups come out all-zero.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>, TrainError> {
    if rewards.len() < 2 {
        return Err(TrainError::GroupTooSmall(rewards.len()));
    }
    if !(eps > 0.0) {
        return Err(TrainError::BadConfig(format!("eps must be positive, got {eps}")));
    }
    // Exact, not tolerance-based: summation noise on identical rewards must
    // not turn a signal-free group into tiny nonzero advantages.
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolicyAction {
    Ask(NodeId),
    Stop,
}

impl PolicyAction {
    pub fn raw_text(&self) -> String {
        match self {
            PolicyAction::Ask(v) => format!("ASK({v})"),
            PolicyAction::Stop => STOP_SENTINEL.to_string(),
        }
    }
}

/// Softmax policy over {ASK(v) for every node} ∪ {STOP}, tabulated by the
/// covered-set key of each expert-reachable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct TabularPolicy {
    actions: Vec<PolicyAction>,
    logits: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    actions: Vec<String>,
    logits: BTreeMap<String, Vec<f64>>,
}

impl TryFrom<PolicyRepr> for TabularPolicy {
    type Error = String;
    fn try_from(r: PolicyRepr) -> Result<Self, String> {
        let mut actions = Vec::with_capacity(r.actions.len());
        for raw in &r.actions {
            if raw == STOP_SENTINEL {
                actions.push(PolicyAction::Stop);
            } else if let Some(v) = raw.strip_prefix("ASK(").and_then(|s| s.strip_suffix(')')) {
                actions.push(PolicyAction::Ask(v.to_string()));
            } else {
                return Err(format!("unrecognized action {raw:?}"));
            }
        }
        for (state, row) in &r.logits {
            if row.len() != actions.len() {
                return Err(format!("state {state:?} has {} logits for {} actions", row.len(), actions.len()));
            }
        }
        Ok(TabularPolicy { actions, logits: r.logits })
    }
}

impl From<TabularPolicy> for PolicyRepr {
    fn from(p: TabularPolicy) -> Self {
        PolicyRepr { actions: p.actions.iter().map(PolicyAction::raw_text).collect(), logits: p.logits }
    }
}

impl TabularPolicy {
    /// Uniform policy over every expert-reachable state of the graph.
    pub fn uniform(g: &InfoGraph) -> Self {
        let mut actions: Vec<PolicyAction> = g.nodes().iter().cloned().map(PolicyAction::Ask).collect();
        actions.push(PolicyAction::Stop);
        let logits = reachable_states(g)
            .into_iter()
            .map(|covered| (state_key(&covered), vec![0.0; actions.len()]))
            .collect();
        TabularPolicy { actions, logits }
    }

    pub fn actions(&self) -> &[PolicyAction] {
        &self.actions
    }

    pub fn states(&self) -> impl Iterator<Item = &String> {
        self.logits.keys()
    }

    fn row(&self, state: &str) -> Vec<f64> {
        self.logits.get(state).cloned().unwrap_or_else(|| vec![0.0; self.actions.len()])
    }

    /// Softmax probabilities for a state; unknown states read as uniform.
    pub fn probs(&self, state: &str) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Highest-probability action; ties resolve to the lowest index.
    pub fn greedy(&self, state: &str) -> usize {
        let probs = self.probs(state);
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample(&self, state: &str, rng: &mut impl Rng) -> usize {
        let dist = WeightedIndex::new(self.probs(state)).expect("softmax weights are positive");
        dist.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub group_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub reward: RewardConfig,
    pub ablation: Ablation,
    pub eps: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.1,
            group_size: 5,
            iterations: 2000,
            seed: 0,
            reward: RewardConfig::default(),
            ablation: Ablation::Full,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub ws: f64,
    pub wa: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub trace: Vec<TraceRow>,
    pub uniform_baseline: f64,
}

/// Ground-truth target for a coverage state: what is still missing, and
/// whether the expert would have stopped here.
pub fn state_target(g: &InfoGraph, covered: &BTreeSet<NodeId>) -> HindsightTarget {
    let info = expected_info(g, covered);
    let done = info.is_empty();
    HindsightTarget {
        trajectory_id: format!("state:{}", state_key(covered)),
        turn_index: 0,
        stop_label: if done { StopLabel::Stop } else { StopLabel::Continue },
        terminal: done,
        info_set: info,
        removed_generic: BTreeSet::new(),
    }
}

fn training_states(g: &InfoGraph, ablation: Ablation) -> Result<Vec<BTreeSet<NodeId>>, TrainError> {
    let mut states = reachable_states(g);
    if ablation == Ablation::NoRs {
        states.retain(|covered| covered.len() < g.required().len());
    }
    if states.is_empty() {
        return Err(TrainError::BadConfig(
            "no trainable states: stop-free training needs at least one required node".into(),
        ));
    }
    Ok(states)
}

struct Grading<'a> {
    g: &'a InfoGraph,
    oracle: GraphOracle,
    grader: PromptTemplate,
    cfg: RewardConfig,
}

impl<'a> Grading<'a> {
    fn new(g: &'a InfoGraph, cfg: RewardConfig) -> Self {
        Grading { g, oracle: GraphOracle::new(g.clone()), grader: PromptTemplate::default_grader(), cfg }
    }

    fn grade(&self, action: &PolicyAction, target: &HindsightTarget) -> Result<crate::reward::RewardBreakdown, TrainError> {
        let candidate = CandidateAction::parse(&action.raw_text());
        Ok(grade_candidate(&candidate, target, &self.grader, &self.oracle, &self.cfg)?)
    }
}

/// Exact mean reward of the uniform-random policy over the training state
/// distribution, used as the divergence watermark.
fn uniform_mean_reward(
    grading: &Grading,
    states: &[BTreeSet<NodeId>],
    actions: &[PolicyAction],
    ablation: Ablation,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for covered in states {
        let target = state_target(grading.g, covered);
        let mut state_sum = 0.0;
        for action in actions {
            state_sum += ablated_total(&grading.grade(action, &target)?, ablation);
        }
        total += state_sum / actions.len() as f64;
    }
    Ok(total / states.len() as f64)
}

/// Exact greedy-policy stop accuracy and question quality over the state
/// space: ws over stop-labeled states, wa over continue-labeled states where
/// the greedy action is a question (None when it never is).
fn exact_greedy_quality(policy: &TabularPolicy, g: &InfoGraph) -> (f64, Option<f64>) {
    let mut ws_sum = 0.0;
    let mut ws_n = 0usize;
    let mut wa_sum = 0.0;
    let mut wa_n = 0usize;
    for covered in reachable_states(g) {
        let target = state_target(g, &covered);
        let action = &policy.actions()[policy.greedy(&state_key(&covered))];
        match target.stop_label {
            StopLabel::Stop => {
                ws_sum += matches!(action, PolicyAction::Stop) as u8 as f64;
                ws_n += 1;
            }
            StopLabel::Continue => {
                if let PolicyAction::Ask(_) = action {
                    let verdict = deterministic_grade(&action.raw_text(), &target.info_set, g);
                    wa_sum += verdict.content_score;
                    wa_n += 1;
                }
            }
        }
    }
    let ws = if ws_n > 0 { ws_sum / ws_n as f64 } else { 1.0 };
    let wa = (wa_n > 0).then(|| wa_sum / wa_n as f64);
    (ws, wa)
}

const DIVERGENCE_PATIENCE: usize = 50;

/// GRPO-style training loop. Each iteration samples one reachable state,
/// draws a group of actions from the policy, grades them against the
/// state's hindsight target, standardizes within the group, and applies
/// lr/G · Σ_i A_i · (e_{a_i} − π(·|s)) to the state's logits.
pub fn train(g: &InfoGraph, hyper: &TrainHyper) -> Result<TrainOutcome, TrainError> {
    if hyper.group_size < 2 {
        return Err(TrainError::GroupTooSmall(hyper.group_size));
    }
    if !(hyper.lr > 0.0) {
        return Err(TrainError::BadConfig(format!("learning rate must be positive, got {}", hyper.lr)));
    }
    if !(hyper.reward.beta > 0.0) {
        return Err(TrainError::BadConfig(format!("beta must be positive, got {}", hyper.reward.beta)));
    }

    let mut policy = TabularPolicy::uniform(g);
    let states = training_states(g, hyper.ablation)?;
    let grading = Grading::new(g, hyper.reward);
    let baseline = uniform_mean_reward(&grading, &states, policy.actions(), hyper.ablation)?;
    let targets: Vec<HindsightTarget> = states.iter().map(|c| state_target(g, c)).collect();
    let keys: Vec<String> = states.iter().map(state_key).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut trace = Vec::with_capacity(hyper.iterations);
    let mut below_streak = 0usize;

    for iteration in 0..hyper.iterations {
        let s = rng.gen_range(0..states.len());
        let key = &keys[s];
        let target = &targets[s];

        let probs = policy.probs(key);
        let mut picks = Vec::with_capacity(hyper.group_size);
        let mut rewards = Vec::with_capacity(hyper.group_size);
        for _ in 0..hyper.group_size {
            let a = policy.sample(key, &mut rng);
            let breakdown = grading.grade(&policy.actions()[a], target)?;
            picks.push(a);
            rewards.push(ablated_total(&breakdown, hyper.ablation));
        }
        let advantages = group_advantages(&rewards, hyper.eps)?;

        let row = policy.logits.get_mut(key).expect("training states are tabulated");
        let scale = hyper.lr / hyper.group_size as f64;
        for (a, adv) in picks.iter().zip(&advantages) {
            for (j, logit) in row.iter_mut().enumerate() {
                let indicator = (j == *a) as u8 as f64;
                *logit += scale * adv * (indicator - probs[j]);
            }
        }

        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let (ws, wa) = exact_greedy_quality(&policy, g);
        trace.push(TraceRow { iteration, mean_reward, ws, wa });

        if mean_reward < baseline {
            below_streak += 1;
            if below_streak >= DIVERGENCE_PATIENCE {
                return Err(TrainError::Diverged {
                    iteration,
                    baseline,
                    consecutive: below_streak,
                });
            }
        } else {
            below_streak = 0;
        }
    }

    Ok(TrainOutcome { policy, trace, uniform_baseline: baseline })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Greedy,
    Sample,
}

/// Rolls the policy over freshly sampled expert contexts and grades one
/// action per turn sample with the full reward pipeline.
pub fn evaluate_policy(
    policy: &TabularPolicy,
    g: &InfoGraph,
    n_rollouts: usize,
    seed: u64,
    mode: EvalMode,
    cfg: &RewardConfig,
) -> Result<MetricsReport, TrainError> {
    if n_rollouts == 0 {
        return Err(TrainError::BadConfig("evaluation needs at least one rollout".into()));
    }
    let grading = Grading::new(g, *cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut graded = Vec::new();
    for r in 0..n_rollouts {
        let trajectory = crate::graph::sample_expert_trajectory(g, seed.wrapping_add(r as u64));
        for sample in segment(&trajectory) {
            let covered = covered_from_context(&sample, g)?;
            let key = state_key(&covered);
            let a = match mode {
                EvalMode::Greedy => policy.greedy(&key),
                EvalMode::Sample => policy.sample(&key, &mut rng),
            };
            let action = &policy.actions()[a];
            let target = state_target(g, &covered);
            let breakdown = grading.grade(action, &target)?;
            let predicted = CandidateAction::parse(&action.raw_text()).assessment();
            graded.push(GradedSample { target, breakdown, predicted });
        }
    }
    Ok(metrics::compute(&graded)?)
}

/// Best achievable mean total reward per evaluation sample, by exhaustive
/// search over actions at every reachable state. A rollout of n required
/// nodes contributes one state per coverage size, so sizes weigh equally.
pub fn optimal_mean_total(g: &InfoGraph, cfg: &RewardConfig) -> Result<f64, TrainError> {
    let grading = Grading::new(g, *cfg);
    let actions: Vec<PolicyAction> = {
        let mut a: Vec<PolicyAction> = g.nodes().iter().cloned().map(PolicyAction::Ask).collect();
        a.push(PolicyAction::Stop);
        a
    };
    let mut best_by_size: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for covered in reachable_states(g) {
        let target = state_target(g, &covered);
        let mut best = f64::NEG_INFINITY;
        for action in &actions {
            best = best.max(grading.grade(action, &target)?.total);
        }
        let entry = best_by_size.entry(covered.len()).or_insert((best, best));
        entry.0 = entry.0.min(best);
        entry.1 = entry.1.max(best);
    }
    let mut sum = 0.0;
    for (size, (lo, hi)) in &best_by_size {
        debug_assert!(hi - lo < 1e-12, "size {size} states disagree on best value");
        sum += hi;
    }
    Ok(sum / best_by_size.len() as f64)
}

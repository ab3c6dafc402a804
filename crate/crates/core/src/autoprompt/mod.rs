//! Iterative prompt calibration: propose candidate rewrites of the incumbent
//! prompt, score each against a human-verified anchor set, keep the best.
//! The incumbent is always in the candidate pool, so the best score never
//! regresses.

pub mod toy;

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::TurnSample;
use crate::hindsight::{extract_info, render_info_set, HindsightError, HindsightTarget, InfoItem};
use crate::oracle::{
    parse_grader, sample_rollouts, DecodeParams, Oracle, OracleError, OracleRequest,
    PromptTemplate, PromptType,
};
use crate::reward::{grade_candidate, CandidateAction, RewardConfig};

#[derive(Debug, thiserror::Error)]
pub enum AutopromptError {
    #[error("anchor set must be non-empty")]
    EmptyAnchors,
    #[error("anchor gold score must be on the {{0, 0.5, 1}} grid, got {0}")]
    LabelOffGrid(f64),
    #[error("scorer invalidated: {failed} of {total} anchors hit oracle failures (over the 20% budget)")]
    ScorerInvalidated { failed: usize, total: usize },
    #[error("{0} rollout anchors but {1} targets")]
    MismatchedTargets(usize, usize),
    #[error("calibration parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Hindsight(#[from] HindsightError),
}

/// Set F1 on normalized exact match. Two empty sets count as perfect
/// agreement so the scorer stays total.
pub fn set_f1(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let overlap = a.intersection(b).count();
    2.0 * overlap as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractAnchor {
    pub goal: String,
    pub sample: TurnSample,
    pub gold: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraderAnchor {
    pub reference: BTreeSet<String>,
    pub candidate: String,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutAnchor {
    pub goal: String,
    pub sample: TurnSample,
}

/// Generates rewritten prompt bodies for the incumbent. Implementations
/// need not guarantee validity; invalid bodies are filtered downstream.
pub trait Mutator {
    fn mutate(&self, incumbent: &PromptTemplate, count: usize, rng: &mut dyn RngCore) -> Vec<String>;
}

/// Scores one candidate prompt against the scorer's anchor set.
pub trait PromptScorer: Sync {
    fn score(&self, p: &PromptTemplate) -> Result<f64, AutopromptError>;
}

/// Builds the candidate pool for one iteration: the incumbent at index 0,
/// then up to n−1 distinct, syntactically valid mutations. Never empty.
pub fn propose(
    incumbent: &PromptTemplate,
    n: usize,
    mutator: &dyn Mutator,
    rng: &mut dyn RngCore,
) -> Vec<PromptTemplate> {
    let mut pool = vec![incumbent.clone()];
    let mut bodies: BTreeSet<&str> = BTreeSet::new();
    bodies.insert(incumbent.body());
    if n <= 1 {
        return pool;
    }
    let proposals = mutator.mutate(incumbent, n - 1, rng);
    let mut accepted = Vec::new();
    for body in &proposals {
        if pool.len() + accepted.len() >= n {
            break;
        }
        if bodies.contains(body.as_str()) {
            continue;
        }
        match PromptTemplate::new(incumbent.prompt_type(), body.clone()) {
            Ok(t) => {
                bodies.insert(body.as_str());
                accepted.push(t);
            }
            Err(e) => log::warn!("dropping invalid prompt candidate: {e}"),
        }
    }
    pool.extend(accepted);
    pool
}

/// Mean set-F1 of a candidate extraction prompt over labeled anchors.
/// Transport failures count toward the 20% invalidation budget; output the
/// anchors' humans would call unparseable scores 0 for that anchor.
pub struct ExtractScorer<'a> {
    anchors: &'a [ExtractAnchor],
    oracle: &'a dyn Oracle,
}

impl<'a> ExtractScorer<'a> {
    pub fn new(anchors: &'a [ExtractAnchor], oracle: &'a dyn Oracle) -> Result<Self, AutopromptError> {
        if anchors.is_empty() {
            return Err(AutopromptError::EmptyAnchors);
        }
        Ok(ExtractScorer { anchors, oracle })
    }
}

fn over_failure_budget(failed: usize, total: usize) -> bool {
    failed * 5 > total
}

impl PromptScorer for ExtractScorer<'_> {
    fn score(&self, p: &PromptTemplate) -> Result<f64, AutopromptError> {
        p.expect_type(PromptType::Extract).map_err(OracleError::from)?;
        let mut failed = 0usize;
        let mut sum = 0.0;
        let mut scored = 0usize;
        for anchor in self.anchors {
            match extract_info(&anchor.sample, &anchor.goal, p, self.oracle) {
                Ok(info) => {
                    let extracted: BTreeSet<String> = info.iter().map(|i| i.text().to_string()).collect();
                    sum += set_f1(&extracted, &anchor.gold);
                    scored += 1;
                }
                Err(HindsightError::ExtractionParse(_)) => {
                    scored += 1;
                }
                Err(_) => failed += 1,
            }
        }
        if over_failure_budget(failed, self.anchors.len()) {
            return Err(AutopromptError::ScorerInvalidated { failed, total: self.anchors.len() });
        }
        Ok(sum / scored as f64)
    }
}

/// Negative MSE of a candidate grader prompt against gold content scores.
/// Unparseable grader output is penalized with the maximum squared error.
pub struct GraderScorer<'a> {
    anchors: &'a [GraderAnchor],
    oracle: &'a dyn Oracle,
}

impl<'a> GraderScorer<'a> {
    pub fn new(anchors: &'a [GraderAnchor], oracle: &'a dyn Oracle) -> Result<Self, AutopromptError> {
        if anchors.is_empty() {
            return Err(AutopromptError::EmptyAnchors);
        }
        for a in anchors {
            if ![0.0, 0.5, 1.0].contains(&a.gold) {
                return Err(AutopromptError::LabelOffGrid(a.gold));
            }
        }
        Ok(GraderScorer { anchors, oracle })
    }
}

impl PromptScorer for GraderScorer<'_> {
    fn score(&self, p: &PromptTemplate) -> Result<f64, AutopromptError> {
        p.expect_type(PromptType::Grader).map_err(OracleError::from)?;
        let mut failed = 0usize;
        let mut sq_sum = 0.0;
        let mut scored = 0usize;
        for anchor in self.anchors {
            let reference: BTreeSet<InfoItem> = anchor.reference.iter().filter_map(|s| InfoItem::new(s)).collect();
            let bindings = std::collections::BTreeMap::from([
                ("reference_info".to_string(), render_info_set(&reference)),
                ("candidate".to_string(), anchor.candidate.clone()),
            ]);
            let req = OracleRequest::new(p.clone(), bindings, DecodeParams::default())?;
            match self.oracle.complete(&req) {
                Ok(raw) => {
                    let err = match parse_grader(&raw) {
                        Ok(verdict) => (verdict.content_score - anchor.gold).powi(2),
                        Err(_) => 1.0,
                    };
                    sq_sum += err;
                    scored += 1;
                }
                Err(_) => failed += 1,
            }
        }
        if over_failure_budget(failed, self.anchors.len()) {
            return Err(AutopromptError::ScorerInvalidated { failed, total: self.anchors.len() });
        }
        Ok(-(sq_sum / scored as f64))
    }
}

/// Mean total reward of rollouts sampled with a candidate rollout prompt,
/// graded by an already-fixed grader against precomputed targets.
pub struct RolloutScorer<'a> {
    anchors: &'a [RolloutAnchor],
    targets: Vec<HindsightTarget>,
    oracle: &'a dyn Oracle,
    grader: &'a PromptTemplate,
    reward_cfg: RewardConfig,
    n_samples: usize,
    max_in_flight: usize,
}

impl<'a> RolloutScorer<'a> {
    pub fn new(
        anchors: &'a [RolloutAnchor],
        targets: Vec<HindsightTarget>,
        oracle: &'a dyn Oracle,
        grader: &'a PromptTemplate,
        reward_cfg: RewardConfig,
        n_samples: usize,
    ) -> Result<Self, AutopromptError> {
        if anchors.is_empty() {
            return Err(AutopromptError::EmptyAnchors);
        }
        if anchors.len() != targets.len() {
            return Err(AutopromptError::MismatchedTargets(anchors.len(), targets.len()));
        }
        grader.expect_type(PromptType::Grader).map_err(OracleError::from)?;
        if n_samples == 0 {
            return Err(AutopromptError::BadParams("n_samples must be at least 1".into()));
        }
        Ok(RolloutScorer { anchors, targets, oracle, grader, reward_cfg, n_samples, max_in_flight: 8 })
    }
}

impl PromptScorer for RolloutScorer<'_> {
    fn score(&self, p: &PromptTemplate) -> Result<f64, AutopromptError> {
        p.expect_type(PromptType::Rollout).map_err(OracleError::from)?;
        let mut failed_anchors = 0usize;
        let mut sum = 0.0;
        let mut graded = 0usize;
        for (anchor, target) in self.anchors.iter().zip(&self.targets) {
            let decode = DecodeParams::default();
            let batch =
                match sample_rollouts(self.oracle, p, &anchor.sample, self.n_samples, &decode, self.max_in_flight) {
                    Ok(batch) => batch,
                    Err(_) => {
                        failed_anchors += 1;
                        continue;
                    }
                };
            let mut anchor_ok = false;
            for raw in batch.into_iter().flatten() {
                let candidate = CandidateAction::parse(&raw);
                match grade_candidate(&candidate, target, self.grader, self.oracle, &self.reward_cfg) {
                    Ok(b) => {
                        sum += b.total;
                        graded += 1;
                        anchor_ok = true;
                    }
                    Err(_) => {}
                }
            }
            if !anchor_ok {
                failed_anchors += 1;
            }
        }
        if over_failure_budget(failed_anchors, self.anchors.len()) || graded == 0 {
            return Err(AutopromptError::ScorerInvalidated { failed: failed_anchors, total: self.anchors.len() });
        }
        Ok(sum / graded as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationParams {
    pub k: usize,
    pub n_per_iter: usize,
    pub seed: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams { k: 30, n_per_iter: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub index: usize,
    pub body: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub candidates: Vec<CandidateTrace>,
    pub selected: usize,
    pub best_score: f64,
}

/// One flattened trace line per scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub candidate: usize,
    pub score: f64,
    pub selected: bool,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    pub k: usize,
    pub iterations: Vec<IterationTrace>,
    pub best: PromptTemplate,
    pub best_score: f64,
}

impl CalibrationRun {
    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.iterations
            .iter()
            .flat_map(|it| {
                it.candidates.iter().map(|c| TraceRecord {
                    iteration: it.iteration,
                    candidate: c.index,
                    score: c.score,
                    selected: c.index == it.selected,
                    body: c.body.clone(),
                })
            })
            .collect()
    }
}

/// Runs K iterations of propose → score → select. Candidates within an
/// iteration are scored concurrently; a candidate must score strictly above
/// the incumbent to replace it, so ties keep the incumbent and equal
/// challengers resolve to the lowest index.
pub fn calibrate(
    seed_prompt: &PromptTemplate,
    params: CalibrationParams,
    mutator: &dyn Mutator,
    scorer: &dyn PromptScorer,
) -> Result<CalibrationRun, AutopromptError> {
    if params.k == 0 {
        return Err(AutopromptError::BadParams("iteration budget K must be at least 1".into()));
    }
    if params.n_per_iter == 0 {
        return Err(AutopromptError::BadParams("n_per_iter must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best = seed_prompt.clone();
    let mut iterations = Vec::with_capacity(params.k);
    let mut best_score = f64::NEG_INFINITY;

    for iteration in 0..params.k {
        let pool = propose(&best, params.n_per_iter, mutator, &mut rng);
        let mut scores: Vec<Option<Result<f64, AutopromptError>>> = Vec::new();
        scores.resize_with(pool.len(), || None);
        std::thread::scope(|scope| {
            for (slot, candidate) in scores.iter_mut().zip(&pool) {
                scope.spawn(move || *slot = Some(scorer.score(candidate)));
            }
        });

        let mut traced = Vec::with_capacity(pool.len());
        let mut selected = 0usize;
        let mut selected_score = f64::NEG_INFINITY;
        for (index, (candidate, slot)) in pool.iter().zip(scores).enumerate() {
            let score = slot.expect("every candidate scored")?;
            if index == 0 || score > selected_score {
                selected = index;
                selected_score = score;
            }
            traced.push(CandidateTrace { index, body: candidate.body().to_string(), score });
        }

        best = pool[selected].clone();
        best_score = selected_score;
        iterations.push(IterationTrace { iteration, candidates: traced, selected, best_score });
    }

    Ok(CalibrationRun { k: params.k, iterations, best, best_score })
}

/// Rule-based mutator: appends one emphasis sentence drawn from a fixed
/// pool, or strips a previously appended one.
pub struct RuleMutator;

const EMPHASIS_POOL: [&str; 6] = [
    "Be exhaustive.",
    "Be precise.",
    "Prefer concrete wording.",
    "Do not invent items.",
    "Answer tersely.",
    "Keep the output format exact.",
];

impl Mutator for RuleMutator {
    fn mutate(&self, incumbent: &PromptTemplate, count: usize, rng: &mut dyn RngCore) -> Vec<String> {
        let base = incumbent.body().trim_end();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let pick = EMPHASIS_POOL[(rng.next_u32() as usize) % EMPHASIS_POOL.len()];
            if let Some(stripped) = base.strip_suffix(pick) {
                out.push(stripped.trim_end().to_string());
            } else {
                out.push(format!("{base} {pick}"));
            }
        }
        out
    }
}

/// LLM-paraphrase mutator: asks the oracle to rewrite the incumbent body.
pub struct LlmMutator<'a> {
    pub oracle: &'a dyn Oracle,
}

impl Mutator for LlmMutator<'_> {
    fn mutate(&self, incumbent: &PromptTemplate, count: usize, rng: &mut dyn RngCore) -> Vec<String> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let decode = DecodeParams { seed: Some(rng.next_u64()), ..DecodeParams::default() };
            match self.oracle.complete_aux(crate::oracle::AuxTask::Paraphrase, incumbent.body(), &decode) {
                Ok(body) => out.push(body),
                Err(e) => log::warn!("paraphrase mutation failed: {e}"),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Utterance;
    use crate::graph::InfoGraph;
    use crate::oracle::{AuxTask, GraphOracle};
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn graph() -> InfoGraph {
        InfoGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            "s".into(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![],
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn mid_sample() -> TurnSample {
        TurnSample {
            trajectory_id: "t".into(),
            turn_index: 1,
            context: vec![Utterance::user("ANSWER(s, ack)")],
            future: vec![
                Utterance::assistant("ASK(a)"),
                Utterance::user("ANSWER(a, ack)"),
                Utterance::assistant("ASK(b)"),
                Utterance::user("ANSWER(b, ack)"),
                Utterance::assistant("ASK(c)"),
                Utterance::user("ANSWER(c, ack)"),
            ],
            expert_action: Some(Utterance::assistant("ASK(a)")),
        }
    }

    #[test]
    fn set_f1_handles_empty_and_partial_overlap() {
        let s = |items: &[&str]| items.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(set_f1(&s(&[]), &s(&[])), 1.0);
        assert_eq!(set_f1(&s(&[]), &s(&["x"])), 0.0);
        assert_eq!(set_f1(&s(&["a", "b"]), &s(&["b", "c"])), 0.5);
        assert_eq!(set_f1(&s(&["a"]), &s(&["a"])), 1.0);
    }

    #[test]
    fn propose_keeps_incumbent_first_and_filters_invalid_bodies() {
        struct BadMutator;
        impl Mutator for BadMutator {
            fn mutate(&self, incumbent: &PromptTemplate, count: usize, _rng: &mut dyn RngCore) -> Vec<String> {
                let mut v = vec!["no placeholders at all".to_string()];
                for i in 0..count {
                    v.push(format!("{} variant {i}", incumbent.body()));
                }
                v
            }
        }
        let seed = PromptTemplate::default_extract();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = propose(&seed, 3, &BadMutator, &mut rng);
        assert_eq!(pool.len(), 3);
        assert_eq!(pool[0].body(), seed.body());
        for c in &pool[1..] {
            assert_ne!(c.body(), seed.body());
        }
    }

    #[test]
    fn extract_scorer_matches_hand_f1() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![
            ExtractAnchor {
                goal: "g".into(),
                sample: mid_sample(),
                gold: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
            },
            ExtractAnchor {
                goal: "g".into(),
                sample: mid_sample(),
                gold: ["b", "c", "z"].iter().map(|s| s.to_string()).collect(),
            },
        ];
        let scorer = ExtractScorer::new(&anchors, &oracle).unwrap();
        // Second anchor: extracted {a,b,c} vs gold {b,c,z} -> F1 4/6.
        let expected = (1.0 + 4.0 / 6.0) / 2.0;
        let got = scorer.score(&PromptTemplate::default_extract()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    struct FlakyOracle {
        inner: GraphOracle,
        fail_every: usize,
        calls: AtomicUsize,
    }

    impl Oracle for FlakyOracle {
        fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
            let n = self.calls.fetch_add(1, Ordering::Relaxed);
            if n % self.fail_every == 0 {
                return Err(OracleError::RetryableExhausted { attempts: 5, last: "HTTP 429".into() });
            }
            self.inner.complete(req)
        }
        fn complete_aux(&self, t: AuxTask, p: &str, d: &DecodeParams) -> Result<String, OracleError> {
            self.inner.complete_aux(t, p, d)
        }
    }

    #[test]
    fn failure_budget_invalidates_the_scorer() {
        let oracle = FlakyOracle { inner: GraphOracle::new(graph()), fail_every: 2, calls: AtomicUsize::new(0) };
        let anchors: Vec<ExtractAnchor> = (0..4)
            .map(|_| ExtractAnchor {
                goal: "g".into(),
                sample: mid_sample(),
                gold: ["a"].iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        let scorer = ExtractScorer::new(&anchors, &oracle).unwrap();
        let err = scorer.score(&PromptTemplate::default_extract()).unwrap_err();
        assert!(matches!(err, AutopromptError::ScorerInvalidated { failed: 2, total: 4 }));
    }

    #[test]
    fn grader_scorer_matches_hand_mse() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![
            GraderAnchor { reference: ["a".to_string()].into(), candidate: "ASK(a)".into(), gold: 1.0 },
            GraderAnchor { reference: ["a".to_string()].into(), candidate: "ASK(b)".into(), gold: 0.5 },
        ];
        // Oracle grades ASK(a) as 1.0 (match) and ASK(b) as 0.0 (irrelevant):
        // errors 0 and 0.25.
        let scorer = GraderScorer::new(&anchors, &oracle).unwrap();
        let got = scorer.score(&PromptTemplate::default_grader()).unwrap();
        assert!((got - (-0.125)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn grader_scorer_rejects_off_grid_gold() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![GraderAnchor { reference: BTreeSet::new(), candidate: "x".into(), gold: 0.7 }];
        assert!(matches!(GraderScorer::new(&anchors, &oracle), Err(AutopromptError::LabelOffGrid(_))));
    }

    #[test]
    fn duplicate_conflicting_anchors_still_score() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![
            GraderAnchor { reference: ["a".to_string()].into(), candidate: "ASK(a)".into(), gold: 1.0 },
            GraderAnchor { reference: ["a".to_string()].into(), candidate: "ASK(a)".into(), gold: 0.0 },
        ];
        let scorer = GraderScorer::new(&anchors, &oracle).unwrap();
        let got = scorer.score(&PromptTemplate::default_grader()).unwrap();
        assert!((got - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn rollout_scorer_prefers_the_on_target_policy() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![RolloutAnchor { goal: "g".into(), sample: mid_sample() }];
        let targets = vec![HindsightTarget::from_extraction(
            &mid_sample(),
            ["a", "b", "c"].iter().filter_map(|s| InfoItem::new(s)).collect(),
        )];
        let grader = PromptTemplate::default_grader();
        let scorer =
            RolloutScorer::new(&anchors, targets, &oracle, &grader, RewardConfig::default(), 3).unwrap();

        let good = PromptTemplate::default_rollout();
        let stop_body = format!("[policy: stop] {}", good.body());
        let stopper = PromptTemplate::new(PromptType::Rollout, stop_body).unwrap();

        let good_score = scorer.score(&good).unwrap();
        let stop_score = scorer.score(&stopper).unwrap();
        // Asking an uncovered required node: 1·(1+1)+1 = 3. Stopping on a
        // CONTINUE target: 0.
        assert_eq!(good_score, 3.0);
        assert_eq!(stop_score, 0.0);
    }

    #[test]
    fn calibrate_is_monotone_and_deterministic() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![ExtractAnchor {
            goal: "g".into(),
            sample: mid_sample(),
            gold: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
        }];
        let scorer = ExtractScorer::new(&anchors, &oracle).unwrap();
        let params = CalibrationParams { k: 5, n_per_iter: 4, seed: 42 };
        let run1 = calibrate(&PromptTemplate::default_extract(), params, &RuleMutator, &scorer).unwrap();
        let run2 = calibrate(&PromptTemplate::default_extract(), params, &RuleMutator, &scorer).unwrap();
        assert_eq!(run1, run2);
        let mut prev = f64::NEG_INFINITY;
        for it in &run1.iterations {
            assert!(it.best_score >= prev);
            prev = it.best_score;
        }
    }

    #[test]
    fn incumbent_only_pool_returns_the_seed() {
        struct NullMutator;
        impl Mutator for NullMutator {
            fn mutate(&self, _i: &PromptTemplate, _c: usize, _r: &mut dyn RngCore) -> Vec<String> {
                Vec::new()
            }
        }
        let oracle = GraphOracle::new(graph());
        let anchors = vec![ExtractAnchor {
            goal: "g".into(),
            sample: mid_sample(),
            gold: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
        }];
        let scorer = ExtractScorer::new(&anchors, &oracle).unwrap();
        let seed = PromptTemplate::default_extract();
        let run = calibrate(&seed, CalibrationParams { k: 1, n_per_iter: 4, seed: 0 }, &NullMutator, &scorer).unwrap();
        assert_eq!(run.best.body(), seed.body());
        assert_eq!(run.iterations[0].candidates.len(), 1);
    }

    #[test]
    fn trace_records_flatten_one_line_per_candidate() {
        let oracle = GraphOracle::new(graph());
        let anchors = vec![ExtractAnchor {
            goal: "g".into(),
            sample: mid_sample(),
            gold: ["a"].iter().map(|s| s.to_string()).collect(),
        }];
        let scorer = ExtractScorer::new(&anchors, &oracle).unwrap();
        let run = calibrate(
            &PromptTemplate::default_extract(),
            CalibrationParams { k: 2, n_per_iter: 3, seed: 1 },
            &RuleMutator,
            &scorer,
        )
        .unwrap();
        let records = run.trace_records();
        let total: usize = run.iterations.iter().map(|i| i.candidates.len()).sum();
        assert_eq!(records.len(), total);
        assert!(records.iter().filter(|r| r.selected).count() >= run.k);
        let line = serde_json::to_string(&records[0]).unwrap();
        for key in ["iteration", "candidate", "score", "body"] {
            assert!(line.contains(key));
        }
    }

    #[test]
    fn llm_mutator_round_trips_through_aux_completion() {
        let oracle = GraphOracle::new(graph());
        let mutator = LlmMutator { oracle: &oracle };
        let seed = PromptTemplate::default_extract();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = propose(&seed, 4, &mutator, &mut rng);
        assert!(pool.len() >= 2, "paraphrases should produce valid variants");
        for t in &pool {
            assert_eq!(t.prompt_type(), PromptType::Extract);
        }
    }
}

//! Reward computation for a candidate action against a hindsight target:
//! graded question quality r_a, binary stop/continue correctness r_s, the
//! format term omega, and their fusion into a single total.

use serde::{Deserialize, Serialize};

use crate::hindsight::{render_info_set, HindsightTarget, StopLabel};
use crate::oracle::{
    parse_grader, DecodeParams, Oracle, OracleError, OracleRequest, PromptTemplate, PromptType,
    STOP_SENTINEL,
};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Assessment {
    Continue,
    Stop,
}

/// A raw policy output. The stop decision is carried purely by the
/// `<stop />` sentinel; anything else is a CONTINUE with the raw text as
/// the question.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateAction {
    raw_text: String,
    assessment: Assessment,
    question_text: String,
}

impl CandidateAction {
    pub fn parse(raw: &str) -> Self {
        let trimmed = raw.trim();
        if trimmed == STOP_SENTINEL {
            CandidateAction {
                raw_text: raw.to_string(),
                assessment: Assessment::Stop,
                question_text: String::new(),
            }
        } else {
            CandidateAction {
                raw_text: raw.to_string(),
                assessment: Assessment::Continue,
                question_text: trimmed.to_string(),
            }
        }
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn assessment(&self) -> Assessment {
        self.assessment
    }

    pub fn question_text(&self) -> &str {
        &self.question_text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Multiplicative,
    Sum,
}

/// Reward composition variants: the full fused reward, stop-signal removed
/// (question quality only), or question-grading removed (stop signal only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoRs,
    NoRa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub beta: f64,
    pub mode: FusionMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { beta: 1.0, mode: FusionMode::Multiplicative }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_a: f64,
    pub r_s: f64,
    pub omega: f64,
    pub beta: f64,
    pub mode: FusionMode,
    pub total: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("beta must be positive, got {0}")]
    BadBeta(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Binary stop/continue correctness.
pub fn score_macro(candidate: &CandidateAction, target: &HindsightTarget) -> f64 {
    let matches = match (candidate.assessment, target.stop_label) {
        (Assessment::Continue, StopLabel::Continue) | (Assessment::Stop, StopLabel::Stop) => true,
        _ => false,
    };
    if matches {
        1.0
    } else {
        0.0
    }
}

/// Graded question quality via the grader prompt: returns (r_a, format_level).
/// Only called into the oracle when the candidate continues and the target
/// has something to ask about; otherwise both are 0 by definition.
pub fn score_micro(
    candidate: &CandidateAction,
    target: &HindsightTarget,
    grader: &PromptTemplate,
    oracle: &dyn Oracle,
) -> Result<(f64, f64), RewardError> {
    grader.expect_type(PromptType::Grader).map_err(OracleError::from)?;
    if candidate.assessment == Assessment::Stop || target.info_set.is_empty() {
        return Ok((0.0, 0.0));
    }
    let bindings = BTreeMap::from([
        ("reference_info".to_string(), render_info_set(&target.info_set)),
        ("candidate".to_string(), candidate.question_text.clone()),
    ]);
    let req = OracleRequest::new(grader.clone(), bindings, DecodeParams::default())?;
    let verdict = parse_grader(&oracle.complete(&req)?)?;
    log::debug!(
        "grader verdict for {}#{}: content {} format {} ({})",
        target.trajectory_id,
        target.turn_index,
        verdict.content_score,
        verdict.format_score,
        verdict.rationale
    );
    Ok((verdict.content_score, verdict.format_score))
}

/// Format term. Continuing: full credit for exactly one question, half for
/// two, nothing otherwise, and nothing at all when the stop decision was
/// wrong. Stopping: full credit only for the bare sentinel on a correct stop.
pub fn score_omega(candidate: &CandidateAction, r_s: f64, format_level: f64) -> f64 {
    match candidate.assessment {
        Assessment::Continue => {
            if r_s == 1.0 && format_level == 1.0 {
                1.0
            } else if r_s == 1.0 && format_level == 0.5 {
                0.5
            } else {
                0.0
            }
        }
        Assessment::Stop => {
            if r_s == 1.0 && candidate.raw_text.trim() == STOP_SENTINEL {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Fuses the three components. Multiplicative: r_s·(1 + beta·r_a) + omega,
/// gating all question credit on a correct stop decision. Sum: r_s +
/// beta·r_a + omega.
pub fn fuse(r_a: f64, r_s: f64, omega: f64, beta: f64, mode: FusionMode) -> Result<f64, RewardError> {
    if !(beta > 0.0) {
        return Err(RewardError::BadBeta(beta));
    }
    Ok(match mode {
        FusionMode::Multiplicative => r_s * (1.0 + beta * r_a) + omega,
        FusionMode::Sum => r_s + beta * r_a + omega,
    })
}

/// Full grading pipeline for one candidate against one target.
pub fn grade_candidate(
    candidate: &CandidateAction,
    target: &HindsightTarget,
    grader: &PromptTemplate,
    oracle: &dyn Oracle,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    if !(cfg.beta > 0.0) {
        return Err(RewardError::BadBeta(cfg.beta));
    }
    let r_s = score_macro(candidate, target);
    let (r_a, format_level) = score_micro(candidate, target, grader, oracle)?;
    let omega = score_omega(candidate, r_s, format_level);
    let total = fuse(r_a, r_s, omega, cfg.beta, cfg.mode)?;
    Ok(RewardBreakdown { r_a, r_s, omega, beta: cfg.beta, mode: cfg.mode, total })
}

/// Reward composition under an ablation, from an already-graded breakdown.
pub fn ablated_total(b: &RewardBreakdown, ablation: Ablation) -> f64 {
    match ablation {
        Ablation::Full => b.total,
        Ablation::NoRs => b.beta * b.r_a + b.omega,
        Ablation::NoRa => b.r_s + b.omega,
    }
}

/// Persisted grading record: one line per (sample, candidate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub trajectory_id: String,
    pub turn_index: usize,
    pub candidate_idx: usize,
    pub r_a: f64,
    pub r_s: f64,
    pub omega: f64,
    pub beta: f64,
    pub mode: FusionMode,
    pub total: f64,
    pub target_label: StopLabel,
    pub predicted: Assessment,
}

impl RewardRecord {
    pub fn new(
        target: &HindsightTarget,
        candidate_idx: usize,
        candidate: &CandidateAction,
        breakdown: &RewardBreakdown,
    ) -> Self {
        RewardRecord {
            trajectory_id: target.trajectory_id.clone(),
            turn_index: target.turn_index,
            candidate_idx,
            r_a: breakdown.r_a,
            r_s: breakdown.r_s,
            omega: breakdown.omega,
            beta: breakdown.beta,
            mode: breakdown.mode,
            total: breakdown.total,
            target_label: target.stop_label,
            predicted: candidate.assessment(),
        }
    }
}

/// The finite grids the reward components live on.
pub const RA_GRID: [f64; 3] = [0.0, 0.5, 1.0];
pub const RS_GRID: [f64; 2] = [0.0, 1.0];
pub const OMEGA_GRID: [f64; 3] = [0.0, 0.5, 1.0];

/// Whether a grid point is reachable under the omega rules (omega > 0
/// requires a correct stop decision).
pub fn grid_point_reachable(r_s: f64, omega: f64) -> bool {
    r_s == 1.0 || omega == 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InfoGraph;
    use crate::hindsight::InfoItem;
    use crate::oracle::{AuxTask, GraphOracle};
    use std::collections::BTreeSet;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn target_with(items: &[&str], label: StopLabel) -> HindsightTarget {
        HindsightTarget {
            trajectory_id: "t".into(),
            turn_index: 1,
            info_set: items.iter().filter_map(|s| InfoItem::new(s)).collect(),
            stop_label: label,
            removed_generic: BTreeSet::new(),
            terminal: false,
        }
    }

    fn graph() -> InfoGraph {
        InfoGraph::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            "s".into(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![("a".into(), "c".into())],
            BTreeMap::from([("d".to_string(), 0.5)]),
        )
        .unwrap()
    }

    #[test]
    fn stop_sentinel_drives_the_assessment() {
        let stop = CandidateAction::parse("  <stop />  ");
        assert_eq!(stop.assessment(), Assessment::Stop);
        assert!(stop.question_text().is_empty());

        let ask = CandidateAction::parse("ASK(a)");
        assert_eq!(ask.assessment(), Assessment::Continue);
        assert_eq!(ask.question_text(), "ASK(a)");

        let chatter = CandidateAction::parse("ok <stop /> done");
        assert_eq!(chatter.assessment(), Assessment::Continue);
    }

    #[test]
    fn macro_score_is_agreement() {
        let cont = target_with(&["a"], StopLabel::Continue);
        let stop = target_with(&[], StopLabel::Stop);
        let ask = CandidateAction::parse("ASK(a)");
        let halt = CandidateAction::parse(STOP_SENTINEL);
        assert_eq!(score_macro(&ask, &cont), 1.0);
        assert_eq!(score_macro(&halt, &cont), 0.0);
        assert_eq!(score_macro(&halt, &stop), 1.0);
        assert_eq!(score_macro(&ask, &stop), 0.0);
    }

    #[test]
    fn omega_follows_the_two_tables() {
        let ask = CandidateAction::parse("ASK(a)");
        assert_eq!(score_omega(&ask, 1.0, 1.0), 1.0);
        assert_eq!(score_omega(&ask, 1.0, 0.5), 0.5);
        assert_eq!(score_omega(&ask, 1.0, 0.0), 0.0);
        assert_eq!(score_omega(&ask, 0.0, 1.0), 0.0);

        let halt = CandidateAction::parse(STOP_SENTINEL);
        assert_eq!(score_omega(&halt, 1.0, 0.0), 1.0);
        assert_eq!(score_omega(&halt, 0.0, 0.0), 0.0);
    }

    #[test]
    fn fuse_matches_direct_arithmetic() {
        assert_eq!(fuse(1.0, 1.0, 1.0, 1.0, FusionMode::Multiplicative).unwrap(), 3.0);
        assert_eq!(fuse(1.0, 0.0, 0.0, 1.0, FusionMode::Multiplicative).unwrap(), 0.0);
        assert_eq!(fuse(0.5, 1.0, 0.5, 2.0, FusionMode::Multiplicative).unwrap(), 2.5);
        assert_eq!(fuse(1.0, 0.0, 0.0, 1.0, FusionMode::Sum).unwrap(), 1.0);
        assert!(matches!(fuse(1.0, 1.0, 1.0, 0.0, FusionMode::Multiplicative), Err(RewardError::BadBeta(_))));
        assert!(matches!(fuse(1.0, 1.0, 1.0, -2.0, FusionMode::Sum), Err(RewardError::BadBeta(_))));
    }

    #[test]
    fn grid_properties_hold_exhaustively() {
        for beta in [0.5, 1.0, 2.0] {
            for r_a in RA_GRID {
                for r_s in RS_GRID {
                    for omega in OMEGA_GRID {
                        if !grid_point_reachable(r_s, omega) {
                            continue;
                        }
                        let mult = fuse(r_a, r_s, omega, beta, FusionMode::Multiplicative).unwrap();
                        let sum = fuse(r_a, r_s, omega, beta, FusionMode::Sum).unwrap();
                        if r_s == 0.0 {
                            assert_eq!(mult, 0.0, "gate breached at r_a={r_a} beta={beta}");
                        }
                        if r_s == 1.0 {
                            assert_eq!(mult, sum, "modes must agree when the stop decision is right");
                        }
                    }
                }
            }
        }

        // Hierarchy: with beta <= 1 every correct-stop-decision candidate
        // outscores every wrong one.
        for beta in [0.5, 1.0] {
            let mut best_wrong = f64::MIN;
            let mut worst_right = f64::MAX;
            for r_a in RA_GRID {
                for omega in OMEGA_GRID {
                    if grid_point_reachable(0.0, omega) {
                        let v = fuse(r_a, 0.0, omega, beta, FusionMode::Multiplicative).unwrap();
                        best_wrong = best_wrong.max(v);
                    }
                    let v = fuse(r_a, 1.0, omega, beta, FusionMode::Multiplicative).unwrap();
                    worst_right = worst_right.min(v);
                }
            }
            assert!(worst_right > best_wrong, "beta={beta}: {worst_right} vs {best_wrong}");
        }
    }

    #[test]
    fn totals_are_monotone_in_quality_when_stop_is_right() {
        for mode in [FusionMode::Multiplicative, FusionMode::Sum] {
            for beta in [0.5, 1.0, 2.0] {
                let mut prev = f64::MIN;
                for r_a in RA_GRID {
                    let v = fuse(r_a, 1.0, 0.0, beta, mode).unwrap();
                    assert!(v >= prev);
                    prev = v;
                }
            }
        }
    }

    struct CountingOracle {
        inner: GraphOracle,
        calls: AtomicUsize,
    }

    impl Oracle for CountingOracle {
        fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.complete(req)
        }
        fn complete_aux(&self, t: AuxTask, p: &str, d: &DecodeParams) -> Result<String, OracleError> {
            self.inner.complete_aux(t, p, d)
        }
    }

    #[test]
    fn micro_levels_come_from_the_grader() {
        let oracle = GraphOracle::new(graph());
        let grader = PromptTemplate::default_grader();
        let target = target_with(&["b", "c"], StopLabel::Continue);
        let micro = |raw: &str| {
            score_micro(&CandidateAction::parse(raw), &target, &grader, &oracle).unwrap()
        };
        assert_eq!(micro("ASK(b)"), (1.0, 1.0));
        assert_eq!(micro("ASK(d)"), (0.5, 1.0));
        // a is dep-adjacent to target c.
        assert_eq!(micro("ASK(a)"), (0.5, 1.0));
        assert_eq!(micro("what is the meaning of life"), (0.0, 0.0));
    }

    #[test]
    fn micro_precondition_short_circuits_without_oracle_calls() {
        let oracle = CountingOracle { inner: GraphOracle::new(graph()), calls: AtomicUsize::new(0) };
        let grader = PromptTemplate::default_grader();

        let stop_candidate = CandidateAction::parse(STOP_SENTINEL);
        let cont_target = target_with(&["b"], StopLabel::Continue);
        assert_eq!(score_micro(&stop_candidate, &cont_target, &grader, &oracle).unwrap(), (0.0, 0.0));

        let ask = CandidateAction::parse("ASK(b)");
        let empty_target = target_with(&[], StopLabel::Stop);
        assert_eq!(score_micro(&ask, &empty_target, &grader, &oracle).unwrap(), (0.0, 0.0));

        assert_eq!(oracle.calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn full_grading_composes_all_terms() {
        let oracle = GraphOracle::new(graph());
        let grader = PromptTemplate::default_grader();
        let cfg = RewardConfig::default();

        let cont_target = target_with(&["b", "c"], StopLabel::Continue);
        let perfect = grade_candidate(&CandidateAction::parse("ASK(b)"), &cont_target, &grader, &oracle, &cfg).unwrap();
        assert_eq!((perfect.r_a, perfect.r_s, perfect.omega, perfect.total), (1.0, 1.0, 1.0, 3.0));

        let stop_target = target_with(&[], StopLabel::Stop);
        let stop = grade_candidate(&CandidateAction::parse(STOP_SENTINEL), &stop_target, &grader, &oracle, &cfg).unwrap();
        assert_eq!((stop.r_a, stop.r_s, stop.omega, stop.total), (0.0, 1.0, 1.0, 2.0));

        let premature = grade_candidate(&CandidateAction::parse(STOP_SENTINEL), &cont_target, &grader, &oracle, &cfg).unwrap();
        assert_eq!(premature.total, 0.0);
    }

    #[test]
    fn ablations_recompose_the_breakdown() {
        let b = RewardBreakdown { r_a: 0.5, r_s: 1.0, omega: 1.0, beta: 2.0, mode: FusionMode::Multiplicative, total: 3.0 };
        assert_eq!(ablated_total(&b, Ablation::Full), 3.0);
        assert_eq!(ablated_total(&b, Ablation::NoRs), 2.0);
        assert_eq!(ablated_total(&b, Ablation::NoRa), 2.0);
    }

    #[test]
    fn reward_record_keeps_the_pinned_field_names() {
        let target = target_with(&["b"], StopLabel::Continue);
        let candidate = CandidateAction::parse("ASK(b)");
        let b = RewardBreakdown { r_a: 1.0, r_s: 1.0, omega: 1.0, beta: 1.0, mode: FusionMode::Multiplicative, total: 3.0 };
        let json = serde_json::to_value(RewardRecord::new(&target, 2, &candidate, &b)).unwrap();
        for key in ["trajectory_id", "turn_index", "candidate_idx", "r_a", "r_s", "omega", "beta", "mode", "total"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["mode"], "multiplicative");
        assert_eq!(json["candidate_idx"], 2);
        assert_eq!(json["target_label"], "CONTINUE");
        assert_eq!(json["predicted"], "CONTINUE");
    }
}

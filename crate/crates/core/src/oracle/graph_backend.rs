//! Deterministic oracle backed by an information graph. Answers the three
//! prompt types by rule instead of model inference, so pipeline outputs can
//! be compared against brute-force ground truth.

use std::collections::BTreeSet;

use crate::dialogue::{Speaker, TurnSample, Utterance};
use crate::graph::{covered_from_context, deterministic_extract, deterministic_grade, InfoGraph};
use crate::hindsight::{parse_bullet_list, InfoItem};
use crate::oracle::{
    parse_rendered_conversation, AuxTask, DecodeParams, Oracle, OracleError, OracleRequest,
    PromptType, STOP_SENTINEL,
};

/// Rollout behavior markers understood inside a ROLLOUT template body. A
/// body without a marker behaves like `ask-required`. Distinct markers make
/// distinct rollout prompts score differently during calibration.
const POLICY_STOP: &str = "[policy: stop]";
const POLICY_ASK_RANDOM: &str = "[policy: ask-random]";
const POLICY_ASK_TWICE: &str = "[policy: ask-twice]";

pub struct GraphOracle {
    graph: InfoGraph,
}

impl GraphOracle {
    pub fn new(graph: InfoGraph) -> Self {
        GraphOracle { graph }
    }

    pub fn graph(&self) -> &InfoGraph {
        &self.graph
    }

    fn conversation(&self, req: &OracleRequest, name: &'static str) -> Result<Vec<Utterance>, OracleError> {
        let raw = req.binding(name).ok_or_else(|| bad_request(format!("missing {name} binding")))?;
        let parsed = parse_rendered_conversation(raw)
            .ok_or_else(|| bad_request(format!("{name} binding is not a rendered conversation")))?;
        Ok(parsed
            .into_iter()
            .map(|(speaker, text)| match speaker {
                Speaker::User => Utterance::user(text),
                Speaker::Assistant => Utterance::assistant(text),
            })
            .collect())
    }

    fn answer_extract(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let sample = TurnSample {
            trajectory_id: String::new(),
            turn_index: 0,
            context: self.conversation(req, "context")?,
            future: self.conversation(req, "future")?,
            expert_action: None,
        };
        let info = deterministic_extract(&sample, &self.graph).map_err(|e| bad_request(e.to_string()))?;
        if info.is_empty() {
            return Ok("- (none)".to_string());
        }
        Ok(info.iter().map(|i| format!("- {}", i.text())).collect::<Vec<_>>().join("\n"))
    }

    fn answer_grade(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let reference = req.binding("reference_info").ok_or_else(|| bad_request("missing reference_info binding".into()))?;
        let candidate = req.binding("candidate").ok_or_else(|| bad_request("missing candidate binding".into()))?;
        let items = parse_bullet_list(reference)
            .ok_or_else(|| bad_request("reference_info binding is not a bullet list".into()))?;
        let info: BTreeSet<InfoItem> = items.iter().filter_map(|s| InfoItem::new(s)).collect();
        let verdict = deterministic_grade(candidate, &info, &self.graph);
        Ok(format!(
            "<think>{}</think>\n<format_score>{:.1}</format_score>\n<content_score>{:.1}</content_score>",
            verdict.rationale, verdict.format_score, verdict.content_score
        ))
    }

    fn answer_rollout(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let context = self.conversation(req, "context")?;
        let sample = TurnSample {
            trajectory_id: String::new(),
            turn_index: 0,
            context,
            future: Vec::new(),
            expert_action: None,
        };
        let covered = covered_from_context(&sample, &self.graph).map_err(|e| bad_request(e.to_string()))?;
        let seed = req.decode.seed.unwrap_or(0) as usize;
        let body = req.template.body();

        if body.contains(POLICY_STOP) {
            return Ok(STOP_SENTINEL.to_string());
        }
        if body.contains(POLICY_ASK_RANDOM) {
            let nodes = self.graph.nodes();
            if nodes.is_empty() {
                return Ok(STOP_SENTINEL.to_string());
            }
            return Ok(format!("ASK({})", nodes[seed % nodes.len()]));
        }
        let uncovered: Vec<&String> = self.graph.required().iter().filter(|v| !covered.contains(*v)).collect();
        if uncovered.is_empty() {
            return Ok(STOP_SENTINEL.to_string());
        }
        if body.contains(POLICY_ASK_TWICE) && uncovered.len() >= 2 {
            return Ok(format!("ASK({}) ASK({})", uncovered[0], uncovered[1]));
        }
        Ok(format!("ASK({})", uncovered[seed % uncovered.len()]))
    }
}

fn bad_request(detail: String) -> OracleError {
    OracleError::Permanent { status: 400, detail }
}

impl Oracle for GraphOracle {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        match req.template.prompt_type() {
            PromptType::Extract => self.answer_extract(req),
            PromptType::Grader => self.answer_grade(req),
            PromptType::Rollout => self.answer_rollout(req),
        }
    }

    fn complete_aux(&self, task: AuxTask, prompt: &str, decode: &DecodeParams) -> Result<String, OracleError> {
        match task {
            AuxTask::RejectedAction => Ok("ASK(unrelated topic)".to_string()),
            AuxTask::Paraphrase => {
                const SUFFIXES: [&str; 4] = [
                    "Be precise.",
                    "Answer tersely.",
                    "Double-check before answering.",
                    "Keep the output format exact.",
                ];
                let pick = SUFFIXES[decode.seed.unwrap_or(0) as usize % SUFFIXES.len()];
                Ok(format!("{} {pick}", prompt.trim_end()))
            }
        }
    }
}

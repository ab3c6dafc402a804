//! Dataset exporters: turn segmented trajectories and their hindsight
//! targets into SFT, DPO, and RL training records for external trainers.

use serde::{Deserialize, Serialize};

use crate::dialogue::{TurnSample, Utterance};
use crate::hindsight::{HindsightTarget, StopLabel};
use crate::oracle::{render_conversation, AuxTask, DecodeParams, Oracle, STOP_SENTINEL};
use crate::reward::Ablation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Sft,
    Dpo,
    Rl,
}

impl ExportFormat {
    /// One-line schema description, written as a sibling file next to each
    /// export so downstream trainers can sanity-check field names.
    pub fn schema_line(self) -> &'static str {
        match self {
            ExportFormat::Sft => {
                r#"{"input": [{"speaker": "user"|"assistant", "text": str}, ...], "response": str}"#
            }
            ExportFormat::Dpo => {
                r#"{"input": [{"speaker": "user"|"assistant", "text": str}, ...], "chosen": str, "rejected": str}"#
            }
            ExportFormat::Rl => {
                r#"{"input": [{"speaker": "user"|"assistant", "text": str}, ...], "info_set": [str, ...], "stop_label": "CONTINUE"|"STOP"}"#
            }
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExportError {
    #[error("no target for sample {trajectory_id}#{turn_index}")]
    MissingTarget { trajectory_id: String, turn_index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub input: Vec<Utterance>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub input: Vec<Utterance>,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRecord {
    pub input: Vec<Utterance>,
    pub info_set: Vec<String>,
    pub stop_label: StopLabel,
}

/// One record per sample: mid-trajectory samples pair the context with the
/// expert's next utterance, terminal samples pair the full context with the
/// stop sentinel. Mid samples missing their expert action are skipped with
/// a warning.
pub fn export_sft(samples: &[TurnSample]) -> Vec<SftRecord> {
    let mut records = Vec::with_capacity(samples.len());
    for sample in samples {
        let response = if sample.is_terminal() {
            STOP_SENTINEL.to_string()
        } else {
            match &sample.expert_action {
                Some(action) => action.text.clone(),
                None => {
                    log::warn!(
                        "sft export: sample {}#{} has no expert action, skipping",
                        sample.trajectory_id,
                        sample.turn_index
                    );
                    continue;
                }
            }
        };
        records.push(SftRecord { input: sample.context.clone(), response });
    }
    records
}

/// One record per mid-trajectory sample: chosen is the expert's utterance
/// verbatim, rejected is an oracle-generated utterance irrelevant to the
/// conversation. Each sample draws a deterministic per-index decode seed so
/// reruns are byte-identical and skips do not shift neighbors.
pub fn export_dpo(samples: &[TurnSample], oracle: &dyn Oracle, seed: u64) -> Vec<DpoRecord> {
    let mut records = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        if sample.is_terminal() {
            continue;
        }
        let chosen = match &sample.expert_action {
            Some(action) => action.text.clone(),
            None => {
                log::warn!(
                    "dpo export: sample {}#{} has no expert action, skipping",
                    sample.trajectory_id,
                    sample.turn_index
                );
                continue;
            }
        };
        let decode = DecodeParams { seed: Some(seed.wrapping_add(i as u64)), ..DecodeParams::default() };
        let rejected = match oracle.complete_aux(AuxTask::RejectedAction, &render_conversation(&sample.context), &decode)
        {
            Ok(text) => text,
            Err(e) => {
                log::warn!(
                    "dpo export: rejected generation failed for {}#{}: {e}, skipping",
                    sample.trajectory_id,
                    sample.turn_index
                );
                continue;
            }
        };
        records.push(DpoRecord { input: sample.context.clone(), chosen, rejected });
    }
    records
}

/// One record per sample carrying its reward reference (remaining info set
/// and stop label). The stop-free ablation drops STOP-labeled samples and
/// CONTINUE samples whose info set filtered down to empty, since neither
/// leaves a gradable question reward.
pub fn export_rl(
    samples: &[TurnSample],
    targets: &[HindsightTarget],
    ablation: Ablation,
) -> Result<Vec<RlRecord>, ExportError> {
    let by_key: std::collections::BTreeMap<(&str, usize), &HindsightTarget> = targets
        .iter()
        .map(|t| ((t.trajectory_id.as_str(), t.turn_index), t))
        .collect();
    let mut records = Vec::with_capacity(samples.len());
    for sample in samples {
        let target = by_key
            .get(&(sample.trajectory_id.as_str(), sample.turn_index))
            .ok_or_else(|| ExportError::MissingTarget {
                trajectory_id: sample.trajectory_id.clone(),
                turn_index: sample.turn_index,
            })?;
        if ablation == Ablation::NoRs
            && (target.stop_label == StopLabel::Stop || target.info_set.is_empty())
        {
            continue;
        }
        records.push(RlRecord {
            input: sample.context.clone(),
            info_set: target.info_set.iter().map(|i| i.text().to_string()).collect(),
            stop_label: target.stop_label,
        });
    }
    Ok(records)
}

//! Turns offline expert conversation logs into turn-level objectives,
//! graded rewards, calibrated prompts, evaluation metrics, and
//! training-ready datasets, with a synthetic graph environment to verify
//! the whole pipeline end to end.

pub mod autoprompt;
pub mod dialogue;
pub mod export;
pub mod graph;
pub mod hindsight;
pub mod jsonl;
pub mod metrics;
pub mod oracle;
pub mod reward;
pub mod trainer;

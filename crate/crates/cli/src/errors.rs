//! Maps library errors onto the two failure exit codes: 1 for anything the
//! operator can fix locally (bad flags, malformed inputs, broken invariants)
//! and 2 for failures of the oracle or its transport.

use l2a_core::autoprompt::AutopromptError;
use l2a_core::hindsight::HindsightError;
use l2a_core::oracle::OracleError;
use l2a_core::reward::RewardError;
use l2a_core::trainer::TrainError;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Oracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Oracle(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Oracle(m) => m,
        }
    }
}

/// Config and template problems are operator mistakes; everything else means
/// the oracle was reached (or reachable) and failed.
pub fn oracle_err(e: OracleError) -> CliError {
    match e {
        OracleError::Config(_) | OracleError::Template(_) | OracleError::EmptyBatch => {
            CliError::Validation(e.to_string())
        }
        _ => CliError::Oracle(e.to_string()),
    }
}

pub fn hindsight_err(e: HindsightError) -> CliError {
    match e {
        HindsightError::Oracle(inner) => oracle_err(inner),
        // The oracle answered, but with output the pipeline cannot use.
        HindsightError::ExtractionParse(_) => CliError::Oracle(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

pub fn reward_err(e: RewardError) -> CliError {
    match e {
        RewardError::Oracle(inner) => oracle_err(inner),
        RewardError::BadBeta(_) => CliError::Validation(e.to_string()),
    }
}

pub fn autoprompt_err(e: AutopromptError) -> CliError {
    match e {
        AutopromptError::Oracle(inner) => oracle_err(inner),
        AutopromptError::Hindsight(inner) => hindsight_err(inner),
        AutopromptError::ScorerInvalidated { .. } => CliError::Oracle(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

pub fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Reward(inner) => reward_err(inner),
        _ => CliError::Validation(e.to_string()),
    }
}

//! Uniform oracle abstraction for extraction, grading, and rollout sampling,
//! with two interchangeable backends: a remote chat-completions endpoint and
//! a deterministic graph-grounded backend for tests and synthetic runs.

mod graph_backend;
mod remote;
mod template;

pub use graph_backend::GraphOracle;
pub use remote::{RemoteConfig, RemoteOracle, RetryPolicy, ENV_KEY, ENV_MODEL, ENV_URL};
pub use template::{
    parse_rendered_conversation, render_conversation, PromptTemplate, PromptType, TemplateError,
    KNOWN_PLACEHOLDERS, STOP_SENTINEL,
};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::TurnSample;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    /// Transport kept failing with retryable conditions (429, 5xx, timeouts)
    /// until the attempt budget ran out.
    #[error("retryable oracle failures exhausted after {attempts} attempts; last: {last}")]
    RetryableExhausted { attempts: u32, last: String },
    /// The backend rejected the request outright (HTTP 4xx other than 429,
    /// or a request the deterministic backend cannot interpret). Never retried.
    #[error("permanent oracle failure (status {status}): {detail}")]
    Permanent { status: u16, detail: String },
    /// The call succeeded at the transport level but the payload is unusable.
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("grader output is missing the <{0}> tag")]
    MissingTag(&'static str),
    #[error("grader score is not on the {{0.0, 0.5, 1.0}} grid: {0:?}")]
    InvalidScore(String),
    #[error("all {0} requests of a rollout batch failed")]
    BatchFailed(usize),
    #[error("rollout batch size must be at least 1")]
    EmptyBatch,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("oracle configuration: {0}")]
    Config(String),
}

/// Decode controls forwarded to the backend. The seed is best-effort on
/// remote endpoints and authoritative on the deterministic backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { temperature: 0.0, max_tokens: 1024, seed: None }
    }
}

#[derive(Debug, Clone)]
pub struct OracleRequest {
    pub template: PromptTemplate,
    pub bindings: BTreeMap<String, String>,
    pub decode: DecodeParams,
}

impl OracleRequest {
    pub fn new(
        template: PromptTemplate,
        bindings: BTreeMap<String, String>,
        decode: DecodeParams,
    ) -> Result<Self, OracleError> {
        for name in template.prompt_type().required_placeholders() {
            if !bindings.contains_key(*name) {
                return Err(TemplateError::MissingBinding(name).into());
            }
        }
        if !decode.temperature.is_finite() || decode.temperature < 0.0 {
            return Err(OracleError::Config(format!("temperature must be finite and >= 0, got {}", decode.temperature)));
        }
        if decode.max_tokens == 0 {
            return Err(OracleError::Config("max_tokens must be positive".into()));
        }
        Ok(OracleRequest { template, bindings, decode })
    }

    pub fn binding(&self, name: &str) -> Option<&str> {
        self.bindings.get(name).map(String::as_str)
    }

    pub fn rendered(&self) -> Result<String, OracleError> {
        Ok(self.template.render(&self.bindings)?)
    }
}

/// Side traffic that is not one of the three templated prompt types:
/// prompt paraphrasing for calibration and rejected-action generation for
/// preference exports. Backends must answer these deterministically or via
/// a plain completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxTask {
    Paraphrase,
    RejectedAction,
}

pub trait Oracle: Send + Sync {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError>;

    /// Free-form completion for auxiliary traffic (see `AuxTask`).
    fn complete_aux(&self, task: AuxTask, prompt: &str, decode: &DecodeParams) -> Result<String, OracleError>;
}

/// Three-level verdict emitted by a grader prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraderVerdict {
    pub format_score: f64,
    pub content_score: f64,
    pub rationale: String,
}

/// Snaps a value onto {0.0, 0.5, 1.0} when within 1e-9 of a grid point.
pub fn snap_to_grid(v: f64) -> Option<f64> {
    [0.0, 0.5, 1.0].into_iter().find(|g| (v - g).abs() <= 1e-9)
}

fn tag_regex(name: &str) -> Regex {
    Regex::new(&format!("(?s)<{name}>(.*?)</{name}>")).expect("static tag pattern compiles")
}

/// Parses a grader completion into a verdict. Scores are accepted only when
/// they land on the three-level grid within 1e-9; "1", "1.0" and "1.00" all
/// parse to 1.0.
pub fn parse_grader(raw: &str) -> Result<GraderVerdict, OracleError> {
    static THINK: OnceLock<Regex> = OnceLock::new();
    static FORMAT: OnceLock<Regex> = OnceLock::new();
    static CONTENT: OnceLock<Regex> = OnceLock::new();
    let think = THINK.get_or_init(|| tag_regex("think"));
    let format = FORMAT.get_or_init(|| tag_regex("format_score"));
    let content = CONTENT.get_or_init(|| tag_regex("content_score"));

    let rationale = think
        .captures(raw)
        .ok_or(OracleError::MissingTag("think"))?
        .get(1)
        .map(|m| m.as_str().trim().to_string())
        .unwrap_or_default();

    let score_of = |re: &Regex, tag: &'static str| -> Result<f64, OracleError> {
        let text = re
            .captures(raw)
            .ok_or(OracleError::MissingTag(tag))?
            .get(1)
            .map(|m| m.as_str().trim().to_string())
            .unwrap_or_default();
        let value: f64 = text.parse().map_err(|_| OracleError::InvalidScore(text.clone()))?;
        snap_to_grid(value).ok_or(OracleError::InvalidScore(text))
    };

    Ok(GraderVerdict {
        format_score: score_of(format, "format_score")?,
        content_score: score_of(content, "content_score")?,
        rationale,
    })
}

/// Completes a batch with at most `max_in_flight` concurrent calls. Results
/// come back in request order regardless of completion order.
pub fn complete_batch(
    oracle: &dyn Oracle,
    requests: &[OracleRequest],
    max_in_flight: usize,
) -> Vec<Result<String, OracleError>> {
    let workers = max_in_flight.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| oracle.complete(r)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, OracleError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let result = oracle.complete(&requests[i]);
                slots.lock().expect("batch slot lock")[i] = Some(result);
            });
        }
    });

    slots
        .into_inner()
        .expect("batch slot lock")
        .into_iter()
        .map(|slot| slot.expect("every batch slot filled"))
        .collect()
}

/// Draws `n` candidate actions for a sample's context. Request `i` carries
/// seed `base + i`, so a fixed base seed reproduces the whole batch on the
/// deterministic backend. Per-candidate failures are returned in place; a
/// batch with no successes at all is an error.
pub fn sample_rollouts(
    oracle: &dyn Oracle,
    template: &PromptTemplate,
    sample: &TurnSample,
    n: usize,
    decode: &DecodeParams,
    max_in_flight: usize,
) -> Result<Vec<Result<String, OracleError>>, OracleError> {
    template.expect_type(PromptType::Rollout)?;
    if n == 0 {
        return Err(OracleError::EmptyBatch);
    }
    let base_seed = decode.seed.unwrap_or(0);
    let context = render_conversation(&sample.context);
    let requests: Vec<OracleRequest> = (0..n)
        .map(|i| {
            let mut bindings = BTreeMap::new();
            bindings.insert("context".to_string(), context.clone());
            let mut d = decode.clone();
            d.seed = Some(base_seed + i as u64);
            OracleRequest::new(template.clone(), bindings, d)
        })
        .collect::<Result<_, _>>()?;

    let results = complete_batch(oracle, &requests, max_in_flight);
    if results.iter().all(|r| r.is_err()) {
        return Err(OracleError::BatchFailed(n));
    }
    Ok(results)
}

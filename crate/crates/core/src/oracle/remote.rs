//! Remote chat-completions backend. One POST per completion, exponential
//! backoff on retryable conditions (429, 5xx, transport faults), permanent
//! errors surfaced immediately.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::{AuxTask, DecodeParams, Oracle, OracleError, OracleRequest};

pub const ENV_URL: &str = "L2A_ORACLE_URL";
pub const ENV_MODEL: &str = "L2A_ORACLE_MODEL";
pub const ENV_KEY: &str = "L2A_ORACLE_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub jitter_frac: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay_ms: 500, multiplier: 2.0, jitter_frac: 0.2 }
    }
}

impl RetryPolicy {
    /// Backoff before retrying after the given 1-based failed attempt,
    /// jittered by ±jitter_frac.
    fn delay(&self, failed_attempt: u32, rng: &mut impl Rng) -> Duration {
        let base = self.base_delay_ms as f64 * self.multiplier.powi(failed_attempt.saturating_sub(1) as i32);
        let jitter = 1.0 + rng.gen_range(-self.jitter_frac..=self.jitter_frac);
        Duration::from_millis((base * jitter).max(0.0) as u64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_request_timeout_ms() -> u64 {
    30_000
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            request_timeout_ms: default_request_timeout_ms(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_env() -> Result<Self, OracleError> {
        let base_url = std::env::var(ENV_URL)
            .map_err(|_| OracleError::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| OracleError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = RemoteConfig::new(base_url, model);
        cfg.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

enum AttemptFailure {
    Retryable(String),
    Fatal(OracleError),
}

pub struct RemoteOracle {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    retries: AtomicU64,
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| OracleError::Config(e.to_string()))?;
        Ok(RemoteOracle { config, client, retries: AtomicU64::new(0) })
    }

    pub fn from_env() -> Result<Self, OracleError> {
        RemoteOracle::new(RemoteConfig::from_env()?)
    }

    /// Retried attempts recorded over the oracle's lifetime (first attempts
    /// are free; each backoff-and-retry adds one).
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, prompt: &str, decode: &DecodeParams) -> Result<String, AttemptFailure> {
        let body = WireRequest {
            model: &self.config.model,
            messages: [WireMessage { role: "user", content: prompt }],
            temperature: decode.temperature,
            max_tokens: decode.max_tokens,
            seed: decode.seed,
        };
        let mut request = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }

        let response = request.send().map_err(|e| AttemptFailure::Retryable(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptFailure::Retryable(format!("HTTP {}", status.as_u16())));
        }
        if status.is_client_error() {
            let detail = response.text().unwrap_or_default().chars().take(200).collect();
            return Err(AttemptFailure::Fatal(OracleError::Permanent { status: status.as_u16(), detail }));
        }
        if !status.is_success() {
            return Err(AttemptFailure::Retryable(format!("HTTP {}", status.as_u16())));
        }

        let text = response.text().map_err(|e| AttemptFailure::Retryable(e.to_string()))?;
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            AttemptFailure::Fatal(OracleError::MalformedResponse(format!("{e}: {}", snippet(&text))))
        })?;
        match parsed.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(AttemptFailure::Fatal(OracleError::MalformedResponse(format!(
                "empty choices array: {}",
                snippet(&text)
            )))),
        }
    }

    fn complete_prompt(&self, prompt: &str, decode: &DecodeParams) -> Result<String, OracleError> {
        let policy = &self.config.retry;
        let mut rng = rand::thread_rng();
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            match self.attempt(prompt, decode) {
                Ok(text) => return Ok(text),
                Err(AttemptFailure::Fatal(e)) => return Err(e),
                Err(AttemptFailure::Retryable(reason)) => {
                    log::debug!("oracle attempt {attempt} failed: {reason}");
                    last = reason;
                    if attempt < policy.max_attempts {
                        self.retries.fetch_add(1, Ordering::Relaxed);
                        std::thread::sleep(policy.delay(attempt, &mut rng));
                    }
                }
            }
        }
        Err(OracleError::RetryableExhausted { attempts: policy.max_attempts, last })
    }
}

fn snippet(text: &str) -> String {
    let mut s: String = text.chars().take(120).collect();
    if text.chars().count() > 120 {
        s.push('…');
    }
    s
}

impl Oracle for RemoteOracle {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let prompt = req.rendered()?;
        self.complete_prompt(&prompt, &req.decode)
    }

    fn complete_aux(&self, task: AuxTask, prompt: &str, decode: &DecodeParams) -> Result<String, OracleError> {
        let framed = match task {
            AuxTask::Paraphrase => format!(
                "Rephrase this instruction to be more explicit. Keep every {{placeholder}} token unchanged and present exactly once.\n\n{prompt}"
            ),
            AuxTask::RejectedAction => format!(
                "Write one deliberately unhelpful next assistant question for this conversation, off-topic for the goal.\n\n{prompt}"
            ),
        };
        self.complete_prompt(&framed, decode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backoff_grows_exponentially_within_jitter() {
        let policy = RetryPolicy { max_attempts: 5, base_delay_ms: 500, multiplier: 2.0, jitter_frac: 0.2 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for (attempt, nominal) in [(1u32, 500.0f64), (2, 1000.0), (3, 2000.0)] {
            for _ in 0..50 {
                let d = policy.delay(attempt, &mut rng).as_millis() as f64;
                assert!(d >= nominal * 0.8 - 1.0 && d <= nominal * 1.2 + 1.0, "attempt {attempt}: {d}ms");
            }
        }
    }

    #[test]
    fn endpoint_joins_base_url_without_double_slash() {
        let oracle = RemoteOracle::new(RemoteConfig::new("http://h:1/v1/", "m")).unwrap();
        assert_eq!(oracle.endpoint(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn env_config_requires_url_and_model() {
        std::env::remove_var(ENV_URL);
        std::env::remove_var(ENV_MODEL);
        assert!(matches!(RemoteConfig::from_env(), Err(OracleError::Config(_))));
    }

    fn wire_body(seed: Option<u64>) -> String {
        let body = WireRequest {
            model: "m",
            messages: [WireMessage { role: "user", content: "p" }],
            temperature: 0.0,
            max_tokens: 8,
            seed,
        };
        serde_json::to_string(&body).unwrap()
    }

    #[test]
    fn wire_body_omits_missing_seed() {
        assert!(wire_body(Some(7)).contains("\"seed\":7"));
        assert!(!wire_body(None).contains("seed"));
    }
}

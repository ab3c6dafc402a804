//! Configuration binding: command-line flags override the JSON config file,
//! which overrides environment variables, which override built-in defaults.
//! Every command writes the fully resolved result next to its primary output
//! so a run can be replayed from its artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use l2a_core::oracle::{RemoteConfig, ENV_KEY, ENV_MODEL, ENV_URL};
use l2a_core::reward::{FusionMode, RewardConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Optional values read from the `--config` JSON file. Unknown keys are
/// rejected so a typo cannot silently fall back to a default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub fusion: Option<FusionMode>,
    pub threshold: Option<f64>,
    pub drop_empty_continue: Option<bool>,
    pub group_size: Option<usize>,
    pub k: Option<usize>,
    pub n_per_iter: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub oracle_url: Option<String>,
    pub oracle_model: Option<String>,
    pub oracle_key: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }
}

/// The same knobs as they arrive from command-line flags.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub fusion: Option<FusionMode>,
    pub threshold: Option<f64>,
    pub drop_empty_continue: Option<bool>,
    pub group_size: Option<usize>,
    pub k: Option<usize>,
    pub n_per_iter: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub oracle_url: Option<String>,
    pub oracle_model: Option<String>,
    pub oracle_key: Option<String>,
}

/// Fully resolved pipeline configuration. Construction validates the
/// invariants, so holding a `Resolved` implies the knobs are usable.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub beta: f64,
    pub fusion: FusionMode,
    pub threshold: f64,
    pub drop_empty_continue: bool,
    pub group_size: usize,
    pub k: usize,
    pub n_per_iter: usize,
    pub max_in_flight: usize,
    pub oracle_url: Option<String>,
    pub oracle_model: Option<String>,
    pub oracle_key: Option<String>,
}

fn env_nonempty(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

pub fn resolve(flags: &FlagOverrides, file: &FileConfig) -> Result<Resolved, CliError> {
    let pick = |flag: Option<String>, file: Option<String>, env: Option<String>| flag.or(file).or(env);
    let r = Resolved {
        seed: flags.seed.or(file.seed).unwrap_or(0),
        beta: flags.beta.or(file.beta).unwrap_or(1.0),
        fusion: flags.fusion.or(file.fusion).unwrap_or(FusionMode::Multiplicative),
        threshold: flags.threshold.or(file.threshold).unwrap_or(0.8),
        drop_empty_continue: flags
            .drop_empty_continue
            .or(file.drop_empty_continue)
            .unwrap_or(false),
        group_size: flags.group_size.or(file.group_size).unwrap_or(5),
        k: flags.k.or(file.k).unwrap_or(30),
        n_per_iter: flags.n_per_iter.or(file.n_per_iter).unwrap_or(4),
        max_in_flight: flags.max_in_flight.or(file.max_in_flight).unwrap_or(8),
        oracle_url: pick(flags.oracle_url.clone(), file.oracle_url.clone(), env_nonempty(ENV_URL)),
        oracle_model: pick(
            flags.oracle_model.clone(),
            file.oracle_model.clone(),
            env_nonempty(ENV_MODEL),
        ),
        oracle_key: pick(flags.oracle_key.clone(), file.oracle_key.clone(), env_nonempty(ENV_KEY)),
    };
    if !(r.beta.is_finite() && r.beta > 0.0) {
        return Err(CliError::Validation(format!("beta must be positive, got {}", r.beta)));
    }
    if !(r.threshold.is_finite() && r.threshold > 0.0 && r.threshold <= 1.0) {
        return Err(CliError::Validation(format!(
            "threshold must lie in (0, 1], got {}",
            r.threshold
        )));
    }
    if r.group_size < 2 {
        return Err(CliError::Validation(format!(
            "group size must be at least 2, got {}",
            r.group_size
        )));
    }
    if r.k == 0 {
        return Err(CliError::Validation("k must be at least 1".into()));
    }
    if r.n_per_iter == 0 {
        return Err(CliError::Validation("n-per-iter must be at least 1".into()));
    }
    if r.max_in_flight == 0 {
        return Err(CliError::Validation("max-in-flight must be at least 1".into()));
    }
    Ok(r)
}

impl Resolved {
    pub fn reward(&self) -> RewardConfig {
        RewardConfig { beta: self.beta, mode: self.fusion }
    }

    pub fn remote(&self) -> Result<RemoteConfig, CliError> {
        let url = self.oracle_url.clone().ok_or_else(|| {
            CliError::Validation(format!("remote backend needs --oracle-url (or {ENV_URL})"))
        })?;
        let model = self.oracle_model.clone().ok_or_else(|| {
            CliError::Validation(format!("remote backend needs --oracle-model (or {ENV_MODEL})"))
        })?;
        let mut cfg = RemoteConfig::new(url, model);
        cfg.api_key = self.oracle_key.clone();
        Ok(cfg)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a per-stage seed from the global one, so stages draw from
/// disjoint streams and a pipeline is replayable stage by stage.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    splitmix64(global ^ fnv1a(stage))
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    command: &'a str,
    stage_seed: u64,
    config: Resolved,
}

/// Writes `<out>.config.json` beside the primary output: the command name,
/// its stage seed, and the resolved config with the API key masked.
pub fn write_echo(out: &Path, command: &str, resolved: &Resolved) -> Result<PathBuf, CliError> {
    let mut masked = resolved.clone();
    if masked.oracle_key.is_some() {
        masked.oracle_key = Some("***".into());
    }
    let echo = ConfigEcho { command, stage_seed: stage_seed(resolved.seed, command), config: masked };
    let mut path = out.as_os_str().to_owned();
    path.push(".config.json");
    let path = PathBuf::from(path);
    let body = serde_json::to_string_pretty(&echo)
        .map_err(|e| CliError::Validation(format!("cannot encode config echo: {e}")))?;
    fs::write(&path, body + "\n")
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

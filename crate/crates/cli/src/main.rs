//! `l2a`: operator front end for the hindsight-reward pipeline. Commands map
//! one-to-one onto pipeline stages and talk to each other through JSONL
//! files, so any stage can be rerun or swapped in isolation.
//!
//! Exit codes: 0 success, 1 validation error (flags, config, inputs),
//! 2 oracle or transport failure.

mod config;
mod errors;
mod ops;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use l2a_core::reward::FusionMode;

use config::{resolve, FileConfig, FlagOverrides};
pub use errors::CliError;
use ops::{AblationArg, BackendArg, EvalModeArg, FormatArg, MutatorArg, PromptKindArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    Multiplicative,
    Sum,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> FusionMode {
        match f {
            FusionArg::Multiplicative => FusionMode::Multiplicative,
            FusionArg::Sum => FusionMode::Sum,
        }
    }
}

#[derive(Parser)]
#[command(name = "l2a", version, about = "Turn expert conversation logs into graded training data")]
struct Cli {
    /// JSON config file; flags override it, it overrides L2A_* environment
    /// variables.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Weight of answer quality relative to the stop signal (must be > 0).
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// How the stop and answer rewards combine.
    #[arg(long, global = true, value_enum)]
    fusion: Option<FusionArg>,
    /// Document-frequency cutoff for the generic-item blacklist, in (0, 1].
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Drop mid-conversation samples whose hindsight info set came out empty.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    drop_empty_continue: Option<bool>,
    /// Rollout group size for advantage normalization (at least 2).
    #[arg(long, global = true)]
    group_size: Option<usize>,
    /// Prompt-calibration iteration budget.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Prompt candidates proposed per calibration iteration.
    #[arg(long, global = true)]
    n_per_iter: Option<usize>,
    /// Concurrent oracle requests per batch.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Chat-completions endpoint for the remote backend.
    #[arg(long, global = true, value_name = "URL")]
    oracle_url: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long, global = true, value_name = "NAME")]
    oracle_model: Option<String>,
    /// Bearer token for the remote backend (redacted in config echoes).
    #[arg(long, global = true, value_name = "KEY")]
    oracle_key: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw conversation logs into the canonical trajectory corpus.
    Ingest {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Where to write per-line rejection reports (JSONL).
        #[arg(long, value_name = "FILE")]
        rejects: Option<PathBuf>,
    },
    /// Explode trajectories into per-turn (context, future) samples.
    Segment {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Label each sample with its hindsight info set and stop decision.
    Extract {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "remote")]
        backend: BackendArg,
        /// Information graph backing the deterministic backend.
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        /// Extraction prompt body; defaults to the built-in template.
        #[arg(long, value_name = "FILE")]
        prompt: Option<PathBuf>,
    },
    /// Blacklist corpus-saturated info items and prune the targets.
    FilterGeneric {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Where to write the blacklisted items (JSON array).
        #[arg(long, value_name = "FILE")]
        blacklist_out: Option<PathBuf>,
    },
    /// Grade candidate actions against their hindsight targets.
    Reward {
        #[arg(long, value_name = "FILE")]
        targets: PathBuf,
        #[arg(long, value_name = "FILE")]
        candidates: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "remote")]
        backend: BackendArg,
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        /// Grader prompt body; defaults to the built-in template.
        #[arg(long, value_name = "FILE")]
        prompt: Option<PathBuf>,
    },
    /// Compute evaluation metrics over graded reward records.
    Metrics {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Where to write the report as JSON (also printed as a table).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Average WA over every reference-continue sample instead of only
        /// those where the policy also continued.
        #[arg(long)]
        wa_over_all_continue: bool,
    },
    /// Hill-climb a prompt template against anchor fixtures.
    Autoprompt {
        #[arg(long = "type", value_enum)]
        kind: PromptKindArg,
        /// Anchor fixtures (JSONL; schema depends on --type).
        #[arg(long, value_name = "FILE")]
        anchors: PathBuf,
        /// Hindsight targets aligned one-to-one with rollout anchors.
        #[arg(long, value_name = "FILE")]
        targets: Option<PathBuf>,
        /// Seed prompt body; defaults to the built-in template for --type.
        #[arg(long, value_name = "FILE")]
        seed_prompt: Option<PathBuf>,
        /// Grader prompt body used by the rollout scorer.
        #[arg(long, value_name = "FILE")]
        grader_prompt: Option<PathBuf>,
        /// Where to write the winning prompt body.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Where to write the per-candidate score trace (JSONL).
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "remote")]
        backend: BackendArg,
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rule")]
        mutator: MutatorArg,
        /// Rollouts sampled per anchor when scoring a rollout prompt.
        #[arg(long, default_value_t = 2)]
        rollouts_per_anchor: usize,
    },
    /// Generate expert trajectories from an information graph.
    Synth {
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        /// How many trajectories to synthesize.
        #[arg(long)]
        n: usize,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the tabular ask/stop policy with group-relative updates.
    Train {
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        /// Where to write the trained policy snapshot (JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Where to write the per-iteration training trace (CSV).
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, value_enum, default_value = "full")]
        ablation: AblationArg,
    },
    /// Roll a trained policy against its graph and report metrics.
    EvalPolicy {
        #[arg(long, value_name = "FILE")]
        graph: PathBuf,
        /// Policy snapshot produced by `train`.
        #[arg(long, value_name = "FILE")]
        policy: PathBuf,
        /// Where to write the report as JSON (also printed as a table).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        rollouts: usize,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: EvalModeArg,
    },
    /// Emit training datasets from samples and targets.
    Export {
        #[arg(long, value_enum)]
        format: FormatArg,
        /// Per-turn samples (JSONL from `segment`).
        #[arg(long, value_name = "FILE")]
        samples: PathBuf,
        /// Hindsight targets (required for --format rl).
        #[arg(long, value_name = "FILE")]
        targets: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Reward-composition variant baked into the RL export.
        #[arg(long, value_enum, default_value = "full")]
        ablation: AblationArg,
        /// Oracle used to synthesize rejected actions (--format dpo).
        #[arg(long, value_enum, default_value = "remote")]
        backend: BackendArg,
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = FlagOverrides {
        seed: cli.seed,
        beta: cli.beta,
        fusion: cli.fusion.map(Into::into),
        threshold: cli.threshold,
        drop_empty_continue: cli.drop_empty_continue,
        group_size: cli.group_size,
        k: cli.k,
        n_per_iter: cli.n_per_iter,
        max_in_flight: cli.max_in_flight,
        oracle_url: cli.oracle_url.clone(),
        oracle_model: cli.oracle_model.clone(),
        oracle_key: cli.oracle_key.clone(),
    };
    let resolved = resolve(&flags, &file)?;

    match cli.command {
        Command::Ingest { input, out, rejects } => {
            ops::ingest(&input, &out, rejects.as_deref(), &resolved)
        }
        Command::Segment { input, out } => ops::segment(&input, &out, &resolved),
        Command::Extract { input, out, backend, graph, prompt } => {
            ops::extract(&input, &out, backend, graph.as_deref(), prompt.as_deref(), &resolved)
        }
        Command::FilterGeneric { input, out, blacklist_out } => {
            ops::filter_generic(&input, &out, blacklist_out.as_deref(), &resolved)
        }
        Command::Reward { targets, candidates, out, backend, graph, prompt } => ops::reward(
            &targets,
            &candidates,
            &out,
            backend,
            graph.as_deref(),
            prompt.as_deref(),
            &resolved,
        ),
        Command::Metrics { input, out, wa_over_all_continue } => {
            ops::metrics(&input, out.as_deref(), wa_over_all_continue, &resolved)
        }
        Command::Autoprompt {
            kind,
            anchors,
            targets,
            seed_prompt,
            grader_prompt,
            out,
            trace,
            backend,
            graph,
            mutator,
            rollouts_per_anchor,
        } => ops::autoprompt(
            kind,
            &anchors,
            targets.as_deref(),
            seed_prompt.as_deref(),
            grader_prompt.as_deref(),
            &out,
            trace.as_deref(),
            backend,
            graph.as_deref(),
            mutator,
            rollouts_per_anchor,
            &resolved,
        ),
        Command::Synth { graph, n, out } => ops::synth(&graph, n, &out, &resolved),
        Command::Train { graph, out, trace, iterations, lr, ablation } => {
            ops::train_policy(&graph, &out, trace.as_deref(), iterations, lr, ablation, &resolved)
        }
        Command::EvalPolicy { graph, policy, out, rollouts, mode } => {
            ops::eval_policy(&graph, &policy, out.as_deref(), rollouts, mode, &resolved)
        }
        Command::Export { format, samples, targets, out, ablation, backend, graph } => ops::export(
            format,
            &samples,
            targets.as_deref(),
            &out,
            ablation,
            backend,
            graph.as_deref(),
            &resolved,
        ),
    }
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real parse
            // failures are exit 1.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}

//! Command bodies. Each op reads its JSONL inputs, invokes the library, and
//! writes its artifacts plus a config echo beside the primary output. Output
//! order follows input order everywhere, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use l2a_core::autoprompt::{
    calibrate, CalibrationParams, ExtractAnchor, ExtractScorer, GraderAnchor, GraderScorer,
    LlmMutator, Mutator, PromptScorer, RolloutAnchor, RolloutScorer, RuleMutator,
};
use l2a_core::dialogue::{self, SampleRecord, Trajectory, TurnSample};
use l2a_core::export::{export_dpo, export_rl, export_sft, ExportFormat};
use l2a_core::graph::{sample_expert_trajectory, InfoGraph};
use l2a_core::hindsight::{
    build_generic_blacklist, extract_targets_batch, finalize_targets, HindsightTarget,
};
use l2a_core::jsonl::{read_jsonl, write_jsonl};
use l2a_core::metrics::{compute_from_records, MetricsOptions, MetricsReport, MetricValue};
use l2a_core::oracle::{GraphOracle, Oracle, PromptTemplate, PromptType, RemoteOracle};
use l2a_core::reward::{grade_candidate, Ablation, CandidateAction, RewardRecord};
use l2a_core::trainer::{evaluate_policy, train, EvalMode, TabularPolicy, TrainHyper};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{stage_seed, write_echo, Resolved};
use crate::errors::{
    autoprompt_err, hindsight_err, oracle_err, reward_err, train_err, CliError,
};

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", path.display())))
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(open(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    write_jsonl::<T>(create(path)?, items)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn read_graph(path: &Path) -> Result<InfoGraph, CliError> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| CliError::Validation(format!("graph {}: {e}", path.display())))
}

/// Which oracle backs the oracle-dependent commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendArg {
    /// Deterministic backend grounded in an information graph (needs --graph).
    Graph,
    /// Remote chat-completions endpoint (needs --oracle-url/--oracle-model).
    Remote,
}

pub fn make_oracle(
    backend: BackendArg,
    graph: Option<&Path>,
    resolved: &Resolved,
) -> Result<Box<dyn Oracle>, CliError> {
    match backend {
        BackendArg::Graph => {
            let path = graph.ok_or_else(|| {
                CliError::Validation("--backend graph requires --graph <file>".into())
            })?;
            Ok(Box::new(GraphOracle::new(read_graph(path)?)))
        }
        BackendArg::Remote => {
            Ok(Box::new(RemoteOracle::new(resolved.remote()?).map_err(oracle_err)?))
        }
    }
}

fn load_template(ptype: PromptType, path: Option<&Path>) -> Result<PromptTemplate, CliError> {
    match path {
        None => Ok(match ptype {
            PromptType::Extract => PromptTemplate::default_extract(),
            PromptType::Grader => PromptTemplate::default_grader(),
            PromptType::Rollout => PromptTemplate::default_rollout(),
        }),
        Some(p) => PromptTemplate::new(ptype, read_to_string(p)?)
            .map_err(|e| CliError::Validation(format!("prompt {}: {e}", p.display()))),
    }
}

pub fn ingest(
    input: &Path,
    out: &Path,
    rejects: Option<&Path>,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let (trajectories, rejected) = dialogue::ingest(open(input)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
    write_lines(out, &trajectories)?;
    if let Some(path) = rejects {
        write_lines(path, &rejected)?;
    }
    write_echo(out, "ingest", resolved)?;
    println!("ingested {} trajectories ({} rejected)", trajectories.len(), rejected.len());
    Ok(())
}

pub fn segment(input: &Path, out: &Path, resolved: &Resolved) -> Result<(), CliError> {
    let trajectories: Vec<Trajectory> = read_lines(input)?;
    let mut records = Vec::new();
    for t in &trajectories {
        for sample in dialogue::segment(t) {
            records.push(SampleRecord { goal: t.goal.clone(), sample });
        }
    }
    write_lines(out, &records)?;
    write_echo(out, "segment", resolved)?;
    println!("segmented {} trajectories into {} samples", trajectories.len(), records.len());
    Ok(())
}

pub fn extract(
    input: &Path,
    out: &Path,
    backend: BackendArg,
    graph: Option<&Path>,
    prompt: Option<&Path>,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let samples: Vec<SampleRecord> = read_lines(input)?;
    let template = load_template(PromptType::Extract, prompt)?;
    let oracle = make_oracle(backend, graph, resolved)?;
    let targets = extract_targets_batch(&samples, &template, oracle.as_ref(), resolved.max_in_flight)
        .map_err(hindsight_err)?;
    write_lines(out, &targets)?;
    write_echo(out, "extract", resolved)?;
    println!("extracted {} hindsight targets", targets.len());
    Ok(())
}

pub fn filter_generic(
    input: &Path,
    out: &Path,
    blacklist_out: Option<&Path>,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let targets: Vec<HindsightTarget> = read_lines(input)?;
    let blacklist = build_generic_blacklist(&targets, resolved.threshold).map_err(hindsight_err)?;
    let finalized = finalize_targets(targets, &blacklist, resolved.drop_empty_continue);
    write_lines(out, &finalized)?;
    if let Some(path) = blacklist_out {
        let items: Vec<&String> = blacklist.iter().collect();
        let body = serde_json::to_string_pretty(&items)
            .map_err(|e| CliError::Validation(format!("cannot encode blacklist: {e}")))?;
        write_text(path, &(body + "\n"))?;
    }
    write_echo(out, "filter-generic", resolved)?;
    println!(
        "blacklisted {} generic items; {} targets retained",
        blacklist.len(),
        finalized.len()
    );
    Ok(())
}

/// One candidate action to grade, joined to its target by trajectory and turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRow {
    pub trajectory_id: String,
    pub turn_index: usize,
    pub candidate_idx: usize,
    pub raw_text: String,
}

pub fn reward(
    targets_path: &Path,
    candidates_path: &Path,
    out: &Path,
    backend: BackendArg,
    graph: Option<&Path>,
    prompt: Option<&Path>,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let targets: Vec<HindsightTarget> = read_lines(targets_path)?;
    let rows: Vec<CandidateRow> = read_lines(candidates_path)?;
    let grader = load_template(PromptType::Grader, prompt)?;
    let oracle = make_oracle(backend, graph, resolved)?;
    let cfg = resolved.reward();

    let by_key: BTreeMap<(&str, usize), &HindsightTarget> = targets
        .iter()
        .map(|t| ((t.trajectory_id.as_str(), t.turn_index), t))
        .collect();
    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let target = by_key.get(&(row.trajectory_id.as_str(), row.turn_index)).ok_or_else(|| {
            CliError::Validation(format!(
                "candidate references unknown target {}#{}",
                row.trajectory_id, row.turn_index
            ))
        })?;
        let candidate = CandidateAction::parse(&row.raw_text);
        let breakdown =
            grade_candidate(&candidate, target, &grader, oracle.as_ref(), &cfg).map_err(reward_err)?;
        records.push(RewardRecord::new(target, row.candidate_idx, &candidate, &breakdown));
    }
    write_lines(out, &records)?;
    write_echo(out, "reward", resolved)?;
    println!("graded {} candidates against {} targets", records.len(), targets.len());
    Ok(())
}

fn print_report(report: &MetricsReport) {
    let row = |name: &str, m: &MetricValue| match m.value {
        Some(v) => println!("{name:>6}  {v:<8.4} (n={})", m.count),
        None => println!("{name:>6}  n/a      (n=0)"),
    };
    row("WA", &report.wa);
    row("WA-GH", &report.wa_gh);
    row("WC", &report.wc);
    row("WS", &report.ws);
    row("AA", &report.aa);
    row("FC", &report.fc);
    row("TR", &report.tr);
}

fn write_report(report: &MetricsReport, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(path) = out {
        let body = serde_json::to_string_pretty(report)
            .map_err(|e| CliError::Validation(format!("cannot encode report: {e}")))?;
        write_text(path, &(body + "\n"))?;
    }
    Ok(())
}

pub fn metrics(
    input: &Path,
    out: Option<&Path>,
    wa_over_all_continue: bool,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let records: Vec<RewardRecord> = read_lines(input)?;
    let report = compute_from_records(&records, MetricsOptions { wa_over_all_continue })
        .map_err(|e| CliError::Validation(e.to_string()))?;
    print_report(&report);
    write_report(&report, out)?;
    if let Some(path) = out {
        write_echo(path, "metrics", resolved)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PromptKindArg {
    Extract,
    Grader,
    Rollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MutatorArg {
    /// Deterministic emphasis-toggling rewrites (no oracle calls).
    Rule,
    /// Oracle-paraphrased rewrites of the incumbent body.
    Llm,
}

struct AutopromptIo<'a> {
    out: &'a Path,
    trace: Option<&'a Path>,
    resolved: &'a Resolved,
}

fn run_calibration(
    seed_prompt: &PromptTemplate,
    params: CalibrationParams,
    mutator: &dyn Mutator,
    scorer: &dyn PromptScorer,
    io: &AutopromptIo,
) -> Result<(), CliError> {
    let run = calibrate(seed_prompt, params, mutator, scorer).map_err(autoprompt_err)?;
    write_text(io.out, &(run.best.body().to_string() + "\n"))?;
    if let Some(path) = io.trace {
        write_lines(path, &run.trace_records())?;
    }
    write_echo(io.out, "autoprompt", io.resolved)?;
    println!("calibrated over {} iterations; best score {:.4}", run.k, run.best_score);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn autoprompt(
    kind: PromptKindArg,
    anchors_path: &Path,
    targets_path: Option<&Path>,
    seed_prompt_path: Option<&Path>,
    grader_prompt_path: Option<&Path>,
    out: &Path,
    trace: Option<&Path>,
    backend: BackendArg,
    graph: Option<&Path>,
    mutator_kind: MutatorArg,
    rollouts_per_anchor: usize,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let oracle = make_oracle(backend, graph, resolved)?;
    let mutator: Box<dyn Mutator> = match mutator_kind {
        MutatorArg::Rule => Box::new(RuleMutator),
        MutatorArg::Llm => Box::new(LlmMutator { oracle: oracle.as_ref() }),
    };
    let params = CalibrationParams {
        k: resolved.k,
        n_per_iter: resolved.n_per_iter,
        seed: stage_seed(resolved.seed, "autoprompt"),
    };
    let io = AutopromptIo { out, trace, resolved };

    match kind {
        PromptKindArg::Extract => {
            let anchors: Vec<ExtractAnchor> = read_lines(anchors_path)?;
            let seed_prompt = load_template(PromptType::Extract, seed_prompt_path)?;
            let scorer = ExtractScorer::new(&anchors, oracle.as_ref()).map_err(autoprompt_err)?;
            run_calibration(&seed_prompt, params, mutator.as_ref(), &scorer, &io)
        }
        PromptKindArg::Grader => {
            let anchors: Vec<GraderAnchor> = read_lines(anchors_path)?;
            let seed_prompt = load_template(PromptType::Grader, seed_prompt_path)?;
            let scorer = GraderScorer::new(&anchors, oracle.as_ref()).map_err(autoprompt_err)?;
            run_calibration(&seed_prompt, params, mutator.as_ref(), &scorer, &io)
        }
        PromptKindArg::Rollout => {
            let anchors: Vec<RolloutAnchor> = read_lines(anchors_path)?;
            let targets: Vec<HindsightTarget> = match targets_path {
                Some(p) => read_lines(p)?,
                None => {
                    return Err(CliError::Validation(
                        "--type rollout requires --targets <file> aligned with the anchors".into(),
                    ))
                }
            };
            let seed_prompt = load_template(PromptType::Rollout, seed_prompt_path)?;
            let grader = load_template(PromptType::Grader, grader_prompt_path)?;
            let scorer = RolloutScorer::new(
                &anchors,
                targets,
                oracle.as_ref(),
                &grader,
                resolved.reward(),
                rollouts_per_anchor,
            )
            .map_err(autoprompt_err)?;
            run_calibration(&seed_prompt, params, mutator.as_ref(), &scorer, &io)
        }
    }
}

pub fn synth(graph: &Path, n: usize, out: &Path, resolved: &Resolved) -> Result<(), CliError> {
    let g = read_graph(graph)?;
    let base = stage_seed(resolved.seed, "synth");
    let trajectories: Vec<Trajectory> =
        (0..n).map(|i| sample_expert_trajectory(&g, base.wrapping_add(i as u64))).collect();
    write_lines(out, &trajectories)?;
    write_echo(out, "synth", resolved)?;
    println!("synthesized {} expert trajectories", trajectories.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationArg {
    Full,
    NoRs,
    NoRa,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Ablation {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoRs => Ablation::NoRs,
            AblationArg::NoRa => Ablation::NoRa,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    graph: &Path,
    out: &Path,
    trace: Option<&Path>,
    iterations: usize,
    lr: f64,
    ablation: AblationArg,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let g = read_graph(graph)?;
    let hyper = TrainHyper {
        lr,
        group_size: resolved.group_size,
        iterations,
        seed: stage_seed(resolved.seed, "train"),
        reward: resolved.reward(),
        ablation: ablation.into(),
        ..TrainHyper::default()
    };
    let outcome = train(&g, &hyper).map_err(train_err)?;
    let body = serde_json::to_string_pretty(&outcome.policy)
        .map_err(|e| CliError::Validation(format!("cannot encode policy: {e}")))?;
    write_text(out, &(body + "\n"))?;
    if let Some(path) = trace {
        let mut w = csv::Writer::from_writer(create(path)?);
        for row in &outcome.trace {
            w.serialize(row)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    write_echo(out, "train", resolved)?;
    let last = outcome.trace.last();
    println!(
        "trained {} iterations; final mean reward {:.4}, ws {:.4} (uniform baseline {:.4})",
        outcome.trace.len(),
        last.map_or(f64::NAN, |r| r.mean_reward),
        last.map_or(f64::NAN, |r| r.ws),
        outcome.uniform_baseline
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalModeArg {
    Greedy,
    Sample,
}

pub fn eval_policy(
    graph: &Path,
    policy_path: &Path,
    out: Option<&Path>,
    rollouts: usize,
    mode: EvalModeArg,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let g = read_graph(graph)?;
    let policy: TabularPolicy = serde_json::from_str(&read_to_string(policy_path)?)
        .map_err(|e| CliError::Validation(format!("policy {}: {e}", policy_path.display())))?;
    let mode = match mode {
        EvalModeArg::Greedy => EvalMode::Greedy,
        EvalModeArg::Sample => EvalMode::Sample,
    };
    let report = evaluate_policy(
        &policy,
        &g,
        rollouts,
        stage_seed(resolved.seed, "eval-policy"),
        mode,
        &resolved.reward(),
    )
    .map_err(train_err)?;
    print_report(&report);
    write_report(&report, out)?;
    if let Some(path) = out {
        write_echo(path, "eval-policy", resolved)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FormatArg {
    Sft,
    Dpo,
    Rl,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> ExportFormat {
        match f {
            FormatArg::Sft => ExportFormat::Sft,
            FormatArg::Dpo => ExportFormat::Dpo,
            FormatArg::Rl => ExportFormat::Rl,
        }
    }
}

fn schema_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".schema");
    PathBuf::from(p)
}

#[allow(clippy::too_many_arguments)]
pub fn export(
    format: FormatArg,
    samples_path: &Path,
    targets_path: Option<&Path>,
    out: &Path,
    ablation: AblationArg,
    backend: BackendArg,
    graph: Option<&Path>,
    resolved: &Resolved,
) -> Result<(), CliError> {
    let records: Vec<SampleRecord> = read_lines(samples_path)?;
    let samples: Vec<TurnSample> = records.into_iter().map(|r| r.sample).collect();
    let count = match format {
        FormatArg::Sft => {
            let rows = export_sft(&samples);
            write_lines(out, &rows)?;
            rows.len()
        }
        FormatArg::Dpo => {
            let oracle = make_oracle(backend, graph, resolved)?;
            let rows = export_dpo(&samples, oracle.as_ref(), stage_seed(resolved.seed, "export"));
            write_lines(out, &rows)?;
            rows.len()
        }
        FormatArg::Rl => {
            let targets: Vec<HindsightTarget> = match targets_path {
                Some(p) => read_lines(p)?,
                None => {
                    return Err(CliError::Validation(
                        "--format rl requires --targets <file>".into(),
                    ))
                }
            };
            let rows = export_rl(&samples, &targets, ablation.into())
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_lines(out, &rows)?;
            rows.len()
        }
    };
    let fmt: ExportFormat = format.into();
    let mut schema = create(&schema_path(out))?;
    writeln!(schema, "{}", fmt.schema_line())
        .and_then(|_| schema.flush())
        .map_err(|e| CliError::Validation(format!("cannot write schema file: {e}")))?;
    write_echo(out, "export", resolved)?;
    println!("exported {count} records");
    Ok(())
}

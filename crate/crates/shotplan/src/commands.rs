//! The five pipeline stages behind the command-line binary. Each command
//! loads the run configuration, drives the library, and writes
//! deterministic artifacts into `paths.out_dir`.
//!
//! Artifact layout:
//! - `labels.jsonl`          one synthesized shot-count record per sample
//! - `kstar_histogram.json`  shot-count distribution from `synth`
//! - `mle_trace.csv`         cross-entropy per epoch from `train mle`
//! - `reward_trace.csv`      step, sampled_k, reward, baseline from `train rl`
//! - `plan_<policy>.jsonl`   one shot count per sample from `allocate`
//! - `plan_<policy>_summary.json`
//! - `report_<policy>.json`  per-policy run report from `eval`
//! - `tradeoff_curve.csv`    one row per policy and budget point
//! - `eval_summary.json`     curve points, matched pairs, config hash
//! - `kstar_histogram.csv`, `flips.json`, `report_summary.txt` from `report`
//!
//! Every artifact embeds the effective configuration hash, so reruns with
//! identical settings and seeds are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocationError, AllocationPolicy, Budget};
use crate::config::{ConfigError, RunConfig};
use crate::controller::{
    train_mle, train_reinforce, ControllerError, ControllerState, RewardEstimator,
};
use crate::data::{DataError, Dataset};
use crate::features::{FeatureError, FeatureSet};
use crate::harness::{
    controller_predictions, flip_analysis, min_shots_distribution, plan_for_policy, run_policy,
    sweep_tradeoff, FlipAnalysis, HarnessError, RunOptions, RunReport, SweepOptions,
    TradeoffCurve, TradeoffPoint, UniformSelector,
};
use crate::model::remote::RemoteModel;
use crate::model::sim::Simulator;
use crate::model::{GeneralistModel, ModelError};
use crate::prompt::{DemoPlacement, ModelOutput, PromptError, PromptSpec, Template};
use crate::synthesis::{
    synthesize_dataset, AnalyticScorer, KStarLabel, RolloutScorer, SynthesisError,
};
use crate::tokenizer::Tokenizer;

pub const LABELS_FILE: &str = "labels.jsonl";
pub const KSTAR_HISTOGRAM_JSON: &str = "kstar_histogram.json";
pub const KSTAR_HISTOGRAM_CSV: &str = "kstar_histogram.csv";
pub const MLE_TRACE_FILE: &str = "mle_trace.csv";
pub const REWARD_TRACE_FILE: &str = "reward_trace.csv";
pub const CURVE_FILE: &str = "tradeoff_curve.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";
pub const FLIPS_FILE: &str = "flips.json";
pub const REPORT_SUMMARY_FILE: &str = "report_summary.txt";

pub fn plan_file(policy: AllocationPolicy) -> String {
    format!("plan_{policy}.jsonl")
}

pub fn plan_summary_file(policy: AllocationPolicy) -> String {
    format!("plan_{policy}_summary.json")
}

pub fn report_file(policy: AllocationPolicy) -> String {
    format!("report_{policy}.json")
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CommandError {
    /// Process exit code: 2 configuration or validation, 3 data, 4
    /// transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Usage(_) => 2,
            CommandError::BadInput(_)
            | CommandError::Data(_)
            | CommandError::Prompt(_)
            | CommandError::Feature(_)
            | CommandError::Io { .. } => 3,
            CommandError::Synthesis(e) => synthesis_exit(e),
            CommandError::Controller(e) => controller_exit(e),
            CommandError::Allocation(_) => 2,
            CommandError::Harness(e) => harness_exit(e),
            CommandError::Model(e) => model_exit(e),
        }
    }
}

fn model_exit(e: &ModelError) -> i32 {
    match e {
        ModelError::Transport { .. } | ModelError::Http { .. } | ModelError::BadReply(_) => 4,
        ModelError::MissingAuth { .. } | ModelError::InvalidConfig(_) => 2,
        _ => 3,
    }
}

fn synthesis_exit(e: &SynthesisError) -> i32 {
    match e {
        SynthesisError::Model(m) => model_exit(m),
        SynthesisError::Prompt(_) | SynthesisError::EmptyPopulation => 3,
        _ => 2,
    }
}

fn controller_exit(e: &ControllerError) -> i32 {
    match e {
        ControllerError::Io(_)
        | ControllerError::Corrupt(_)
        | ControllerError::BadMagic { .. }
        | ControllerError::UnsupportedVersion { .. }
        | ControllerError::LabelOutOfRange { .. }
        | ControllerError::EmptyTrainingSet => 3,
        _ => 2,
    }
}

fn harness_exit(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Model { source, .. } => model_exit(source),
        HarnessError::Prompt(_) | HarnessError::Feature(_) => 3,
        HarnessError::Controller(c) => controller_exit(c),
        HarnessError::PlanMissingSample(_) | HarnessError::IdMismatch(_) => 3,
        HarnessError::BadSweep(_) | HarnessError::Allocation(_) => 2,
    }
}

/// The configured model backend. The simulator variant additionally exposes
/// its analytic probabilities for synthesis, oracle plans, and the expected
/// reward estimator; the remote variant only answers prompts.
pub enum Backend {
    Simulator(Simulator),
    Remote(RemoteModel),
}

impl Backend {
    pub fn simulator(&self) -> Option<&Simulator> {
        match self {
            Backend::Simulator(sim) => Some(sim),
            Backend::Remote(_) => None,
        }
    }

    fn inner(&self) -> &dyn GeneralistModel {
        match self {
            Backend::Simulator(sim) => sim,
            Backend::Remote(remote) => remote,
        }
    }
}

impl GeneralistModel for Backend {
    fn max_context_tokens(&self) -> u32 {
        self.inner().max_context_tokens()
    }

    fn predict(&self, prompt: &PromptSpec, seed: u64) -> Result<ModelOutput, ModelError> {
        self.inner().predict(prompt, seed)
    }

    fn max_concurrency(&self) -> usize {
        self.inner().max_concurrency()
    }

    fn name(&self) -> &str {
        self.inner().name()
    }
}

/// Everything a command needs that the configuration merely points at.
pub struct LoadedRun {
    pub config_hash: String,
    pub dataset: Dataset,
    pub template: Template,
    pub tokenizer: Tokenizer,
    pub backend: Backend,
}

pub fn load_run(config: &RunConfig) -> Result<LoadedRun, CommandError> {
    config.validate()?;
    let dataset = Dataset::from_jsonl_path(&config.paths.dataset)?;
    if dataset.is_empty() {
        return Err(CommandError::BadInput(format!(
            "dataset {} has no samples",
            config.paths.dataset.display()
        )));
    }
    let template = Template::from_json_path(&config.paths.template)?;
    let backend = match (&config.model.simulator, &config.model.remote) {
        (Some(spec), None) => Backend::Simulator(Simulator::from_samples(
            spec.clone(),
            dataset.samples(),
            dataset.label_set(),
        )),
        (None, Some(remote)) => {
            Backend::Remote(RemoteModel::new(remote.clone(), dataset.label_set())?)
        }
        _ => unreachable!("validate enforces exactly one backend"),
    };
    Ok(LoadedRun {
        config_hash: config.hash(),
        dataset,
        template,
        tokenizer: config.tokenizer.clone(),
        backend,
    })
}

fn ensure_dir(path: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(path).map_err(|source| CommandError::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, contents: &str) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(|source| CommandError::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CommandError> {
    let text =
        fs::read_to_string(path).map_err(|source| CommandError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text)
        .map_err(|e| CommandError::BadInput(format!("{}: {e}", path.display())))
}

/// Wire format of one synthesized label line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub k_star: u32,
    pub censored: bool,
    pub estimates: Vec<f64>,
}

/// Wire format of one allocation plan line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: String,
    pub shots: u32,
    pub policy: AllocationPolicy,
}

fn read_labels(path: &Path) -> Result<Vec<LabelRecord>, CommandError> {
    if !path.exists() {
        return Err(CommandError::BadInput(format!(
            "no synthesized labels at {}; run `synth` first",
            path.display()
        )));
    }
    let text =
        fs::read_to_string(path).map_err(|source| CommandError::Io { path: path.to_path_buf(), source })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LabelRecord = serde_json::from_str(line).map_err(|e| {
            CommandError::BadInput(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Serialize)]
struct SynthSummary<'a> {
    config: &'a str,
    threshold: f64,
    k_max: u32,
    histogram: &'a BTreeMap<u32, usize>,
    censored: usize,
}

/// Label every sample with its minimal sufficient shot count.
pub fn cmd_synth(config: &RunConfig) -> Result<Vec<PathBuf>, CommandError> {
    let run = load_run(config)?;
    ensure_dir(&config.paths.out_dir)?;

    let report = match &run.backend {
        Backend::Simulator(sim) => {
            synthesize_dataset(&AnalyticScorer::new(sim), run.dataset.samples(), &config.synthesis)?
        }
        Backend::Remote(_) => {
            let scorer = RolloutScorer::new(
                &run.backend,
                run.template.clone(),
                run.tokenizer.clone(),
                DemoPlacement::default(),
            );
            synthesize_dataset(&scorer, run.dataset.samples(), &config.synthesis)?
        }
    };

    let labels_path = config.paths.out_dir.join(LABELS_FILE);
    let mut lines = String::new();
    for label in &report.labels {
        let record = LabelRecord {
            id: label.sample_id.clone(),
            k_star: label.k_star,
            censored: label.censored,
            estimates: label.estimates.clone(),
        };
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
    }
    write_text(&labels_path, &lines)?;

    let histogram_path = config.paths.out_dir.join(KSTAR_HISTOGRAM_JSON);
    write_json(
        &histogram_path,
        &SynthSummary {
            config: &run.config_hash,
            threshold: config.synthesis.threshold,
            k_max: config.synthesis.k_max,
            histogram: &report.histogram,
            censored: report.censored,
        },
    )?;
    Ok(vec![labels_path, histogram_path])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Mle,
    Rl,
}

pub fn parse_stage(text: &str) -> Result<TrainStage, CommandError> {
    match text {
        "mle" => Ok(TrainStage::Mle),
        "rl" => Ok(TrainStage::Rl),
        other => Err(CommandError::Usage(format!("unknown training stage {other:?}; use mle or rl"))),
    }
}

pub fn parse_policy(text: &str) -> Result<AllocationPolicy, CommandError> {
    match text {
        "uniform" => Ok(AllocationPolicy::Uniform),
        "random" => Ok(AllocationPolicy::Random),
        "dynamic" => Ok(AllocationPolicy::Dynamic),
        "oracle" => Ok(AllocationPolicy::Oracle),
        other => Err(CommandError::Usage(format!(
            "unknown policy {other:?}; use uniform, random, dynamic, or oracle"
        ))),
    }
}

/// Train the shot-count policy: `mle` fits synthesized labels from scratch,
/// `rl` fine-tunes an existing checkpoint (or a fresh one with
/// `from_scratch`) against the configured reward.
pub fn cmd_train(
    config: &RunConfig,
    stage: TrainStage,
    from_scratch: bool,
) -> Result<Vec<PathBuf>, CommandError> {
    let run = load_run(config)?;
    ensure_dir(&config.paths.out_dir)?;
    if let Some(parent) = config.paths.checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }

    let feature_set = FeatureSet::standard(
        run.tokenizer.clone(),
        run.template.clone(),
        run.dataset.label_set().len(),
    );
    let features = feature_set.extract_all(run.dataset.samples())?;

    match stage {
        TrainStage::Mle => {
            let records = read_labels(&config.paths.out_dir.join(LABELS_FILE))?;
            let by_id: BTreeMap<&str, u32> =
                records.iter().map(|r| (r.id.as_str(), r.k_star)).collect();
            if by_id.len() != run.dataset.len() {
                return Err(CommandError::BadInput(format!(
                    "label file covers {} ids but the dataset has {} samples",
                    by_id.len(),
                    run.dataset.len()
                )));
            }
            let mut labeled = Vec::with_capacity(run.dataset.len());
            for (sample, fv) in run.dataset.samples().iter().zip(&features) {
                let k = by_id.get(sample.id.as_str()).copied().ok_or_else(|| {
                    CommandError::BadInput(format!(
                        "sample {:?} has no synthesized label; rerun `synth` on this dataset",
                        sample.id
                    ))
                })?;
                labeled.push((fv.clone(), k));
            }

            let state = ControllerState::new(config.synthesis.k_max, feature_set.names());
            let (trained, trace) = train_mle(&state, &labeled, &config.mle)?;
            trained.save(&config.paths.checkpoint)?;

            let mut csv = String::from("epoch,cross_entropy\n");
            for (epoch, ce) in trace.cross_entropy.iter().enumerate() {
                csv.push_str(&format!("{epoch},{ce}\n"));
            }
            let trace_path = config.paths.out_dir.join(MLE_TRACE_FILE);
            write_text(&trace_path, &csv)?;
            Ok(vec![config.paths.checkpoint.clone(), trace_path])
        }
        TrainStage::Rl => {
            let state = if from_scratch {
                ControllerState::new(config.synthesis.k_max, feature_set.names())
            } else {
                if !config.paths.checkpoint.exists() {
                    return Err(CommandError::Usage(format!(
                        "no checkpoint at {}; run `train mle` first or pass --from-scratch",
                        config.paths.checkpoint.display()
                    )));
                }
                ControllerState::load(&config.paths.checkpoint)?
            };

            let (trained, trace) = match (&run.backend, config.rl.estimator) {
                (Backend::Simulator(sim), RewardEstimator::Expected) => train_reinforce(
                    &state,
                    run.dataset.samples(),
                    &features,
                    &AnalyticScorer::new(sim),
                    &config.rl,
                )?,
                (Backend::Remote(_), RewardEstimator::Expected) => {
                    return Err(CommandError::Usage(
                        "the expected reward estimator needs the simulator backend; use single_rollout".into(),
                    ));
                }
                (_, RewardEstimator::SingleRollout) => {
                    let scorer = RolloutScorer::new(
                        &run.backend,
                        run.template.clone(),
                        run.tokenizer.clone(),
                        DemoPlacement::default(),
                    );
                    train_reinforce(&state, run.dataset.samples(), &features, &scorer, &config.rl)?
                }
            };
            trained.save(&config.paths.checkpoint)?;

            let mut csv = String::from("step,sampled_k,reward,baseline\n");
            for step in &trace.steps {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    step.step, step.sampled_k, step.reward, step.baseline
                ));
            }
            let trace_path = config.paths.out_dir.join(REWARD_TRACE_FILE);
            write_text(&trace_path, &csv)?;
            Ok(vec![config.paths.checkpoint.clone(), trace_path])
        }
    }
}

fn sweep_options(config: &RunConfig, controller: Option<&ControllerState>) -> SweepOptions {
    SweepOptions {
        k_max: controller.map(|c| c.k_max()).unwrap_or(config.synthesis.k_max),
        sigma_ratio: config.eval.sigma_ratio,
        placement: DemoPlacement::default(),
        score_mode: config.eval.score_mode,
        prediction_source: config.eval.prediction_source,
        reconcile: config.budget.reconcile,
        oracle_method: crate::allocation::OracleMethod::Greedy,
        config_hash: config.hash(),
    }
}

/// Load the checkpoint and compute per-sample predictions, with a usage
/// error pointing at `train` when the checkpoint is missing.
fn load_predictions(
    config: &RunConfig,
    run: &LoadedRun,
) -> Result<(ControllerState, BTreeMap<String, f64>), CommandError> {
    if !config.paths.checkpoint.exists() {
        return Err(CommandError::Usage(format!(
            "the dynamic policy needs a trained checkpoint at {}; run `train` first",
            config.paths.checkpoint.display()
        )));
    }
    let state = ControllerState::load(&config.paths.checkpoint)?;
    let feature_set = FeatureSet::standard(
        run.tokenizer.clone(),
        run.template.clone(),
        run.dataset.label_set().len(),
    );
    let predictions =
        controller_predictions(&state, &feature_set, &run.dataset, config.eval.prediction_source)?;
    Ok((state, predictions))
}

#[derive(Debug, Serialize)]
struct PlanSummary<'a> {
    config: &'a str,
    policy: AllocationPolicy,
    /// Mean prediction, the normalizer in the allocation formula.
    mean_prediction: f64,
    projected_tokens: f64,
    total_shots: u64,
    budget: Budget,
    beta: f64,
}

/// Produce a per-sample shot plan under the configured budget.
pub fn cmd_allocate(config: &RunConfig, policy: AllocationPolicy) -> Result<Vec<PathBuf>, CommandError> {
    let run = load_run(config)?;
    ensure_dir(&config.paths.out_dir)?;
    let budget = Budget::new(
        config.budget.n,
        run.dataset.len() as u32,
        config.budget.l,
        config.budget.beta,
    )?;

    let (controller, predictions) = if policy == AllocationPolicy::Dynamic {
        let (state, predictions) = load_predictions(config, &run)?;
        (Some(state), Some(predictions))
    } else {
        (None, None)
    };
    let options = sweep_options(config, controller.as_ref());
    let plan = plan_for_policy(
        policy,
        &budget,
        &run.dataset,
        predictions.as_ref(),
        run.backend.simulator(),
        config.eval.seeds[0],
        &options,
    )?;

    let plan_path = config.paths.out_dir.join(plan_file(policy));
    let mut lines = String::new();
    for id in run.dataset.ids() {
        let shots = *plan.counts.get(&id).expect("plan covers every dataset id");
        let record = PlanRecord { id, shots, policy };
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
    }
    write_text(&plan_path, &lines)?;

    let summary_path = config.paths.out_dir.join(plan_summary_file(policy));
    write_json(
        &summary_path,
        &PlanSummary {
            config: &run.config_hash,
            policy,
            mean_prediction: plan.mean_prediction,
            projected_tokens: plan.projected_tokens,
            total_shots: plan.total_shots(),
            budget,
            beta: budget.beta,
        },
    )?;
    Ok(vec![plan_path, summary_path])
}

#[derive(Debug, Serialize)]
struct EvalSummary<'a> {
    config: &'a str,
    curve: &'a TradeoffCurve,
}

fn curve_csv(curve: &TradeoffCurve) -> String {
    let mut csv =
        String::from("policy,effective_tokens,mean_accuracy,sd_accuracy,mean_tokens_used,seeds\n");
    for p in &curve.points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.policy, p.effective_tokens, p.mean_accuracy, p.sd_accuracy, p.mean_tokens_used, p.seeds
        ));
    }
    csv
}

/// Evaluate the configured policies. With two or more sweep budgets this
/// produces a trade-off curve on the simulator; otherwise each policy runs
/// at the single configured budget and writes a full report.
pub fn cmd_eval(config: &RunConfig) -> Result<Vec<PathBuf>, CommandError> {
    let run = load_run(config)?;
    ensure_dir(&config.paths.out_dir)?;
    let policies = &config.eval.policies;

    let needs_controller = policies.contains(&AllocationPolicy::Dynamic);
    let (controller, predictions) = if needs_controller {
        let (state, predictions) = load_predictions(config, &run)?;
        (Some(state), Some(predictions))
    } else {
        (None, None)
    };
    let options = sweep_options(config, controller.as_ref());
    let k = run.dataset.len() as u32;

    let mut written = Vec::new();
    let curve = if config.eval.budgets.len() >= 2 {
        let sim = run.backend.simulator().ok_or_else(|| {
            CommandError::Usage("budget sweeps need the simulator backend".into())
        })?;
        let budgets = config
            .eval
            .budgets
            .iter()
            .map(|&n| Budget::new(n, k, config.budget.l, config.budget.beta))
            .collect::<Result<Vec<_>, _>>()?;
        let feature_set = FeatureSet::standard(
            run.tokenizer.clone(),
            run.template.clone(),
            run.dataset.label_set().len(),
        );
        let controller_pair = controller.as_ref().map(|state| (state, &feature_set));
        sweep_tradeoff(
            sim,
            &run.dataset,
            &run.template,
            &run.tokenizer,
            controller_pair,
            &budgets,
            policies,
            &config.eval.seeds,
            &options,
        )?
    } else {
        let budget = Budget::new(config.budget.n, k, config.budget.l, config.budget.beta)?;
        let mut points = Vec::new();
        for &policy in policies {
            let mut accuracies = Vec::new();
            let mut tokens = Vec::new();
            let mut first_report: Option<RunReport> = None;
            for &seed in &config.eval.seeds {
                let plan = plan_for_policy(
                    policy,
                    &budget,
                    &run.dataset,
                    predictions.as_ref(),
                    run.backend.simulator(),
                    seed,
                    &options,
                )?;
                let run_options = RunOptions {
                    seed,
                    placement: options.placement,
                    score_mode: options.score_mode,
                    config_hash: run.config_hash.clone(),
                };
                let report = run_policy(
                    &run.backend,
                    &run.dataset,
                    &run.template,
                    &run.tokenizer,
                    &plan,
                    &budget,
                    &UniformSelector,
                    &run_options,
                )?;
                accuracies.push(report.accuracy);
                tokens.push(report.tokens_used as f64);
                first_report.get_or_insert(report);
            }
            let n = accuracies.len() as f64;
            let mean = accuracies.iter().sum::<f64>() / n;
            let sd = if accuracies.len() > 1 {
                (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            points.push(TradeoffPoint {
                policy,
                effective_tokens: budget.effective_tokens(),
                mean_accuracy: mean,
                sd_accuracy: sd,
                mean_tokens_used: tokens.iter().sum::<f64>() / n,
                seeds: config.eval.seeds.len(),
            });
            let report_path = config.paths.out_dir.join(report_file(policy));
            write_json(&report_path, &first_report.expect("at least one seed ran"))?;
            written.push(report_path);
        }
        TradeoffCurve { points, matched_pairs: Vec::new() }
    };

    let curve_path = config.paths.out_dir.join(CURVE_FILE);
    write_text(&curve_path, &curve_csv(&curve))?;
    written.push(curve_path);

    let summary_path = config.paths.out_dir.join(EVAL_SUMMARY_FILE);
    write_json(&summary_path, &EvalSummary { config: &run.config_hash, curve: &curve })?;
    written.push(summary_path);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct FlipSummary<'a> {
    config: &'a str,
    from: &'a str,
    to: &'a str,
    accuracy_from: f64,
    accuracy_to: f64,
    flips: FlipAnalysis,
}

/// Summarize whatever artifacts earlier commands left in the output
/// directory: the shot-count histogram from synthesized labels, and the
/// prediction-flip accounting between the uniform and dynamic reports.
pub fn cmd_report(config: &RunConfig) -> Result<Vec<PathBuf>, CommandError> {
    config.validate()?;
    ensure_dir(&config.paths.out_dir)?;
    let hash = config.hash();
    let mut written = Vec::new();
    let mut summary = format!("config {hash}\n");

    let labels_path = config.paths.out_dir.join(LABELS_FILE);
    if labels_path.exists() {
        let records = read_labels(&labels_path)?;
        let labels: Vec<KStarLabel> = records
            .into_iter()
            .map(|r| {
                let estimate = r
                    .estimates
                    .get(r.k_star as usize)
                    .or(r.estimates.last())
                    .copied()
                    .unwrap_or(0.0);
                KStarLabel {
                    sample_id: r.id,
                    k_star: r.k_star,
                    censored: r.censored,
                    estimate_at_k_star: estimate,
                    estimates: r.estimates,
                }
            })
            .collect();
        let histogram = min_shots_distribution(&labels);
        let mut csv = String::from("k,count\n");
        for (k, count) in &histogram.counts {
            csv.push_str(&format!("{k},{count}\n"));
        }
        csv.push_str(&format!("censored,{}\n", histogram.censored));
        let path = config.paths.out_dir.join(KSTAR_HISTOGRAM_CSV);
        write_text(&path, &csv)?;
        summary.push_str(&format!(
            "labels: {} samples, {} censored\n",
            labels.len(),
            histogram.censored
        ));
        written.push(path);
    }

    let uniform_path = config.paths.out_dir.join(report_file(AllocationPolicy::Uniform));
    let dynamic_path = config.paths.out_dir.join(report_file(AllocationPolicy::Dynamic));
    if uniform_path.exists() && dynamic_path.exists() {
        let uniform: RunReport = read_json(&uniform_path)?;
        let dynamic: RunReport = read_json(&dynamic_path)?;
        let flips = flip_analysis(&uniform, &dynamic)?;
        let path = config.paths.out_dir.join(FLIPS_FILE);
        write_json(
            &path,
            &FlipSummary {
                config: &hash,
                from: "uniform",
                to: "dynamic",
                accuracy_from: uniform.accuracy,
                accuracy_to: dynamic.accuracy,
                flips,
            },
        )?;
        summary.push_str(&format!(
            "uniform -> dynamic: accuracy {} -> {}, wrong_to_right {}, right_to_wrong {}\n",
            uniform.accuracy, dynamic.accuracy, flips.wrong_to_right, flips.right_to_wrong
        ));
        written.push(path);
    }

    if written.is_empty() {
        return Err(CommandError::Usage(format!(
            "nothing to report in {}; run `synth` or `eval` first",
            config.paths.out_dir.display()
        )));
    }
    let summary_path = config.paths.out_dir.join(REPORT_SUMMARY_FILE);
    write_text(&summary_path, &summary)?;
    written.push(summary_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BudgetSection, EvalSection, ModelSection, PathsSection};
    use crate::controller::{MleConfig, RlConfig};
    use crate::synthesis::SynthesisConfig;
    use crate::synthetic::mixed_difficulty_population;
    use tempfile::TempDir;

    fn run_config(dir: &Path) -> RunConfig {
        let (dataset, spec) = mixed_difficulty_population(30, 12, 11);
        dataset.to_jsonl_path(dir.join("dataset.jsonl")).unwrap();
        let template = Template::new("Input: {x}\nAnswer: {y}", "\n\n").unwrap();
        fs::write(dir.join("template.json"), serde_json::to_string(&template).unwrap()).unwrap();
        RunConfig {
            paths: PathsSection {
                dataset: dir.join("dataset.jsonl"),
                template: dir.join("template.json"),
                checkpoint: dir.join("controller.json"),
                out_dir: dir.join("out"),
            },
            model: ModelSection { simulator: Some(spec), remote: None },
            tokenizer: Tokenizer::default(),
            synthesis: SynthesisConfig { k_max: 6, ..Default::default() },
            mle: MleConfig { epochs: 60, ..Default::default() },
            rl: RlConfig { iterations: 120, ..Default::default() },
            budget: BudgetSection {
                n: 210,
                l: 3.5,
                beta: 1.0,
                reconcile: crate::allocation::ReconcileMode::default(),
            },
            eval: EvalSection { seeds: vec![1, 2], ..Default::default() },
        }
    }

    #[test]
    fn full_pipeline_writes_every_artifact_and_reruns_identically() {
        let dir = TempDir::new().unwrap();
        let config = run_config(dir.path());
        let out = &config.paths.out_dir;

        cmd_synth(&config).unwrap();
        let labels_first = fs::read(out.join(LABELS_FILE)).unwrap();
        assert!(out.join(KSTAR_HISTOGRAM_JSON).exists());

        cmd_train(&config, TrainStage::Mle, false).unwrap();
        assert!(config.paths.checkpoint.exists());
        assert!(out.join(MLE_TRACE_FILE).exists());
        let after_mle = ControllerState::load(&config.paths.checkpoint).unwrap();
        assert_eq!(after_mle.metadata().stages.len(), 1);

        cmd_train(&config, TrainStage::Rl, false).unwrap();
        let after_rl = ControllerState::load(&config.paths.checkpoint).unwrap();
        assert_eq!(after_rl.metadata().stages.len(), 2);
        let reward_trace = fs::read_to_string(out.join(REWARD_TRACE_FILE)).unwrap();
        assert!(reward_trace.lines().count() > 1, "reward trace must be nonempty");

        cmd_allocate(&config, AllocationPolicy::Dynamic).unwrap();
        let plan_first = fs::read(out.join(plan_file(AllocationPolicy::Dynamic))).unwrap();
        assert!(out.join(plan_summary_file(AllocationPolicy::Dynamic)).exists());

        cmd_eval(&config).unwrap();
        assert!(out.join(report_file(AllocationPolicy::Uniform)).exists());
        assert!(out.join(report_file(AllocationPolicy::Dynamic)).exists());
        let csv = fs::read_to_string(out.join(CURVE_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 3, "header plus one row per policy:\n{csv}");

        cmd_report(&config).unwrap();
        assert!(out.join(KSTAR_HISTOGRAM_CSV).exists());
        assert!(out.join(FLIPS_FILE).exists());
        assert!(out.join(REPORT_SUMMARY_FILE).exists());

        cmd_synth(&config).unwrap();
        assert_eq!(fs::read(out.join(LABELS_FILE)).unwrap(), labels_first);
        cmd_allocate(&config, AllocationPolicy::Dynamic).unwrap();
        assert_eq!(
            fs::read(out.join(plan_file(AllocationPolicy::Dynamic))).unwrap(),
            plan_first
        );
    }

    #[test]
    fn train_without_labels_is_a_data_error() {
        let dir = TempDir::new().unwrap();
        let config = run_config(dir.path());
        let err = cmd_train(&config, TrainStage::Mle, false).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("synth"), "{err}");
    }

    #[test]
    fn dynamic_allocation_without_checkpoint_is_a_usage_error() {
        let dir = TempDir::new().unwrap();
        let config = run_config(dir.path());
        let err = cmd_allocate(&config, AllocationPolicy::Dynamic).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("train"), "{err}");
    }

    #[test]
    fn report_with_nothing_to_summarize_is_a_usage_error() {
        let dir = TempDir::new().unwrap();
        let config = run_config(dir.path());
        let err = cmd_report(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn out_of_range_threshold_maps_to_a_config_exit() {
        let dir = TempDir::new().unwrap();
        let mut config = run_config(dir.path());
        config.synthesis.threshold = 1.5;
        let err = cmd_synth(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn stage_and_policy_parsers_reject_unknown_names() {
        assert!(matches!(parse_stage("mle"), Ok(TrainStage::Mle)));
        assert!(matches!(parse_stage("rl"), Ok(TrainStage::Rl)));
        assert_eq!(parse_stage("sgd").unwrap_err().exit_code(), 2);
        assert!(matches!(parse_policy("oracle"), Ok(AllocationPolicy::Oracle)));
        assert_eq!(parse_policy("greedy").unwrap_err().exit_code(), 2);
    }
}

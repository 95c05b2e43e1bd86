//! End-to-end evaluation: run an allocation plan over a dataset against a
//! model, account for every token, and compare policies across budgets.
//!
//! Reports carry per-sample outcomes so that two runs differing only in
//! shot counts can be compared prediction by prediction (which samples
//! flipped from wrong to right and vice versa), and sweeps aggregate
//! accuracy over seeds per (policy, budget) point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{
    allocate_dynamic, allocate_oracle, allocate_random, allocate_uniform, reconcile_budget,
    AllocationError, AllocationPlan, AllocationPolicy, Budget, OracleMethod, ReconcileMode,
};
use crate::controller::{ControllerError, ControllerState, PredictMode};
use crate::data::{Dataset, PoolEntry, Sample};
use crate::features::{FeatureError, FeatureSet};
use crate::model::sim::Simulator;
use crate::model::{batch_predict, GeneralistModel, ModelError};
use crate::prompt::{build_prompt, DemoPlacement, PromptError, Template};
use crate::synthesis::KStarLabel;
use crate::tokenizer::Tokenizer;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("allocation plan has no entry for sample {0:?}")]
    PlanMissingSample(String),
    #[error("model failed on sample {id:?}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("reports cover different samples; first difference: {0:?}")]
    IdMismatch(String),
    #[error("invalid sweep: {0}")]
    BadSweep(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// How a model reply is judged against the gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// The parsed label must equal the gold label exactly.
    #[default]
    Label,
    /// Normalized string equality on the raw reply: lowercased, punctuation
    /// stripped, articles removed, whitespace collapsed.
    ExactMatch,
}

/// Normalization used by [`ScoreMode::ExactMatch`].
pub fn normalize_exact_match(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Picks which pool entries fill a k-shot prompt. Implementations must be
/// deterministic in (sample, k, seed).
pub trait DemoSelector: Sync {
    fn select<'a>(&self, sample: &'a Sample, k: usize, seed: u64) -> Vec<&'a PoolEntry>;
}

/// Uniform without replacement, the default. Each sample gets its own seed
/// stream, so selection does not depend on evaluation order.
pub struct UniformSelector;

impl DemoSelector for UniformSelector {
    fn select<'a>(&self, sample: &'a Sample, k: usize, seed: u64) -> Vec<&'a PoolEntry> {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update([0x1f]);
        hasher.update(sample.id.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha20Rng::from_seed(digest);
        let mut picked = rand::seq::index::sample(&mut rng, sample.pool.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| &sample.pool[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub shots: u32,
    pub correct: bool,
    /// Demonstration tokens spent on this prompt (separators included).
    pub tokens: u32,
    /// True when the plan asked for more shots than the pool holds.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: AllocationPolicy,
    pub budget: Budget,
    pub accuracy: f64,
    /// Total demonstration tokens across all prompts.
    pub tokens_used: u64,
    pub tokens_per_sample: f64,
    pub shots_histogram: BTreeMap<u32, usize>,
    pub per_sample: Vec<SampleResult>,
    pub clamped_samples: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub placement: DemoPlacement,
    pub score_mode: ScoreMode,
    /// Recorded verbatim in the report for provenance.
    pub config_hash: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 0,
            placement: DemoPlacement::BeforeBase,
            score_mode: ScoreMode::Label,
            config_hash: String::new(),
        }
    }
}

/// Execute one plan: select demos, compose, predict, score. Counts above a
/// sample's pool size are clamped to the pool and flagged. The budget is
/// recorded in the report, not enforced here; feasibility is the planner's
/// job.
#[allow(clippy::too_many_arguments)]
pub fn run_policy<M: GeneralistModel + ?Sized, S: DemoSelector + ?Sized>(
    model: &M,
    dataset: &Dataset,
    template: &Template,
    tokenizer: &Tokenizer,
    plan: &AllocationPlan,
    budget: &Budget,
    selector: &S,
    options: &RunOptions,
) -> Result<RunReport, HarnessError> {
    let mut prompts = Vec::with_capacity(dataset.len());
    let mut shot_rows = Vec::with_capacity(dataset.len());
    for sample in dataset.samples() {
        let wanted = *plan
            .counts
            .get(&sample.id)
            .ok_or_else(|| HarnessError::PlanMissingSample(sample.id.clone()))?;
        let shots = (wanted as usize).min(sample.pool.len());
        let clamped = shots < wanted as usize;
        let entries = selector.select(sample, shots, options.seed);
        let prompt = build_prompt(sample, &entries, template, tokenizer, options.placement)?;
        shot_rows.push((shots as u32, clamped));
        prompts.push(prompt);
    }

    let outputs = batch_predict(model, &prompts, options.seed);

    let mut per_sample = Vec::with_capacity(dataset.len());
    let mut correct_count = 0usize;
    let mut tokens_used = 0u64;
    let mut histogram: BTreeMap<u32, usize> = BTreeMap::new();
    let mut clamped_samples = 0usize;
    for ((sample, prompt), (output, (shots, clamped))) in dataset
        .samples()
        .iter()
        .zip(&prompts)
        .zip(outputs.into_iter().zip(shot_rows))
    {
        let output = output.map_err(|source| HarnessError::Model { id: sample.id.clone(), source })?;
        let correct = match options.score_mode {
            ScoreMode::Label => output.predicted_label.matches(&sample.label),
            ScoreMode::ExactMatch => {
                normalize_exact_match(&output.text) == normalize_exact_match(&sample.label)
            }
        };
        let tokens = prompt.demo_tokens();
        correct_count += correct as usize;
        tokens_used += u64::from(tokens);
        *histogram.entry(shots).or_insert(0) += 1;
        clamped_samples += clamped as usize;
        per_sample.push(SampleResult { id: sample.id.clone(), shots, correct, tokens, clamped });
    }

    let k = dataset.len();
    Ok(RunReport {
        policy: plan.policy,
        budget: *budget,
        accuracy: correct_count as f64 / k as f64,
        tokens_used,
        tokens_per_sample: tokens_used as f64 / k as f64,
        shots_histogram: histogram,
        per_sample,
        clamped_samples,
        seed: options.seed,
        config_hash: options.config_hash.clone(),
    })
}

/// Shot-count distribution of synthesized labels, censored bucket separate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KStarHistogram {
    pub counts: BTreeMap<u32, usize>,
    pub censored: usize,
}

pub fn min_shots_distribution(labels: &[KStarLabel]) -> KStarHistogram {
    let mut histogram = KStarHistogram::default();
    for label in labels {
        if label.censored {
            histogram.censored += 1;
        } else {
            *histogram.counts.entry(label.k_star).or_insert(0) += 1;
        }
    }
    histogram
}

/// Prediction-level comparison of two runs over the same samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipAnalysis {
    /// Exactly wrong_to_right - right_to_wrong.
    pub acc_delta: f64,
    pub wrong_to_right: f64,
    pub right_to_wrong: f64,
}

pub fn flip_analysis(report_a: &RunReport, report_b: &RunReport) -> Result<FlipAnalysis, HarnessError> {
    if report_a.per_sample.len() != report_b.per_sample.len() {
        return Err(HarnessError::IdMismatch(format!(
            "{} vs {} samples",
            report_a.per_sample.len(),
            report_b.per_sample.len()
        )));
    }
    let b_by_id: BTreeMap<&str, bool> =
        report_b.per_sample.iter().map(|r| (r.id.as_str(), r.correct)).collect();
    let mut wrong_to_right = 0usize;
    let mut right_to_wrong = 0usize;
    for row in &report_a.per_sample {
        let after = b_by_id
            .get(row.id.as_str())
            .ok_or_else(|| HarnessError::IdMismatch(row.id.clone()))?;
        match (row.correct, after) {
            (false, true) => wrong_to_right += 1,
            (true, false) => right_to_wrong += 1,
            _ => {}
        }
    }
    let k = report_a.per_sample.len() as f64;
    let wrong_to_right = wrong_to_right as f64 / k;
    let right_to_wrong = right_to_wrong as f64 / k;
    Ok(FlipAnalysis { acc_delta: wrong_to_right - right_to_wrong, wrong_to_right, right_to_wrong })
}

/// How controller predictions feed the dynamic allocation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// The most likely k, ties toward smaller.
    #[default]
    Argmax,
    /// The policy mean E[k], fractional.
    Expected,
}

/// Controller predictions for every dataset sample, keyed by id.
pub fn controller_predictions(
    controller: &ControllerState,
    features: &FeatureSet,
    dataset: &Dataset,
    source: PredictionSource,
) -> Result<BTreeMap<String, f64>, HarnessError> {
    let mut predictions = BTreeMap::new();
    for sample in dataset.samples() {
        let fv = features.extract(sample)?;
        let value = match source {
            PredictionSource::Argmax => {
                controller.predict_k(&fv, PredictMode::Argmax)? as f64
            }
            PredictionSource::Expected => controller.expected_k(&fv)?,
        };
        predictions.insert(sample.id.clone(), value);
    }
    Ok(predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub k_max: u32,
    /// Gaussian spread for the random baseline, as a fraction of the mean.
    pub sigma_ratio: f64,
    pub placement: DemoPlacement,
    pub score_mode: ScoreMode,
    pub prediction_source: PredictionSource,
    pub reconcile: ReconcileMode,
    pub oracle_method: OracleMethod,
    pub config_hash: String,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            k_max: 10,
            sigma_ratio: 1.0 / 3.0,
            placement: DemoPlacement::BeforeBase,
            score_mode: ScoreMode::Label,
            prediction_source: PredictionSource::Argmax,
            reconcile: ReconcileMode::None,
            oracle_method: OracleMethod::Greedy,
            config_hash: String::new(),
        }
    }
}

/// Accuracy of one policy at one budget point, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub policy: AllocationPolicy,
    /// The spend target beta * N at this point.
    pub effective_tokens: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub sd_accuracy: f64,
    pub mean_tokens_used: f64,
    pub seeds: usize,
}

/// Measured demo-token spend at which the dynamic policy reaches the same
/// accuracy as a uniform point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub uniform_tokens: f64,
    pub dynamic_tokens: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
    pub matched_pairs: Vec<MatchedPair>,
}

impl TradeoffCurve {
    pub fn points_for(&self, policy: AllocationPolicy) -> Vec<&TradeoffPoint> {
        self.points.iter().filter(|p| p.policy == policy).collect()
    }
}

/// Build one policy's plan at one budget point. The oracle policy needs the
/// simulator's probabilities and the dynamic policy needs per-sample
/// predictions; passing neither restricts the choice to uniform and random.
pub fn plan_for_policy(
    policy: AllocationPolicy,
    budget: &Budget,
    dataset: &Dataset,
    predictions: Option<&BTreeMap<String, f64>>,
    sim: Option<&Simulator>,
    seed: u64,
    options: &SweepOptions,
) -> Result<AllocationPlan, HarnessError> {
    let plan = match policy {
        AllocationPolicy::Uniform => allocate_uniform(budget, &dataset.ids()),
        AllocationPolicy::Random => {
            allocate_random(budget, &dataset.ids(), options.sigma_ratio, seed, options.k_max)?
        }
        AllocationPolicy::Dynamic => {
            let predictions = predictions.ok_or_else(|| {
                HarnessError::BadSweep("dynamic policy needs controller predictions".into())
            })?;
            allocate_dynamic(predictions, budget, options.k_max)?
        }
        AllocationPolicy::Oracle => {
            let sim = sim.ok_or_else(|| {
                HarnessError::BadSweep("oracle policy needs the simulator backend".into())
            })?;
            allocate_oracle(sim, dataset.samples(), budget, options.k_max, options.oracle_method)?
        }
    };
    Ok(reconcile_budget(&plan, budget, options.reconcile))
}

/// Run every requested policy at every budget point, averaging accuracy
/// over the given seeds. All policies at one point share the exact same
/// budget, so comparisons are token-for-token fair. Runs on the simulator:
/// the oracle policy and exact verification need its probabilities.
#[allow(clippy::too_many_arguments)]
pub fn sweep_tradeoff(
    sim: &Simulator,
    dataset: &Dataset,
    template: &Template,
    tokenizer: &Tokenizer,
    controller: Option<(&ControllerState, &FeatureSet)>,
    budgets: &[Budget],
    policies: &[AllocationPolicy],
    seeds: &[u64],
    options: &SweepOptions,
) -> Result<TradeoffCurve, HarnessError> {
    if budgets.len() < 2 {
        return Err(HarnessError::BadSweep("need at least 2 budget points".into()));
    }
    for pair in budgets.windows(2) {
        if pair[1].effective_tokens() <= pair[0].effective_tokens() {
            return Err(HarnessError::BadSweep(
                "budget points must be strictly increasing in beta * N".into(),
            ));
        }
    }
    if seeds.is_empty() {
        return Err(HarnessError::BadSweep("need at least 1 seed".into()));
    }
    if policies.is_empty() {
        return Err(HarnessError::BadSweep("need at least 1 policy".into()));
    }
    if policies.contains(&AllocationPolicy::Dynamic) && controller.is_none() {
        return Err(HarnessError::BadSweep("dynamic policy needs a controller".into()));
    }

    let predictions = match controller {
        Some((state, features)) if policies.contains(&AllocationPolicy::Dynamic) => {
            Some(controller_predictions(state, features, dataset, options.prediction_source)?)
        }
        _ => None,
    };

    let mut points = Vec::new();
    for budget in budgets {
        let target = budget.effective_tokens();
        for &policy in policies {
            let mut accuracies = Vec::with_capacity(seeds.len());
            let mut tokens = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let plan = plan_for_policy(
                    policy,
                    budget,
                    dataset,
                    predictions.as_ref(),
                    Some(sim),
                    seed,
                    options,
                )?;
                // Budget parity: every policy at this point answers to the
                // same spend target.
                assert_eq!(budget.effective_tokens(), target, "sweep point budget drifted");
                let run_options = RunOptions {
                    seed,
                    placement: options.placement,
                    score_mode: options.score_mode,
                    config_hash: options.config_hash.clone(),
                };
                let report = run_policy(
                    sim, dataset, template, tokenizer, &plan, budget, &UniformSelector, &run_options,
                )?;
                accuracies.push(report.accuracy);
                tokens.push(report.tokens_used as f64);
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
                effective_tokens: target,
                mean_accuracy: mean,
                sd_accuracy: sd,
                mean_tokens_used: tokens.iter().sum::<f64>() / n,
                seeds: seeds.len(),
            });
        }
    }

    let matched_pairs = matched_performance_pairs(&points);
    Ok(TradeoffCurve { points, matched_pairs })
}

/// For each uniform point, the dynamic spend reaching the same accuracy, by
/// linear interpolation along the dynamic curve. Both axes are measured
/// mean demo tokens, not spend targets, so clamping and rounding effects
/// count against each policy. Uniform points above everything the dynamic
/// curve reaches produce no pair.
fn matched_performance_pairs(points: &[TradeoffPoint]) -> Vec<MatchedPair> {
    let uniform: Vec<&TradeoffPoint> =
        points.iter().filter(|p| p.policy == AllocationPolicy::Uniform).collect();
    let dynamic: Vec<&TradeoffPoint> =
        points.iter().filter(|p| p.policy == AllocationPolicy::Dynamic).collect();
    if dynamic.is_empty() {
        return Vec::new();
    }

    let mut pairs = Vec::new();
    for u in uniform {
        let target = u.mean_accuracy;
        if dynamic[0].mean_accuracy >= target {
            pairs.push(MatchedPair {
                uniform_tokens: u.mean_tokens_used,
                dynamic_tokens: dynamic[0].mean_tokens_used,
                accuracy: target,
            });
            continue;
        }
        let mut found = None;
        for pair in dynamic.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let (a0, a1) = (lo.mean_accuracy, hi.mean_accuracy);
            if (a0 < target && target <= a1) || (a1 <= target && target < a0) {
                let span = a1 - a0;
                let fraction = if span.abs() < 1e-15 { 0.0 } else { (target - a0) / span };
                found = Some(lo.mean_tokens_used + fraction * (hi.mean_tokens_used - lo.mean_tokens_used));
                break;
            }
        }
        if let Some(tokens) = found {
            pairs.push(MatchedPair {
                uniform_tokens: u.mean_tokens_used,
                dynamic_tokens: tokens,
                accuracy: target,
            });
        }
    }
    pairs
}

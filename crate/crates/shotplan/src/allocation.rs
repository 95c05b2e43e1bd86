//! Budget-feasible shot allocation.
//!
//! A budget of N tokens across K samples with average demonstration length
//! L gives each sample a base allotment of N/(K*L) shots. The dynamic
//! policy scales that allotment by each sample's predicted shot need
//! relative to the batch mean, rounds half away from zero, and clamps to
//! [0, k_max]. Uniform, Gaussian-random, and exhaustive-oracle policies
//! provide the comparison points.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::model::sim::Simulator;
use crate::synthesis::{expected_accuracy, AnalyticScorer, EstimationMode, SynthesisConfig, SynthesisError};

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("invalid budget: {0}")]
    BadBudget(String),
    #[error("prediction map is empty")]
    EmptyPredictions,
    #[error("all predictions are zero; the mean-relative scale in the allocation rule is undefined")]
    DegeneratePredictions,
    #[error("prediction for {id:?} is negative: {value}")]
    NegativePrediction { id: String, value: f64 },
    #[error("sigma ratio must be nonnegative, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// Token budget for one evaluation batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BudgetRecord", into = "BudgetRecord")]
pub struct Budget {
    /// Total demonstration token budget N.
    pub n: u64,
    /// Sample count K.
    pub k: u32,
    /// Average demonstration length L in tokens.
    pub l: f64,
    /// Token saving ratio in [0, 1]; the spend target is beta * N.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BudgetRecord {
    n: u64,
    k: u32,
    l: f64,
    beta: f64,
}

impl TryFrom<BudgetRecord> for Budget {
    type Error = String;
    fn try_from(r: BudgetRecord) -> Result<Self, Self::Error> {
        Budget::new(r.n, r.k, r.l, r.beta).map_err(|e| e.to_string())
    }
}

impl From<Budget> for BudgetRecord {
    fn from(b: Budget) -> Self {
        BudgetRecord { n: b.n, k: b.k, l: b.l, beta: b.beta }
    }
}

impl Budget {
    pub fn new(n: u64, k: u32, l: f64, beta: f64) -> Result<Budget, AllocationError> {
        if k == 0 {
            return Err(AllocationError::BadBudget("sample count K must be positive".into()));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(AllocationError::BadBudget(format!(
                "average demonstration length L must be positive, got {l}"
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(AllocationError::BadBudget(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(Budget { n, k, l, beta })
    }

    /// Base allotment N/(K*L) in shots per sample, before any scaling.
    pub fn per_sample_shots(&self) -> f64 {
        self.n as f64 / (self.k as f64 * self.l)
    }

    /// Spend target beta * N in tokens.
    pub fn effective_tokens(&self) -> f64 {
        self.beta * self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationPolicy {
    Uniform,
    Random,
    Dynamic,
    Oracle,
}

impl std::fmt::Display for AllocationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AllocationPolicy::Uniform => "uniform",
            AllocationPolicy::Random => "random",
            AllocationPolicy::Dynamic => "dynamic",
            AllocationPolicy::Oracle => "oracle",
        })
    }
}

/// Per-sample shot counts plus the pre-rounding values they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub policy: AllocationPolicy,
    pub counts: BTreeMap<String, u32>,
    /// Value each count was rounded from; trim reconciliation orders by its
    /// fractional part.
    pub raw: BTreeMap<String, f64>,
    /// Mean controller prediction for the dynamic policy; the mean raw shot
    /// value for policies without predictions.
    pub mean_prediction: f64,
    /// Sum of counts times L.
    pub projected_tokens: f64,
}

impl AllocationPlan {
    pub fn total_shots(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    fn with_projection(mut self, budget: &Budget) -> AllocationPlan {
        self.projected_tokens = self.total_shots() as f64 * budget.l;
        self
    }
}

/// Round half away from zero: 2.5 -> 3, -2.5 -> -3.
pub fn round_half_away_from_zero(value: f64) -> i64 {
    value.round() as i64
}

fn clamped_count(raw: f64, k_max: u32) -> u32 {
    round_half_away_from_zero(raw).clamp(0, i64::from(k_max)) as u32
}

/// Every sample gets round(N/(K*L)) shots.
pub fn allocate_uniform(budget: &Budget, ids: &[String]) -> AllocationPlan {
    let shots_raw = budget.per_sample_shots();
    let shots = round_half_away_from_zero(shots_raw).max(0) as u32;
    let counts: BTreeMap<String, u32> = ids.iter().map(|id| (id.clone(), shots)).collect();
    let raw: BTreeMap<String, f64> = ids.iter().map(|id| (id.clone(), shots_raw)).collect();
    AllocationPlan {
        policy: AllocationPolicy::Uniform,
        counts,
        raw,
        mean_prediction: shots_raw,
        projected_tokens: 0.0,
    }
    .with_projection(budget)
}

/// Every sample draws its count from Normal(N/(K*L), sigma_ratio * N/(K*L)),
/// rounded and clamped to [0, k_max]. Seed-deterministic; draws follow the
/// order of `ids`.
pub fn allocate_random(
    budget: &Budget,
    ids: &[String],
    sigma_ratio: f64,
    seed: u64,
    k_max: u32,
) -> Result<AllocationPlan, AllocationError> {
    if !(sigma_ratio.is_finite() && sigma_ratio >= 0.0) {
        return Err(AllocationError::BadSigma(sigma_ratio));
    }
    let mean = budget.per_sample_shots();
    let normal = Normal::new(mean, sigma_ratio * mean).expect("sigma validated nonnegative and finite");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for id in ids {
        let draw = normal.sample(&mut rng);
        counts.insert(id.clone(), clamped_count(draw, k_max));
        raw.insert(id.clone(), draw);
    }
    Ok(AllocationPlan {
        policy: AllocationPolicy::Random,
        counts,
        raw,
        mean_prediction: mean,
        projected_tokens: 0.0,
    }
    .with_projection(budget))
}

/// The mean-relative allocation rule: each sample gets
/// round(beta * (prediction / mean_prediction) * N/(K*L)), clamped to
/// [0, k_max].
pub fn allocate_dynamic(
    predictions: &BTreeMap<String, f64>,
    budget: &Budget,
    k_max: u32,
) -> Result<AllocationPlan, AllocationError> {
    if predictions.is_empty() {
        return Err(AllocationError::EmptyPredictions);
    }
    for (id, value) in predictions {
        if *value < 0.0 || !value.is_finite() {
            return Err(AllocationError::NegativePrediction { id: id.clone(), value: *value });
        }
    }
    let mean: f64 = predictions.values().sum::<f64>() / predictions.len() as f64;
    if mean == 0.0 {
        return Err(AllocationError::DegeneratePredictions);
    }

    let base = budget.per_sample_shots();
    let mut counts = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for (id, prediction) in predictions {
        let value = budget.beta * (prediction / mean) * base;
        counts.insert(id.clone(), clamped_count(value, k_max));
        raw.insert(id.clone(), value);
    }
    Ok(AllocationPlan {
        policy: AllocationPolicy::Dynamic,
        counts,
        raw,
        mean_prediction: mean,
        projected_tokens: 0.0,
    }
    .with_projection(budget))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconcileMode {
    /// Keep the rounded counts as-is, faithful to the allocation formula.
    #[default]
    None,
    /// Decrement counts until the plan fits beta * N, taking shots first
    /// from the counts whose pre-rounding fractional part was smallest.
    TrimLargestRemainder,
}

/// Enforce the token bound on an existing plan. Trim mode never produces a
/// negative count and terminates once the plan fits or everything is zero.
pub fn reconcile_budget(plan: &AllocationPlan, budget: &Budget, mode: ReconcileMode) -> AllocationPlan {
    match mode {
        ReconcileMode::None => plan.clone(),
        ReconcileMode::TrimLargestRemainder => {
            let target = budget.effective_tokens();
            let mut trimmed = plan.clone();
            let mut order: Vec<(f64, String)> = trimmed
                .raw
                .iter()
                .map(|(id, raw)| (raw - raw.floor(), id.clone()))
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("fractions are finite").then(a.1.cmp(&b.1)));

            let mut projected = trimmed.total_shots() as f64 * budget.l;
            while projected > target {
                let mut changed = false;
                for (_, id) in &order {
                    if projected <= target {
                        break;
                    }
                    let count = trimmed.counts.get_mut(id).expect("raw and counts share keys");
                    if *count > 0 {
                        *count -= 1;
                        projected -= budget.l;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            trimmed.projected_tokens = trimmed.total_shots() as f64 * budget.l;
            trimmed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Add one shot at a time to the sample with the best marginal gain.
    /// Optimal when every gain curve is concave.
    Greedy,
    /// Knapsack dynamic program over total shots; exactly optimal. Meant
    /// for small K.
    ExactDp,
}

/// Best-possible plan under the simulator: maximize the sum of expected
/// per-sample accuracies subject to total shots * L <= beta * N. Only the
/// simulator exposes the probabilities this needs, so the signature demands
/// one; no remote model can be passed here.
pub fn allocate_oracle(
    sim: &Simulator,
    samples: &[Sample],
    budget: &Budget,
    k_max: u32,
    method: OracleMethod,
) -> Result<AllocationPlan, AllocationError> {
    let scorer = AnalyticScorer::new(sim);
    let config = SynthesisConfig {
        threshold: 0.5,
        k_max: k_max.max(1),
        mode: EstimationMode::Exact,
        seed: 0,
        enumeration_cap: 1 << 22,
    };

    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for sample in samples {
        let cap = (k_max as usize).min(sample.pool.len());
        let mut curve = Vec::with_capacity(cap + 1);
        for k in 0..=cap {
            curve.push(expected_accuracy(&scorer, sample, k as u32, &config)?);
        }
        curves.push(curve);
    }

    let max_total = (budget.effective_tokens() / budget.l).floor().max(0.0) as usize;
    let chosen: Vec<usize> = match method {
        OracleMethod::Greedy => greedy_counts(&curves, max_total),
        OracleMethod::ExactDp => dp_counts(&curves, max_total),
    };

    let mut counts = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for (sample, &k) in samples.iter().zip(&chosen) {
        counts.insert(sample.id.clone(), k as u32);
        raw.insert(sample.id.clone(), k as f64);
    }
    let mean = if chosen.is_empty() {
        0.0
    } else {
        chosen.iter().sum::<usize>() as f64 / chosen.len() as f64
    };
    Ok(AllocationPlan {
        policy: AllocationPolicy::Oracle,
        counts,
        raw,
        mean_prediction: mean,
        projected_tokens: 0.0,
    }
    .with_projection(budget))
}

fn greedy_counts(curves: &[Vec<f64>], max_total: usize) -> Vec<usize> {
    let mut counts = vec![0usize; curves.len()];
    let mut spent = 0usize;
    while spent < max_total {
        let mut best: Option<(usize, f64)> = None;
        for (i, curve) in curves.iter().enumerate() {
            if counts[i] + 1 >= curve.len() {
                continue;
            }
            let gain = curve[counts[i] + 1] - curve[counts[i]];
            if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, _)) => {
                counts[i] += 1;
                spent += 1;
            }
            None => break,
        }
    }
    counts
}

fn dp_counts(curves: &[Vec<f64>], max_total: usize) -> Vec<usize> {
    // dp[s]: best total value using exactly s shots over the samples seen
    // so far; choice[i][s] remembers sample i's count on the best path.
    let mut dp = vec![f64::NEG_INFINITY; max_total + 1];
    dp[0] = 0.0;
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(curves.len());

    for curve in curves {
        let mut next = vec![f64::NEG_INFINITY; max_total + 1];
        let mut pick = vec![0usize; max_total + 1];
        for s in 0..=max_total {
            for (k, value) in curve.iter().enumerate() {
                if k > s || dp[s - k] == f64::NEG_INFINITY {
                    continue;
                }
                let candidate = dp[s - k] + value;
                if candidate > next[s] {
                    next[s] = candidate;
                    pick[s] = k;
                }
            }
        }
        dp = next;
        choice.push(pick);
    }

    let mut best_s = 0usize;
    for s in 0..=max_total {
        if dp[s] > dp[best_s] {
            best_s = s;
        }
    }
    let mut counts = vec![0usize; curves.len()];
    let mut s = best_s;
    for i in (0..curves.len()).rev() {
        counts[i] = choice[i][s];
        s -= counts[i];
    }
    counts
}

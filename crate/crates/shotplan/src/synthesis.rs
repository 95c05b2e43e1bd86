//! Supervision synthesis: the smallest shot count whose expected accuracy
//! clears a threshold.
//!
//! For each sample, expected accuracy at shot count k is an average over
//! size-k demonstration subsets of the sample's pool, either by full
//! enumeration or by Monte-Carlo draws. The label k* is the first k in
//! 0..=k_max whose estimate strictly exceeds the threshold; when none does
//! the label is censored at k_max.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::Sample;
use crate::model::sim::Simulator;
use crate::model::{GeneralistModel, ModelError};
use crate::prompt::{build_prompt, DemoPlacement, PromptError, Template};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("k = {k} exceeds the demonstration pool size {pool}")]
    KExceedsPool { k: u32, pool: usize },
    #[error("{combinations} subsets exceed the enumeration cap {cap}; use monte_carlo mode")]
    EnumerationCapExceeded { combinations: u128, cap: u64 },
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    BadThreshold(f64),
    #[error("invalid synthesis config: {0}")]
    BadConfig(String),
    #[error("sample list is empty")]
    EmptyPopulation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// How the subset expectation is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    /// Average over every size-k subset. Refuses pools whose subset count
    /// exceeds the configured cap.
    Exact,
    /// Mean over `samples` uniformly drawn subsets, seed-deterministic.
    MonteCarlo { samples: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Expected accuracy must strictly exceed this for k to qualify.
    pub threshold: f64,
    /// Largest shot count considered; censored labels sit here.
    pub k_max: u32,
    pub mode: EstimationMode,
    pub seed: u64,
    /// Largest subset count exact mode will enumerate.
    pub enumeration_cap: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            threshold: 0.5,
            k_max: 10,
            mode: EstimationMode::Exact,
            seed: 0,
            enumeration_cap: 1 << 20,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(SynthesisError::BadThreshold(self.threshold));
        }
        if self.k_max == 0 {
            return Err(SynthesisError::BadConfig("k_max must be positive".into()));
        }
        if let EstimationMode::MonteCarlo { samples } = self.mode {
            if samples == 0 {
                return Err(SynthesisError::BadConfig("monte_carlo needs at least 1 sample".into()));
            }
        }
        Ok(())
    }
}

/// One synthesized supervision pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStarLabel {
    pub sample_id: String,
    pub k_star: u32,
    /// True when no scanned k cleared the threshold; k_star is then k_max.
    pub censored: bool,
    pub estimate_at_k_star: f64,
    /// Expected accuracy at each scanned k, starting at k = 0.
    pub estimates: Vec<f64>,
}

/// Labels plus the population-level shot-count distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub labels: Vec<KStarLabel>,
    /// Count per k*, non-censored labels only.
    pub histogram: BTreeMap<u32, usize>,
    pub censored: usize,
}

/// Scores one demonstration subset for one sample. Implementations decide
/// whether the score is an analytic probability or a 0/1 rollout outcome.
pub trait SubsetScorer: Sync {
    fn score(&self, sample: &Sample, demo_ids: &[&str], seed: u64) -> Result<f64, SynthesisError>;
}

/// Reads the simulator's closed-form correctness probability. Expectations
/// computed through it are exact, never sampled.
pub struct AnalyticScorer<'a> {
    sim: &'a Simulator,
}

impl<'a> AnalyticScorer<'a> {
    pub fn new(sim: &'a Simulator) -> Self {
        AnalyticScorer { sim }
    }
}

impl SubsetScorer for AnalyticScorer<'_> {
    fn score(&self, sample: &Sample, demo_ids: &[&str], _seed: u64) -> Result<f64, SynthesisError> {
        Ok(self.sim.correct_probability(sample, demo_ids)?)
    }
}

/// Runs one real prediction per subset and scores it 0/1 against the gold
/// label. The only choice for models whose internals are opaque.
pub struct RolloutScorer<'a, M: GeneralistModel + ?Sized> {
    model: &'a M,
    template: Template,
    tokenizer: Tokenizer,
    placement: DemoPlacement,
}

impl<'a, M: GeneralistModel + ?Sized> RolloutScorer<'a, M> {
    pub fn new(model: &'a M, template: Template, tokenizer: Tokenizer, placement: DemoPlacement) -> Self {
        RolloutScorer { model, template, tokenizer, placement }
    }
}

impl<M: GeneralistModel + ?Sized> SubsetScorer for RolloutScorer<'_, M> {
    fn score(&self, sample: &Sample, demo_ids: &[&str], seed: u64) -> Result<f64, SynthesisError> {
        let entries = demo_ids
            .iter()
            .map(|id| {
                sample.pool.iter().find(|e| e.id == *id).ok_or_else(|| ModelError::UnknownDemo {
                    sample_id: sample.id.clone(),
                    demo_id: (*id).to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let prompt = build_prompt(sample, &entries, &self.template, &self.tokenizer, self.placement)?;
        let output = self.model.predict(&prompt, seed)?;
        Ok(if output.predicted_label.matches(&sample.label) { 1.0 } else { 0.0 })
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        c = match c.checked_mul(n as u128 - k as u128 + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    c
}

fn sample_seed_base(seed: u64, sample_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(sample_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Expected accuracy of k-shot prompts for one sample, averaged over
/// demonstration subsets per the configured estimation mode.
pub fn expected_accuracy<S: SubsetScorer + ?Sized>(
    scorer: &S,
    sample: &Sample,
    k: u32,
    config: &SynthesisConfig,
) -> Result<f64, SynthesisError> {
    config.validate()?;
    let n = sample.pool.len();
    if k as usize > n {
        return Err(SynthesisError::KExceedsPool { k, pool: n });
    }
    let ids: Vec<&str> = sample.pool.iter().map(|e| e.id.as_str()).collect();
    let seed_base = sample_seed_base(config.seed, &sample.id);

    match config.mode {
        EstimationMode::Exact => {
            let combinations = binomial(n, k as usize);
            if combinations > config.enumeration_cap as u128 {
                return Err(SynthesisError::EnumerationCapExceeded {
                    combinations,
                    cap: config.enumeration_cap,
                });
            }
            let mut total = 0.0;
            let mut count = 0u64;
            for (idx, subset) in (0..n).combinations(k as usize).enumerate() {
                let subset_ids: Vec<&str> = subset.iter().map(|&i| ids[i]).collect();
                total += scorer.score(sample, &subset_ids, seed_base.wrapping_add(idx as u64))?;
                count += 1;
            }
            Ok(total / count as f64)
        }
        EstimationMode::MonteCarlo { samples } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed_base);
            let mut total = 0.0;
            for _ in 0..samples {
                let mut picked = rand::seq::index::sample(&mut rng, n, k as usize).into_vec();
                picked.sort_unstable();
                let subset_ids: Vec<&str> = picked.iter().map(|&i| ids[i]).collect();
                total += scorer.score(sample, &subset_ids, rng.gen::<u64>())?;
            }
            Ok(total / samples as f64)
        }
    }
}

/// Scan k = 0, 1, ... and return the first k whose expected accuracy
/// strictly exceeds the threshold. The scan stops at min(k_max, pool size);
/// if nothing qualifies the label is censored at k_max.
pub fn label_k_star<S: SubsetScorer + ?Sized>(
    scorer: &S,
    sample: &Sample,
    config: &SynthesisConfig,
) -> Result<KStarLabel, SynthesisError> {
    config.validate()?;
    let k_cap = config.k_max.min(sample.pool.len() as u32);
    let mut estimates = Vec::with_capacity(k_cap as usize + 1);
    for k in 0..=k_cap {
        let estimate = expected_accuracy(scorer, sample, k, config)?;
        estimates.push(estimate);
        if estimate > config.threshold {
            return Ok(KStarLabel {
                sample_id: sample.id.clone(),
                k_star: k,
                censored: false,
                estimate_at_k_star: estimate,
                estimates,
            });
        }
    }
    let last = estimates.last().copied().unwrap_or(0.0);
    Ok(KStarLabel {
        sample_id: sample.id.clone(),
        k_star: config.k_max,
        censored: true,
        estimate_at_k_star: last,
        estimates,
    })
}

/// Label a whole population and summarize the k* distribution. Samples are
/// labeled independently, so the work is striped across threads; results
/// stay in input order.
pub fn synthesize_dataset<S: SubsetScorer + ?Sized>(
    scorer: &S,
    samples: &[Sample],
    config: &SynthesisConfig,
) -> Result<SynthesisReport, SynthesisError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(SynthesisError::EmptyPopulation);
    }

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(samples.len());
    let mut striped: Vec<Vec<(usize, Result<KStarLabel, SynthesisError>)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        samples
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(workers)
                            .map(|(i, s)| (i, label_k_star(scorer, s, config)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("labeling worker panicked")).collect()
        });

    let mut slots: Vec<Option<Result<KStarLabel, SynthesisError>>> =
        (0..samples.len()).map(|_| None).collect();
    for stripe in striped.drain(..) {
        for (i, label) in stripe {
            slots[i] = Some(label);
        }
    }
    let labels = slots
        .into_iter()
        .map(|s| s.expect("stripe covered every index"))
        .collect::<Result<Vec<_>, _>>()?;

    let mut histogram = BTreeMap::new();
    let mut censored = 0;
    for label in &labels {
        if label.censored {
            censored += 1;
        } else {
            *histogram.entry(label.k_star).or_insert(0) += 1;
        }
    }
    Ok(SynthesisReport { labels, histogram, censored })
}

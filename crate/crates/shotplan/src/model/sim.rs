//! Deterministic stand-in for the generalist model.
//!
//! The simulator assigns every sample a closed-form probability of answering
//! correctly given which demonstrations are in the prompt, so expectations
//! over demonstration subsets can be verified by brute force. Sampling is a
//! pure function of the prompt text and seed: the RNG is keyed by a hash of
//! both, never by call order or wall clock.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Sample;
use crate::model::{GeneralistModel, ModelError};
use crate::prompt::{ModelOutput, PredictedLabel, PromptSpec};
use crate::tokenizer::Tokenizer;

/// Shape of one sample's response curve in shot count k:
/// a linear ramp that saturates at `saturation_k` and degrades past it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    /// Zero-shot correctness probability before clamping.
    pub base: f64,
    /// Probability gained by the time the ramp saturates, scaled by mean
    /// demonstration quality.
    pub strength: f64,
    /// Shot count at which extra demonstrations stop helping. Zero disables
    /// the gain term entirely.
    pub saturation_k: u32,
    /// Probability lost per shot beyond saturation.
    pub overload_penalty: f64,
}

impl Default for ResponseParams {
    fn default() -> Self {
        ResponseParams { base: 0.5, strength: 0.3, saturation_k: 4, overload_penalty: 0.05 }
    }
}

/// Full ground-truth response model for a population.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    /// Curve used for any sample without an override.
    pub defaults: ResponseParams,
    /// Quality assumed for demonstrations absent from `demo_quality`.
    pub default_quality: f64,
    /// Per-sample curve overrides, keyed by sample id.
    #[serde(default)]
    pub per_sample: BTreeMap<String, ResponseParams>,
    /// Per-demonstration quality in [0, 1], keyed by pool entry id.
    #[serde(default)]
    pub demo_quality: BTreeMap<String, f64>,
    pub max_context_tokens: u32,
    /// Mixed into the sampling hash so distinct simulators disagree.
    #[serde(default)]
    pub seed_salt: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            defaults: ResponseParams::default(),
            default_quality: 1.0,
            per_sample: BTreeMap::new(),
            demo_quality: BTreeMap::new(),
            max_context_tokens: 1 << 20,
            seed_salt: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct SampleInfo {
    label: String,
    difficulty: f64,
    params: ResponseParams,
    /// Pool entry id -> demonstration quality.
    quality: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    spec: SimSpec,
    samples: BTreeMap<String, SampleInfo>,
    label_set: Vec<String>,
}

impl Simulator {
    /// Index the population. Demonstration qualities come from
    /// `spec.demo_quality`, falling back to `spec.default_quality`; response
    /// curves come from `spec.per_sample`, falling back to `spec.defaults`.
    pub fn from_samples(spec: SimSpec, samples: &[Sample], label_set: &[String]) -> Simulator {
        let mut indexed = BTreeMap::new();
        for sample in samples {
            let quality = sample
                .pool
                .iter()
                .map(|entry| {
                    let q = spec.demo_quality.get(&entry.id).copied().unwrap_or(spec.default_quality);
                    (entry.id.clone(), q)
                })
                .collect();
            indexed.insert(
                sample.id.clone(),
                SampleInfo {
                    label: sample.label.clone(),
                    difficulty: sample.difficulty.unwrap_or(0.0),
                    params: spec.per_sample.get(&sample.id).copied().unwrap_or(spec.defaults),
                    quality,
                },
            );
        }
        Simulator { spec, samples: indexed, label_set: label_set.to_vec() }
    }

    pub fn spec(&self) -> &SimSpec {
        &self.spec
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    /// Resolved response curve for one sample.
    pub fn params_for(&self, sample_id: &str) -> Result<ResponseParams, ModelError> {
        self.info(sample_id).map(|info| info.params)
    }

    fn info(&self, sample_id: &str) -> Result<&SampleInfo, ModelError> {
        self.samples
            .get(sample_id)
            .ok_or_else(|| ModelError::UnknownSample(sample_id.to_string()))
    }

    /// Probability of a correct answer when exactly the given pool entries
    /// are in the prompt:
    ///
    /// clamp(base - difficulty
    ///       + strength * mean_quality * min(k, saturation_k) / saturation_k
    ///       - overload_penalty * max(0, k - saturation_k), 0, 1)
    ///
    /// with mean quality taken as 0 when k = 0 and the whole gain term 0
    /// when saturation_k = 0.
    pub fn correct_probability(&self, sample: &Sample, demo_ids: &[&str]) -> Result<f64, ModelError> {
        let info = self.info(&sample.id)?;
        self.probability_from_info(&sample.id, info, demo_ids)
    }

    fn probability_from_info(
        &self,
        sample_id: &str,
        info: &SampleInfo,
        demo_ids: &[&str],
    ) -> Result<f64, ModelError> {
        let k = demo_ids.len();
        let mut quality_sum = 0.0;
        for id in demo_ids {
            match info.quality.get(*id) {
                Some(q) => quality_sum += q,
                None => {
                    return Err(ModelError::UnknownDemo {
                        sample_id: sample_id.to_string(),
                        demo_id: (*id).to_string(),
                    })
                }
            }
        }
        let mean_quality = if k == 0 { 0.0 } else { quality_sum / k as f64 };

        let p = info.params;
        let gain = if p.saturation_k == 0 {
            0.0
        } else {
            let ramp = (k as f64).min(p.saturation_k as f64) / p.saturation_k as f64;
            p.strength * mean_quality * ramp
        };
        let excess = (k as f64 - p.saturation_k as f64).max(0.0);
        let raw = p.base - info.difficulty + gain - p.overload_penalty * excess;
        Ok(raw.clamp(0.0, 1.0))
    }

    fn rng_for(&self, prompt_text: &str, seed: u64) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.spec.seed_salt.to_le_bytes());
        hasher.update([0x1f]);
        hasher.update(prompt_text.as_bytes());
        hasher.update([0x1f]);
        hasher.update(seed.to_le_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        ChaCha20Rng::from_seed(digest)
    }
}

impl GeneralistModel for Simulator {
    fn max_context_tokens(&self) -> u32 {
        self.spec.max_context_tokens
    }

    /// Draw correct/incorrect from `correct_probability`, then emit the true
    /// label or a uniformly chosen wrong one.
    fn predict(&self, prompt: &PromptSpec, seed: u64) -> Result<ModelOutput, ModelError> {
        if prompt.total_tokens > self.spec.max_context_tokens {
            return Err(ModelError::ContextOverflow {
                tokens: prompt.total_tokens,
                max: self.spec.max_context_tokens,
            });
        }
        let info = self.info(&prompt.sample_id)?;
        let demo_ids: Vec<&str> = prompt.demos.iter().map(|d| d.source_id.as_str()).collect();
        let p = self.probability_from_info(&prompt.sample_id, info, &demo_ids)?;

        let mut rng = self.rng_for(&prompt.text, seed);
        let correct = rng.gen_range(0.0..1.0) < p;
        let (text, predicted_label) = if correct {
            (info.label.clone(), PredictedLabel::Label(info.label.clone()))
        } else {
            let wrong: Vec<&String> = self.label_set.iter().filter(|l| **l != info.label).collect();
            if wrong.is_empty() {
                ("?".to_string(), PredictedLabel::ParseFailure)
            } else {
                let pick = wrong[rng.gen_range(0..wrong.len())].clone();
                (pick.clone(), PredictedLabel::Label(pick))
            }
        };
        let reply_tokens = Tokenizer::Whitespace.count(&text).unwrap_or(1);
        Ok(ModelOutput {
            text,
            predicted_label,
            usage_tokens: prompt.total_tokens + reply_tokens,
        })
    }

    fn name(&self) -> &str {
        "simulator"
    }
}

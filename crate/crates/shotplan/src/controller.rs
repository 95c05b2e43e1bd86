//! The shot-count controller: a linear-softmax policy over feature vectors,
//! producing a distribution over k in 0..=k_max.
//!
//! Trained in two stages. Stage 1 fits the synthesized minimal shot counts
//! by maximum likelihood (full-batch gradient descent with backtracking so
//! the training cross-entropy never increases). Stage 2 fine-tunes by
//! REINFORCE against a reward that trades accuracy against shot spend.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::Sample;
use crate::features::FeatureVector;
use crate::synthesis::SubsetScorer;

pub const CHECKPOINT_MAGIC: &str = "shotplan.controller";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("feature vector has dimension {got}, controller expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight slice has length {got}, controller expects {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error("weights must be finite")]
    NonFiniteWeight,
    #[error("label {label} is outside 0..={k_max}")]
    LabelOutOfRange { label: u32, k_max: u32 },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("sample {sample_id:?} has a pool of {pool}, training needs at least k_max = {k_max}")]
    PoolTooSmall { sample_id: String, pool: usize, k_max: u32 },
    #[error("{samples} samples but {features} feature vectors")]
    MisalignedFeatures { samples: usize, features: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid JSON: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("checkpoint magic is {found:?}, expected {CHECKPOINT_MAGIC:?}")]
    BadMagic { found: String },
    #[error("checkpoint schema version {found} is unsupported, this build reads {CHECKPOINT_VERSION}")]
    UnsupportedVersion { found: u32 },
}

/// One completed training stage, for provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub stages: Vec<StageRecord>,
}

/// Policy weights plus everything needed to reuse them safely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    k_max: u32,
    feature_names: Vec<String>,
    /// Row-major (k_max + 1) x dim; row k holds the logit weights for k.
    weights: Vec<f64>,
    metadata: TrainingMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Deterministic; ties break toward the smaller (cheaper) k.
    Argmax,
    Sample { seed: u64 },
}

impl ControllerState {
    /// Fresh all-zero controller: every input gets the uniform distribution.
    pub fn new(k_max: u32, feature_names: &[String]) -> ControllerState {
        let dim = feature_names.len();
        ControllerState {
            k_max,
            feature_names: feature_names.to_vec(),
            weights: vec![0.0; (k_max as usize + 1) * dim],
            metadata: TrainingMetadata::default(),
        }
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn classes(&self) -> usize {
        self.k_max as usize + 1
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), ControllerError> {
        if weights.len() != self.weights.len() {
            return Err(ControllerError::WeightCount {
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ControllerError::NonFiniteWeight);
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    fn check_dim(&self, features: &FeatureVector) -> Result<(), ControllerError> {
        if features.dim() != self.dim() {
            return Err(ControllerError::DimensionMismatch {
                expected: self.dim(),
                got: features.dim(),
            });
        }
        Ok(())
    }

    fn logits(&self, features: &FeatureVector) -> Vec<f64> {
        let dim = self.dim();
        let x = features.values();
        (0..self.classes())
            .map(|k| {
                let row = &self.weights[k * dim..(k + 1) * dim];
                row.iter().zip(x).map(|(w, v)| w * v).sum()
            })
            .collect()
    }

    /// Softmax over per-class logits. Entries are nonnegative and sum to 1.
    pub fn predict_distribution(&self, features: &FeatureVector) -> Result<Vec<f64>, ControllerError> {
        self.check_dim(features)?;
        let logits = self.logits(features);
        Ok(softmax(&logits))
    }

    pub fn predict_k(&self, features: &FeatureVector, mode: PredictMode) -> Result<u32, ControllerError> {
        let dist = self.predict_distribution(features)?;
        Ok(match mode {
            PredictMode::Argmax => argmax_lowest(&dist),
            PredictMode::Sample { seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                sample_index(&dist, &mut rng)
            }
        })
    }

    /// Expected shot count under the policy, E[k].
    pub fn expected_k(&self, features: &FeatureVector) -> Result<f64, ControllerError> {
        let dist = self.predict_distribution(features)?;
        Ok(dist.iter().enumerate().map(|(k, p)| k as f64 * p).sum())
    }

    /// Gradient of log pi(k | features) with respect to the weights,
    /// row-major like the weights themselves.
    pub fn log_prob_gradient(&self, features: &FeatureVector, k: u32) -> Result<Vec<f64>, ControllerError> {
        self.check_dim(features)?;
        if k > self.k_max {
            return Err(ControllerError::LabelOutOfRange { label: k, k_max: self.k_max });
        }
        let dist = softmax(&self.logits(features));
        let dim = self.dim();
        let x = features.values();
        let mut grad = vec![0.0; self.weights.len()];
        for j in 0..self.classes() {
            let coeff = (if j as u32 == k { 1.0 } else { 0.0 }) - dist[j];
            for (d, xv) in x.iter().enumerate() {
                grad[j * dim + d] = coeff * xv;
            }
        }
        Ok(grad)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), ControllerError> {
        let file = Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            k_max: self.k_max,
            feature_dim: self.dim(),
            feature_names: self.feature_names.clone(),
            weights: self.weights.clone(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<ControllerState, ControllerError> {
        let text = fs::read_to_string(path)?;
        let envelope: Envelope = serde_json::from_str(&text)?;
        if envelope.magic != CHECKPOINT_MAGIC {
            return Err(ControllerError::BadMagic { found: envelope.magic });
        }
        if envelope.version != CHECKPOINT_VERSION {
            return Err(ControllerError::UnsupportedVersion { found: envelope.version });
        }
        let file: Checkpoint = serde_json::from_str(&text)?;
        let expected = (file.k_max as usize + 1) * file.feature_dim;
        if file.feature_names.len() != file.feature_dim || file.weights.len() != expected {
            return Err(ControllerError::WeightCount { expected, got: file.weights.len() });
        }
        if file.weights.iter().any(|w| !w.is_finite()) {
            return Err(ControllerError::NonFiniteWeight);
        }
        Ok(ControllerState {
            k_max: file.k_max,
            feature_names: file.feature_names,
            weights: file.weights,
            metadata: file.metadata,
        })
    }
}

/// Magic and version are checked before anything else is trusted.
#[derive(Debug, Deserialize)]
struct Envelope {
    #[serde(default)]
    magic: String,
    #[serde(default)]
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    version: u32,
    k_max: u32,
    feature_dim: usize,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    metadata: TrainingMetadata,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn argmax_lowest(dist: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, p) in dist.iter().enumerate().skip(1) {
        if *p > dist[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut cumulative = 0.0;
    for (i, p) in dist.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i as u32;
        }
    }
    dist.len() as u32 - 1
}

/// 16-hex-char digest of any serializable configuration value, stamped into
/// checkpoints and reports so outputs can be traced to the exact settings
/// that produced them.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

// ── Stage 1: maximum likelihood on synthesized labels ──────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    /// Allowed cross-entropy increase per epoch before the step is shrunk.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig { epochs: 400, learning_rate: 1.0, tolerance: 1e-12, seed: 0 }
    }
}

/// Mean training cross-entropy after each epoch; index 0 is the initial
/// state before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleTrace {
    pub cross_entropy: Vec<f64>,
}

fn mean_cross_entropy(state: &ControllerState, labeled: &[(FeatureVector, u32)]) -> f64 {
    let mut total = 0.0;
    for (features, label) in labeled {
        let dist = softmax(&state.logits(features));
        total -= dist[*label as usize].max(f64::MIN_POSITIVE).ln();
    }
    total / labeled.len() as f64
}

fn mle_gradient(state: &ControllerState, labeled: &[(FeatureVector, u32)]) -> Vec<f64> {
    let dim = state.dim();
    let mut grad = vec![0.0; state.weights.len()];
    for (features, label) in labeled {
        let dist = softmax(&state.logits(features));
        let x = features.values();
        for j in 0..state.classes() {
            let coeff = dist[j] - if j as u32 == *label { 1.0 } else { 0.0 };
            for (d, xv) in x.iter().enumerate() {
                grad[j * dim + d] += coeff * xv;
            }
        }
    }
    let n = labeled.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    grad
}

/// Full-batch gradient descent on mean cross-entropy. Each epoch backtracks
/// (halves the step) until the loss does not increase beyond the tolerance,
/// so the returned trace is nonincreasing. The input state is not mutated.
pub fn train_mle(
    state: &ControllerState,
    labeled: &[(FeatureVector, u32)],
    config: &MleConfig,
) -> Result<(ControllerState, MleTrace), ControllerError> {
    if labeled.is_empty() {
        return Err(ControllerError::EmptyTrainingSet);
    }
    if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
        return Err(ControllerError::BadConfig(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    for (features, label) in labeled {
        state.check_dim(features)?;
        if *label > state.k_max {
            return Err(ControllerError::LabelOutOfRange { label: *label, k_max: state.k_max });
        }
    }

    let mut trained = state.clone();
    let mut loss = mean_cross_entropy(&trained, labeled);
    let mut trace = MleTrace { cross_entropy: vec![loss] };

    for _ in 0..config.epochs {
        let grad = mle_gradient(&trained, labeled);
        let mut step = config.learning_rate;
        let mut candidate = trained.clone();
        for _ in 0..40 {
            for (w, (orig, g)) in candidate
                .weights
                .iter_mut()
                .zip(trained.weights.iter().zip(grad.iter()))
            {
                *w = orig - step * g;
            }
            let new_loss = mean_cross_entropy(&candidate, labeled);
            if new_loss <= loss + config.tolerance {
                loss = new_loss;
                break;
            }
            step *= 0.5;
        }
        trained.weights.copy_from_slice(&candidate.weights);
        trace.cross_entropy.push(loss);
    }

    trained.metadata.stages.push(StageRecord {
        stage: "mle".to_string(),
        seed: config.seed,
        config_hash: config_hash(config),
    });
    Ok((trained, trace))
}

// ── Stage 2: REINFORCE against the shot-cost reward ─────────────────────

/// Accuracy plus a signed per-shot term: acc + alpha * k. Negative alpha
/// penalizes shots; the sign is carried verbatim.
pub fn reward(accuracy_term: f64, k: u32, alpha: f64) -> f64 {
    accuracy_term + alpha * k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardEstimator {
    /// One 0/1 rollout per step. Works against any model.
    SingleRollout,
    /// Exact correctness probability per step. Simulator only; supply an
    /// analytic scorer.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    /// Per-shot reward weight, signed.
    pub alpha: f64,
    /// Moving-average decay for the baseline, in [0, 1).
    pub baseline_decay: f64,
    pub learning_rate: f64,
    pub iterations: u32,
    pub batch_size: u32,
    pub estimator: RewardEstimator,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            alpha: -0.02,
            baseline_decay: 0.99,
            learning_rate: 0.5,
            iterations: 2000,
            batch_size: 1,
            estimator: RewardEstimator::SingleRollout,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    /// Last k drawn within the step's batch.
    pub sampled_k: u32,
    /// Batch-mean reward.
    pub reward: f64,
    /// Baseline value after this step's update.
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTrace {
    pub steps: Vec<TraceStep>,
    /// Draws dropped because the scorer failed; they contribute nothing.
    pub skipped: u32,
}

/// Policy-gradient fine-tuning. Per step: draw a batch of (sample, k) pairs
/// from the current policy, score each k-shot prompt, average the reward,
/// update the baseline b <- decay * b + (1 - decay) * R, then ascend the
/// log-probability gradient scaled by (R - b). Scorer failures skip the
/// draw and are counted in the trace.
pub fn train_reinforce<S: SubsetScorer + ?Sized>(
    state: &ControllerState,
    samples: &[Sample],
    features: &[FeatureVector],
    scorer: &S,
    config: &RlConfig,
) -> Result<(ControllerState, RewardTrace), ControllerError> {
    if samples.is_empty() {
        return Err(ControllerError::EmptyTrainingSet);
    }
    if samples.len() != features.len() {
        return Err(ControllerError::MisalignedFeatures {
            samples: samples.len(),
            features: features.len(),
        });
    }
    if config.batch_size == 0 {
        return Err(ControllerError::BadConfig("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.baseline_decay) {
        return Err(ControllerError::BadConfig(format!(
            "baseline decay must lie in [0, 1), got {}",
            config.baseline_decay
        )));
    }
    if config.learning_rate < 0.0 || !config.learning_rate.is_finite() {
        return Err(ControllerError::BadConfig(format!(
            "learning rate must be nonnegative, got {}",
            config.learning_rate
        )));
    }
    for (sample, fv) in samples.iter().zip(features) {
        state.check_dim(fv)?;
        if sample.pool.len() < state.k_max as usize {
            return Err(ControllerError::PoolTooSmall {
                sample_id: sample.id.clone(),
                pool: sample.pool.len(),
                k_max: state.k_max,
            });
        }
    }

    let mut trained = state.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut baseline = 0.0;
    let mut trace = RewardTrace::default();

    for step in 0..config.iterations {
        // sum(grad_i * (R_i - b)) with b fixed after the batch equals
        // sum(grad_i * R_i) - b * sum(grad_i), so both sums are enough.
        let mut grad_reward_sum = vec![0.0; trained.weights.len()];
        let mut grad_sum = vec![0.0; trained.weights.len()];
        let mut reward_sum = 0.0;
        let mut used = 0u32;
        let mut last_k = 0u32;

        for _ in 0..config.batch_size {
            let idx = rng.gen_range(0..samples.len());
            let sample = &samples[idx];
            let fv = &features[idx];
            let dist = softmax(&trained.logits(fv));
            let k = sample_index(&dist, &mut rng);

            let picked = {
                let mut v = rand::seq::index::sample(&mut rng, sample.pool.len(), k as usize).into_vec();
                v.sort_unstable();
                v
            };
            let demo_ids: Vec<&str> = picked.iter().map(|&i| sample.pool[i].id.as_str()).collect();
            let rollout_seed = rng.gen::<u64>();
            let accuracy_term = match scorer.score(sample, &demo_ids, rollout_seed) {
                Ok(a) => a,
                Err(_) => {
                    trace.skipped += 1;
                    continue;
                }
            };
            let r = reward(accuracy_term, k, config.alpha);

            let dim = trained.dim();
            let x = fv.values();
            for j in 0..trained.classes() {
                let coeff = (if j as u32 == k { 1.0 } else { 0.0 }) - dist[j];
                for (d, xv) in x.iter().enumerate() {
                    grad_reward_sum[j * dim + d] += coeff * xv * r;
                    grad_sum[j * dim + d] += coeff * xv;
                }
            }
            reward_sum += r;
            used += 1;
            last_k = k;
        }

        if used == 0 {
            continue;
        }
        let mean_reward = reward_sum / used as f64;
        baseline = config.baseline_decay * baseline + (1.0 - config.baseline_decay) * mean_reward;

        trace.steps.push(TraceStep {
            step,
            sampled_k: last_k,
            reward: mean_reward,
            baseline,
        });

        let scale = config.learning_rate / used as f64;
        for ((w, gr), g) in trained.weights.iter_mut().zip(grad_reward_sum.iter()).zip(grad_sum.iter()) {
            *w += scale * (gr - baseline * g);
        }
    }

    trained.metadata.stages.push(StageRecord {
        stage: "reinforce".to_string(),
        seed: config.seed,
        config_hash: config_hash(config),
    });
    Ok((trained, trace))
}

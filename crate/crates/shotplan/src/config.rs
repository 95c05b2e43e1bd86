//! Run configuration: one TOML file wires data paths, the model backend,
//! training hyperparameters, and budgets into the pipeline commands.
//!
//! Precedence is flags over file values over built-in defaults. The
//! effective configuration (after overrides) is hashed with
//! [`crate::controller::config_hash`], and that digest is stamped into every
//! artifact a command writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocationPolicy, ReconcileMode};
use crate::controller::{config_hash, MleConfig, RlConfig};
use crate::harness::{PredictionSource, ScoreMode};
use crate::model::remote::RemoteModelConfig;
use crate::model::sim::SimSpec;
use crate::synthesis::SynthesisConfig;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("exactly one of [model.simulator] and [model.remote] must be set; found {0}")]
    ModelBackend(&'static str),
    #[error("{role} path does not exist: {path}")]
    MissingPath { role: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

/// Input and output locations. `checkpoint` is where `train` writes and the
/// dynamic policy reads; unlike the data inputs it may not exist yet when
/// the configuration is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub template: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

/// Model backend. Exactly one variant must be present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<SimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteModelConfig>,
}

fn default_beta() -> f64 {
    1.0
}

/// Token budget. `n` is the total budget over the whole dataset; the group
/// size K is always inferred from the dataset, never configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Total token budget N.
    pub n: u64,
    /// Average demonstration length L in tokens.
    pub l: f64,
    /// Budget scaling ratio, in [0, 1].
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub reconcile: ReconcileMode,
}

/// Evaluation settings: which policies to compare, over which sweep points,
/// averaged over which seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub policies: Vec<AllocationPolicy>,
    /// Sweep budget points as total token counts N. Empty means evaluate at
    /// [budget].n only.
    pub budgets: Vec<u64>,
    pub seeds: Vec<u64>,
    /// Spread of the random baseline as a fraction of the mean shot count.
    pub sigma_ratio: f64,
    pub score_mode: ScoreMode,
    pub prediction_source: PredictionSource,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            policies: vec![AllocationPolicy::Uniform, AllocationPolicy::Dynamic],
            budgets: Vec::new(),
            seeds: vec![1, 2, 3, 4, 5],
            sigma_ratio: 1.0 / 3.0,
            score_mode: ScoreMode::default(),
            prediction_source: PredictionSource::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    #[serde(default)]
    pub model: ModelSection,
    /// Token counting rule used for prompt budgets and features.
    #[serde(default)]
    pub tokenizer: Tokenizer,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub mle: MleConfig,
    #[serde(default)]
    pub rl: RlConfig,
    pub budget: BudgetSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses and validates a TOML file. The dataset and template paths must
    /// already exist; the checkpoint and output directory are products.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.model.simulator, &self.model.remote) {
            (Some(_), Some(_)) => return Err(ConfigError::ModelBackend("both")),
            (None, None) => return Err(ConfigError::ModelBackend("neither")),
            _ => {}
        }
        for (role, path) in [("dataset", &self.paths.dataset), ("template", &self.paths.template)] {
            if !path.exists() {
                return Err(ConfigError::MissingPath { role, path: path.clone() });
            }
        }
        if !(0.0..=1.0).contains(&self.budget.beta) {
            return Err(ConfigError::Invalid(format!(
                "budget beta must lie in [0, 1], got {}",
                self.budget.beta
            )));
        }
        if self.budget.l <= 0.0 || !self.budget.l.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "budget l must be a positive demonstration length, got {}",
                self.budget.l
            )));
        }
        if self.eval.seeds.is_empty() {
            return Err(ConfigError::Invalid("eval seeds must not be empty".into()));
        }
        if self.eval.policies.is_empty() {
            return Err(ConfigError::Invalid("eval policies must not be empty".into()));
        }
        Ok(())
    }

    /// Digest of the effective configuration; every artifact embeds it.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Applies the global `--seed` flag: one seed for every stage, and the
    /// evaluation seed list collapses to that single seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.synthesis.seed = seed;
        self.mle.seed = seed;
        self.rl.seed = seed;
        self.eval.seeds = vec![seed];
    }

    /// Applies the global `--out` flag.
    pub fn override_out_dir(&mut self, dir: PathBuf) {
        self.paths.out_dir = dir;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::EstimationMode;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn minimal_toml(dir: &Path) -> String {
        write_file(dir, "data.jsonl", "");
        write_file(dir, "template.json", "{}");
        format!(
            r#"
[paths]
dataset = "{dir}/data.jsonl"
template = "{dir}/template.json"
checkpoint = "{dir}/controller.json"
out_dir = "{dir}/out"

[model.simulator]

[budget]
n = 4000
l = 8.0
"#,
            dir = dir.display()
        )
    }

    #[test]
    fn minimal_file_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "run.toml", &minimal_toml(dir.path()));
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.tokenizer, Tokenizer::Whitespace);
        assert_eq!(config.synthesis.threshold, 0.5);
        assert_eq!(config.synthesis.k_max, 10);
        assert_eq!(config.synthesis.mode, EstimationMode::Exact);
        assert_eq!(config.mle.epochs, 400);
        assert_eq!(config.rl.alpha, -0.02);
        assert_eq!(config.rl.baseline_decay, 0.99);
        assert_eq!(config.budget.beta, 1.0);
        assert_eq!(config.budget.reconcile, ReconcileMode::None);
        assert_eq!(config.eval.seeds, vec![1, 2, 3, 4, 5]);
        assert!((config.eval.sigma_ratio - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn backend_must_be_exactly_one() {
        let dir = tempfile::tempdir().unwrap();
        let base = minimal_toml(dir.path());
        let both = format!(
            "{base}\n[model.remote]\nendpoint = \"http://localhost:1\"\nmodel = \"m\"\nauth_env = \"TOKEN\"\n"
        );
        let path = write_file(dir.path(), "both.toml", &both);
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::ModelBackend("both"))));

        let neither = base.replace("[model.simulator]\n", "");
        let path = write_file(dir.path(), "neither.toml", &neither);
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::ModelBackend("neither"))));
    }

    #[test]
    fn missing_dataset_path_is_reported_with_its_role() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal_toml(dir.path()).replace("data.jsonl", "absent.jsonl");
        let path = write_file(dir.path(), "run.toml", &text);
        match RunConfig::load(&path) {
            Err(ConfigError::MissingPath { role, .. }) => assert_eq!(role, "dataset"),
            other => panic!("expected missing path, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{}\n[extras]\nx = 1\n", minimal_toml(dir.path()));
        let path = write_file(dir.path(), "run.toml", &text);
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn hash_tracks_effective_settings() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "run.toml", &minimal_toml(dir.path()));
        let config = RunConfig::load(&path).unwrap();
        let reloaded = RunConfig::load(&path).unwrap();
        assert_eq!(config.hash(), reloaded.hash());
        assert_eq!(config.hash().len(), 16);

        let mut overridden = RunConfig::load(&path).unwrap();
        overridden.override_seed(99);
        assert_ne!(config.hash(), overridden.hash());
        assert_eq!(overridden.synthesis.seed, 99);
        assert_eq!(overridden.mle.seed, 99);
        assert_eq!(overridden.rl.seed, 99);
        assert_eq!(overridden.eval.seeds, vec![99]);
    }

    #[test]
    fn bad_budget_numbers_are_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal_toml(dir.path()).replace("l = 8.0", "l = 8.0\nbeta = 1.5");
        let path = write_file(dir.path(), "run.toml", &text);
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Invalid(_))));
    }
}

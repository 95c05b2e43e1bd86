//! Uniform interface to the generalist model being prompted.
//!
//! Two implementations: a deterministic [`sim::Simulator`] whose response
//! probabilities are known in closed form, and a [`remote::RemoteModel`]
//! speaking a completions-style HTTP protocol. Everything downstream works
//! against the [`GeneralistModel`] trait.

pub mod remote;
pub mod sim;

use thiserror::Error;

use crate::prompt::{ModelOutput, PromptSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prompt is {tokens} tokens but the model context holds {max}")]
    ContextOverflow { tokens: u32, max: u32 },
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("demonstration {demo_id:?} is not in the pool of sample {sample_id:?}")]
    UnknownDemo { sample_id: String, demo_id: String },
    #[error("auth token environment variable {var} is not set")]
    MissingAuth { var: String },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("transport failure after {attempts} attempt(s): {source}")]
    Transport {
        attempts: u32,
        #[source]
        source: reqwest::Error,
    },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unusable reply from endpoint: {0}")]
    BadReply(String),
}

impl ModelError {
    /// True for failures worth retrying: transport problems and 429/5xx.
    pub fn is_retryable(&self) -> bool {
        match self {
            ModelError::Transport { .. } => true,
            ModelError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait GeneralistModel: Sync {
    /// Largest prompt, in tokens, the model accepts.
    fn max_context_tokens(&self) -> u32;

    /// Run one prompt. For the simulator this is a pure function of the
    /// prompt text and seed.
    fn predict(&self, prompt: &PromptSpec, seed: u64) -> Result<ModelOutput, ModelError>;

    /// Upper bound on concurrent in-flight predictions.
    fn max_concurrency(&self) -> usize {
        8
    }

    fn name(&self) -> &str {
        "model"
    }
}

/// Run every prompt, at most `model.max_concurrency()` at a time. The result
/// vector is index-aligned with `prompts`; one failed call never disturbs its
/// neighbours.
pub fn batch_predict<M: GeneralistModel + ?Sized>(
    model: &M,
    prompts: &[PromptSpec],
    seed: u64,
) -> Vec<Result<ModelOutput, ModelError>> {
    let workers = model.max_concurrency().max(1).min(prompts.len().max(1));
    if workers <= 1 || prompts.len() <= 1 {
        return prompts.iter().map(|p| model.predict(p, seed)).collect();
    }

    let mut striped: Vec<Vec<(usize, Result<ModelOutput, ModelError>)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        prompts
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(workers)
                            .map(|(i, p)| (i, model.predict(p, seed)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("predict worker panicked")).collect()
        });

    let mut slots: Vec<Option<Result<ModelOutput, ModelError>>> =
        (0..prompts.len()).map(|_| None).collect();
    for stripe in striped.drain(..) {
        for (i, result) in stripe {
            slots[i] = Some(result);
        }
    }
    slots.into_iter().map(|s| s.expect("stripe covered every index")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PredictedLabel;

    struct ParityModel;

    impl GeneralistModel for ParityModel {
        fn max_context_tokens(&self) -> u32 {
            64
        }

        fn predict(&self, prompt: &PromptSpec, _seed: u64) -> Result<ModelOutput, ModelError> {
            if prompt.sample_id.ends_with('3') {
                return Err(ModelError::BadReply("stub failure".into()));
            }
            Ok(ModelOutput {
                text: prompt.sample_id.clone(),
                predicted_label: PredictedLabel::Label(prompt.sample_id.clone()),
                usage_tokens: prompt.total_tokens,
            })
        }

        fn max_concurrency(&self) -> usize {
            3
        }
    }

    fn prompt(id: &str) -> PromptSpec {
        PromptSpec {
            sample_id: id.to_string(),
            base: "b".into(),
            text: "b".into(),
            demos: vec![],
            base_tokens: 1,
            total_tokens: 1,
        }
    }

    #[test]
    fn batch_results_align_with_input_indices() {
        let prompts: Vec<PromptSpec> = (0..10).map(|i| prompt(&format!("s{i}"))).collect();
        let results = batch_predict(&ParityModel, &prompts, 7);
        assert_eq!(results.len(), 10);
        for (i, result) in results.iter().enumerate() {
            if i == 3 {
                assert!(result.is_err(), "index 3 must carry the failure");
            } else {
                assert_eq!(result.as_ref().unwrap().text, format!("s{i}"));
            }
        }
    }

    #[test]
    fn batch_handles_empty_and_singleton_input() {
        assert!(batch_predict(&ParityModel, &[], 0).is_empty());
        let one = batch_predict(&ParityModel, &[prompt("s0")], 0);
        assert_eq!(one.len(), 1);
        assert!(one[0].is_ok());
    }

    #[test]
    fn retryability_is_limited_to_transport_and_server_errors() {
        assert!(ModelError::Http { status: 429, body: String::new() }.is_retryable());
        assert!(ModelError::Http { status: 503, body: String::new() }.is_retryable());
        assert!(!ModelError::Http { status: 401, body: String::new() }.is_retryable());
        assert!(!ModelError::BadReply("x".into()).is_retryable());
    }
}

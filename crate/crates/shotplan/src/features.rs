//! Fixed-length numeric features summarizing a sample and its prompt cost.
//!
//! The controller is linear in these features, so they carry everything it
//! can know about an input: how long it is, how long its instruction is,
//! how large the label space is, how expensive its pool demonstrations are,
//! and how repetitive the input text is. A trailing bias term is always 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::prompt::{render_demonstration, PromptError, Template};
use crate::tokenizer::{Tokenizer, TokenizerError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature {feature:?} on sample {sample_id:?} is not finite: {value}")]
    NonFinite { feature: String, sample_id: String, value: f64 },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A dense feature row. Dimensionality is fixed by the [`FeatureSet`] that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

type Extractor = Box<dyn Fn(&Sample) -> Result<f64, FeatureError> + Send + Sync>;

/// An ordered, named collection of extractors. The order defines the
/// feature indices a trained controller depends on, so it must not change
/// between training and inference.
pub struct FeatureSet {
    names: Vec<String>,
    extractors: Vec<Extractor>,
}

impl FeatureSet {
    /// The six standard features: input tokens, instruction tokens,
    /// label-set size, mean rendered pool-demo tokens, type-token ratio of
    /// the input, bias.
    pub fn standard(tokenizer: Tokenizer, template: Template, label_set_size: usize) -> FeatureSet {
        let mut set = FeatureSet { names: Vec::new(), extractors: Vec::new() };

        let tok = tokenizer.clone();
        set.push("input_tokens", move |s: &Sample| Ok(tok.count(&s.input)? as f64));

        let tok = tokenizer.clone();
        set.push("instruction_tokens", move |s: &Sample| Ok(tok.count(&s.instruction)? as f64));

        set.push("label_set_size", move |_s: &Sample| Ok(label_set_size as f64));

        let tok = tokenizer.clone();
        set.push("mean_pool_demo_tokens", move |s: &Sample| {
            if s.pool.is_empty() {
                return Ok(0.0);
            }
            let mut total = 0u64;
            for entry in &s.pool {
                total += u64::from(render_demonstration(&template, entry, &tok)?.token_count);
            }
            Ok(total as f64 / s.pool.len() as f64)
        });

        set.push("type_token_ratio", |s: &Sample| {
            let words: Vec<&str> = s.input.split_whitespace().collect();
            if words.is_empty() {
                return Ok(0.0);
            }
            let distinct: std::collections::BTreeSet<&str> = words.iter().copied().collect();
            Ok(distinct.len() as f64 / words.len() as f64)
        });

        set.push("bias", |_s: &Sample| Ok(1.0));
        set
    }

    fn push(&mut self, name: &str, f: impl Fn(&Sample) -> Result<f64, FeatureError> + Send + Sync + 'static) {
        self.names.push(name.to_string());
        self.extractors.push(Box::new(f));
    }

    /// Append a custom extractor. Extend the set before any training run;
    /// a checkpoint records the names it was trained with.
    pub fn register(
        &mut self,
        name: &str,
        f: impl Fn(&Sample) -> Result<f64, FeatureError> + Send + Sync + 'static,
    ) {
        self.push(name, f);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.extractors.len()
    }

    pub fn extract(&self, sample: &Sample) -> Result<FeatureVector, FeatureError> {
        let mut values = Vec::with_capacity(self.extractors.len());
        for (name, extractor) in self.names.iter().zip(&self.extractors) {
            let value = extractor(sample)?;
            if !value.is_finite() {
                return Err(FeatureError::NonFinite {
                    feature: name.clone(),
                    sample_id: sample.id.clone(),
                    value,
                });
            }
            values.push(value);
        }
        Ok(FeatureVector { values })
    }

    pub fn extract_all(&self, samples: &[Sample]) -> Result<Vec<FeatureVector>, FeatureError> {
        samples.iter().map(|s| self.extract(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PoolEntry;

    fn sample() -> Sample {
        Sample {
            id: "s0".into(),
            instruction: "Answer yes or no.".into(),
            input: "the cat saw the cat".into(),
            label: "yes".into(),
            pool: vec![
                PoolEntry { id: "s0#0".into(), input: "a b".into(), label: "yes".into() },
                PoolEntry { id: "s0#1".into(), input: "c d e f".into(), label: "no".into() },
            ],
            difficulty: None,
        }
    }

    fn standard() -> FeatureSet {
        FeatureSet::standard(
            Tokenizer::Whitespace,
            Template::new("{x} {y}", "\n").unwrap(),
            2,
        )
    }

    #[test]
    fn standard_features_match_hand_counts() {
        let set = standard();
        let fv = set.extract(&sample()).unwrap();
        // demos render as "a b yes" (3) and "c d e f no" (5); mean 4.
        // input has 5 words, 3 distinct.
        assert_eq!(fv.values(), &[5.0, 4.0, 2.0, 4.0, 0.6, 1.0]);
        assert_eq!(set.names()[5], "bias");
        assert_eq!(set.dim(), fv.dim());
    }

    #[test]
    fn empty_input_zeroes_token_features_but_keeps_bias() {
        let set = standard();
        let mut s = sample();
        s.input = String::new();
        s.instruction = String::new();
        s.pool.clear();
        let fv = set.extract(&s).unwrap();
        assert_eq!(fv.values(), &[0.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn registered_extractors_extend_the_vector() {
        let mut set = standard();
        set.register("pool_size", |s| Ok(s.pool.len() as f64));
        let fv = set.extract(&sample()).unwrap();
        assert_eq!(fv.dim(), 7);
        assert_eq!(fv.values()[6], 2.0);
        assert_eq!(set.names()[6], "pool_size");
    }

    #[test]
    fn non_finite_features_are_rejected_by_name() {
        let mut set = standard();
        set.register("broken", |_| Ok(f64::NAN));
        let err = set.extract(&sample()).unwrap_err();
        assert!(matches!(err, FeatureError::NonFinite { ref feature, .. } if feature == "broken"));
    }
}

//! Deterministic synthetic populations for tests and runnable examples.
//!
//! Two generators cover the two training stages. [`banded_population`] lays
//! out feature vectors whose minimal sufficient shot count is a noiseless
//! step function of a linear score, so a softmax policy must recover the
//! labels almost perfectly. [`mixed_difficulty_population`] builds a
//! simulator-backed dataset in which input length predicts how many
//! demonstrations a sample needs, so budget-aware allocation has something
//! real to exploit.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{Dataset, PoolEntry, Sample};
use crate::features::FeatureVector;
use crate::model::sim::{ResponseParams, SimSpec};

/// Feature-space population with noiseless shot-count labels.
#[derive(Debug, Clone)]
pub struct BandedPopulation {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<u32>,
    pub feature_names: Vec<String>,
    /// Largest label; suitable as the policy's k_max.
    pub k_max: u32,
}

/// (score range, label) bands. The gaps between ranges are the margins that
/// keep the classes linearly separable.
const SCORE_BANDS: [(f64, f64, u32); 3] = [(0.0, 1.2, 0), (1.6, 2.8, 2), (3.2, 4.4, 5)];
const SCORE_WEIGHTS: (f64, f64) = (0.8, 0.6);

/// Draws `n` vectors `[a, b, 1]` whose score `0.8a + 0.6b` falls inside one
/// of three disjoint bands, labeled with that band's shot count.
pub fn banded_population(n: usize, seed: u64) -> BandedPopulation {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (lo, hi, k_star) = SCORE_BANDS[rng.gen_range(0..SCORE_BANDS.len())];
        let score = rng.gen_range(lo..hi);
        let share = rng.gen_range(0.25..0.75);
        features.push(FeatureVector::new(vec![
            share * score / SCORE_WEIGHTS.0,
            (1.0 - share) * score / SCORE_WEIGHTS.1,
            1.0,
        ]));
        labels.push(k_star);
    }
    BandedPopulation {
        features,
        labels,
        feature_names: vec!["signal_a".into(), "signal_b".into(), "bias".into()],
        k_max: SCORE_BANDS.iter().map(|band| band.2).max().unwrap_or(0),
    }
}

const VOCAB: [&str; 16] = [
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "iris", "juniper",
    "krill", "lagoon", "meadow", "nectar", "onyx", "pylon",
];

fn filler_text(rng: &mut ChaCha20Rng, words: usize) -> String {
    (0..words).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn coin_label(rng: &mut ChaCha20Rng) -> String {
    if rng.gen_bool(0.5) { "yes".into() } else { "no".into() }
}

/// Simulator-backed dataset whose samples need very different shot counts.
///
/// Half the samples answer well zero-shot and saturate after one
/// demonstration, three tenths ramp quickly over four, and the rest ramp
/// slowly up to ten. Input length is banded by class, so token-count
/// features carry the class signal without exposing the ground truth. Every
/// class shares a small overload penalty, which makes over-allocation
/// measurably harmful rather than merely wasteful.
pub fn mixed_difficulty_population(n: usize, pool_size: usize, seed: u64) -> (Dataset, SimSpec) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut per_sample = BTreeMap::new();
    let easy = n / 2;
    let medium = n * 3 / 10;
    for index in 0..n {
        let (prefix, params, word_range) = if index < easy {
            let strength = rng.gen_range(0.02..0.04);
            ("easy", ResponseParams { base: 0.9, strength, saturation_k: 1, overload_penalty: 0.02 }, 4..=7)
        } else if index < easy + medium {
            ("med", ResponseParams { base: 0.5, strength: 0.45, saturation_k: 4, overload_penalty: 0.02 }, 10..=16)
        } else {
            let strength = rng.gen_range(0.76..0.79);
            ("hard", ResponseParams { base: 0.2, strength, saturation_k: 10, overload_penalty: 0.02 }, 22..=32)
        };
        let id = format!("{prefix}-{index:03}");
        let words = rng.gen_range(word_range);
        let input = filler_text(&mut rng, words);
        let label = coin_label(&mut rng);
        // Pool entries are shorter than any sample input, so the loader's
        // pool-contains-self check can never trip.
        let pool = (0..pool_size)
            .map(|i| {
                let len = rng.gen_range(2..=3);
                let entry_input = filler_text(&mut rng, len);
                PoolEntry {
                    id: format!("{id}#{i}"),
                    input: entry_input,
                    label: coin_label(&mut rng),
                }
            })
            .collect();
        per_sample.insert(id.clone(), params);
        samples.push(Sample {
            id,
            instruction: "Answer yes or no.".into(),
            input,
            label,
            pool,
            difficulty: None,
        });
    }
    let spec = SimSpec { defaults: ResponseParams::default(), per_sample, seed_salt: seed, ..SimSpec::default() };
    let dataset = Dataset::new(samples).expect("generated ids are unique and pools are shorter than inputs");
    (dataset, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sim::Simulator;
    use crate::synthesis::{label_k_star, AnalyticScorer, SynthesisConfig};

    #[test]
    fn banded_labels_are_a_noiseless_function_of_the_score() {
        let pop = banded_population(500, 7);
        assert_eq!(pop.features.len(), 500);
        assert_eq!(pop.k_max, 5);
        for (x, &label) in pop.features.iter().zip(&pop.labels) {
            let v = x.values();
            let score = SCORE_WEIGHTS.0 * v[0] + SCORE_WEIGHTS.1 * v[1];
            let band = SCORE_BANDS
                .iter()
                .find(|(lo, hi, _)| score >= *lo - 1e-9 && score < *hi + 1e-9)
                .expect("score must land inside a band");
            assert_eq!(label, band.2);
            assert_eq!(v[2], 1.0);
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = banded_population(40, 3);
        let b = banded_population(40, 3);
        assert_eq!(a.labels, b.labels);
        assert_eq!(
            a.features.iter().map(|f| f.values().to_vec()).collect::<Vec<_>>(),
            b.features.iter().map(|f| f.values().to_vec()).collect::<Vec<_>>()
        );
        let (da, _) = mixed_difficulty_population(30, 6, 11);
        let (db, _) = mixed_difficulty_population(30, 6, 11);
        assert_eq!(da.samples(), db.samples());
        let (dc, _) = mixed_difficulty_population(30, 6, 12);
        assert_ne!(da.samples(), dc.samples());
    }

    #[test]
    fn mixture_classes_have_the_designed_minimal_shot_counts() {
        let (data, spec) = mixed_difficulty_population(20, 12, 5);
        let sim = Simulator::from_samples(spec, data.samples(), data.label_set());
        let scorer = AnalyticScorer::new(&sim);
        let config = SynthesisConfig { threshold: 0.5, k_max: 6, ..SynthesisConfig::default() };
        for sample in data.samples() {
            let label = label_k_star(&scorer, sample, &config).unwrap();
            let expected = match &sample.id[..1] {
                "e" => 0,
                "m" => 1,
                _ => 4,
            };
            assert_eq!(label.k_star, expected, "sample {}", sample.id);
            assert!(!label.censored);
        }
    }

    #[test]
    fn mixture_input_length_bands_track_the_class() {
        let (data, _) = mixed_difficulty_population(100, 4, 9);
        for sample in data.samples() {
            let words = sample.input.split_whitespace().count();
            match &sample.id[..1] {
                "e" => assert!((4..=7).contains(&words)),
                "m" => assert!((10..=16).contains(&words)),
                _ => assert!((22..=32).contains(&words)),
            }
            assert!(sample.pool.iter().all(|p| p.input.split_whitespace().count() < 4));
        }
    }
}

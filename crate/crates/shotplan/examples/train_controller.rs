//! Two-stage training of the shot-count controller.
//!
//! Stage one fits a softmax policy to synthesized k* labels by maximum
//! likelihood. Stage two fine-tunes the same weights with REINFORCE against
//! a reward that pays for accuracy and charges per shot, which lets the
//! policy trade label fidelity for token thrift.

use shotplan::controller::{
    train_mle, train_reinforce, ControllerState, MleConfig, PredictMode, RewardEstimator, RlConfig,
};
use shotplan::features::FeatureSet;
use shotplan::model::sim::Simulator;
use shotplan::prompt::Template;
use shotplan::synthesis::{synthesize_dataset, AnalyticScorer, SynthesisConfig};
use shotplan::synthetic::{banded_population, mixed_difficulty_population};
use shotplan::tokenizer::Tokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Stage one in isolation: a population whose label is a noiseless
    // function of the features, so MLE should recover it almost exactly.
    let population = banded_population(400, 13);
    let (train, holdout) = (&population, 320);
    let labeled: Vec<_> = train.features[..holdout]
        .iter()
        .cloned()
        .zip(train.labels[..holdout].iter().copied())
        .collect();

    let fresh = ControllerState::new(population.k_max, &population.feature_names);
    let (fitted, trace) = train_mle(&fresh, &labeled, &MleConfig::default())?;
    println!(
        "mle: cross-entropy {:.4} -> {:.4} over {} epochs",
        trace.cross_entropy.first().unwrap(),
        trace.cross_entropy.last().unwrap(),
        trace.cross_entropy.len() - 1
    );

    let agree = train.features[holdout..]
        .iter()
        .zip(&train.labels[holdout..])
        .filter(|(fv, label)| fitted.predict_k(fv, PredictMode::Argmax).unwrap() == **label)
        .count();
    println!("holdout argmax agreement: {agree}/{}", train.features.len() - holdout);

    // The full two-stage pipeline on a simulated population.
    let (dataset, spec) = mixed_difficulty_population(90, 12, 21);
    let sim = Simulator::from_samples(spec, dataset.samples(), dataset.label_set());
    let scorer = AnalyticScorer::new(&sim);
    let synth = SynthesisConfig { k_max: 8, ..SynthesisConfig::default() };
    let report = synthesize_dataset(&scorer, dataset.samples(), &synth)?;

    let template = Template::new("Input: {x}\nAnswer: {y}", "\n\n")?;
    let features = FeatureSet::standard(Tokenizer::Whitespace, template, dataset.label_set().len());
    let vectors = features.extract_all(dataset.samples())?;
    let labeled: Vec<_> = vectors
        .iter()
        .cloned()
        .zip(report.labels.iter().map(|l| l.k_star))
        .collect();

    let state = ControllerState::new(synth.k_max, features.names());
    let (after_mle, _) = train_mle(&state, &labeled, &MleConfig::default())?;

    // REINFORCE with the exact reward estimator. The learning rate is small
    // because the token-count features are large; hot steps overshoot.
    let rl = RlConfig {
        alpha: -0.02,
        learning_rate: 0.01,
        batch_size: 8,
        iterations: 1500,
        estimator: RewardEstimator::Expected,
        seed: 3,
        ..RlConfig::default()
    };
    let (after_rl, rewards) = train_reinforce(&after_mle, dataset.samples(), &vectors, &scorer, &rl)?;

    let first = &rewards.steps[0];
    let last = rewards.steps.last().unwrap();
    println!(
        "\nreinforce: reward {:.3} (baseline {:.3}) -> {:.3} (baseline {:.3}), {} skipped",
        first.reward, first.baseline, last.reward, last.baseline, rewards.skipped
    );

    // What the fine-tuning changed, sample by sample.
    let mut moved = 0;
    for (sample, fv) in dataset.samples().iter().zip(&vectors) {
        let before = after_mle.predict_k(fv, PredictMode::Argmax)?;
        let after = after_rl.predict_k(fv, PredictMode::Argmax)?;
        if before != after {
            moved += 1;
            if moved <= 5 {
                println!("  {}: k {} -> {}", sample.id, before, after);
            }
        }
    }
    println!("argmax changed on {moved}/{} samples", dataset.len());
    Ok(())
}

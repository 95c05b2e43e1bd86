//! Accuracy versus token spend, measured across allocation policies.
//!
//! Sweeps a budget grid and compares uniform, random, dynamic, and oracle
//! allocation under the exact same token ceiling at every point. The
//! matched pairs at the end answer the practical question: how many tokens
//! does the dynamic policy need to match each uniform accuracy?

use shotplan::allocation::{AllocationPolicy, Budget};
use shotplan::controller::{
    train_mle, train_reinforce, ControllerState, MleConfig, RewardEstimator, RlConfig,
};
use shotplan::features::FeatureSet;
use shotplan::harness::{sweep_tradeoff, SweepOptions};
use shotplan::model::sim::Simulator;
use shotplan::prompt::Template;
use shotplan::synthesis::{synthesize_dataset, AnalyticScorer, SynthesisConfig};
use shotplan::synthetic::mixed_difficulty_population;
use shotplan::tokenizer::Tokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (dataset, spec) = mixed_difficulty_population(80, 12, 2026);
    let sim = Simulator::from_samples(spec, dataset.samples(), dataset.label_set());
    let scorer = AnalyticScorer::new(&sim);
    let template = Template::new("Input: {x}\nAnswer: {y}", "\n\n")?;
    let tokenizer = Tokenizer::Whitespace;

    // Train the controller: synthesized k* labels, MLE, then REINFORCE.
    let synth = SynthesisConfig { k_max: 10, ..SynthesisConfig::default() };
    let report = synthesize_dataset(&scorer, dataset.samples(), &synth)?;
    let features = FeatureSet::standard(tokenizer.clone(), template.clone(), dataset.label_set().len());
    let vectors = features.extract_all(dataset.samples())?;
    let labeled: Vec<_> = vectors
        .iter()
        .cloned()
        .zip(report.labels.iter().map(|l| l.k_star))
        .collect();
    let state = ControllerState::new(synth.k_max, features.names());
    let (state, _) = train_mle(&state, &labeled, &MleConfig::default())?;
    let rl = RlConfig {
        alpha: -0.02,
        learning_rate: 0.01,
        batch_size: 8,
        iterations: 1500,
        estimator: RewardEstimator::Expected,
        seed: 5,
        ..RlConfig::default()
    };
    let (state, _) = train_reinforce(&state, dataset.samples(), &vectors, &scorer, &rl)?;

    // Budget points at 1, 2, 5, and 10 mean shots per sample.
    let l = 3.5;
    let k = dataset.len() as u32;
    let budgets: Vec<Budget> = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|shots| Budget::new((shots * k as f64 * l) as u64, k, l, 1.0))
        .collect::<Result<_, _>>()?;

    let policies = [
        AllocationPolicy::Uniform,
        AllocationPolicy::Random,
        AllocationPolicy::Dynamic,
        AllocationPolicy::Oracle,
    ];
    let options = SweepOptions { k_max: synth.k_max, ..SweepOptions::default() };
    let curve = sweep_tradeoff(
        &sim,
        &dataset,
        &template,
        &tokenizer,
        Some((&state, &features)),
        &budgets,
        &policies,
        &[1, 2, 3],
        &options,
    )?;

    println!("policy   budget_tokens  accuracy (sd)     demo_tokens_used");
    for point in &curve.points {
        println!(
            "{:<8} {:>13.0}  {:.3} ({:.3})     {:>10.1}",
            format!("{:?}", point.policy).to_lowercase(),
            point.effective_tokens,
            point.mean_accuracy,
            point.sd_accuracy,
            point.mean_tokens_used
        );
    }

    println!("\nmatched accuracy, token for token:");
    for pair in &curve.matched_pairs {
        let saved = 100.0 * (1.0 - pair.dynamic_tokens / pair.uniform_tokens);
        println!(
            "  accuracy {:.3}: uniform {:>7.1} tokens, dynamic {:>7.1} ({saved:+.1}% saved)",
            pair.accuracy, pair.uniform_tokens, pair.dynamic_tokens
        );
    }
    Ok(())
}

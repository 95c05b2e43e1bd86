//! The whole pipeline through the command layer, as the binary runs it:
//! synth -> train mle -> train rl -> allocate -> eval -> report.
//!
//! Everything the binary can do is a library call on a [`RunConfig`]. This
//! example builds a workspace in a temporary directory, runs all five
//! commands, and reads the artifacts back.

use std::fs;

use shotplan::allocation::{AllocationPolicy, ReconcileMode};
use shotplan::commands::{cmd_allocate, cmd_eval, cmd_report, cmd_synth, cmd_train, TrainStage};
use shotplan::config::{BudgetSection, EvalSection, ModelSection, PathsSection, RunConfig};
use shotplan::controller::{ControllerState, MleConfig, RewardEstimator, RlConfig};
use shotplan::prompt::Template;
use shotplan::synthesis::SynthesisConfig;
use shotplan::synthetic::mixed_difficulty_population;
use shotplan::tokenizer::Tokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::TempDir::new()?;
    let (dataset, sim) = mixed_difficulty_population(60, 12, 11);
    dataset.to_jsonl_path(dir.path().join("dataset.jsonl"))?;
    let template = Template::new("Input: {x}\nAnswer: {y}", "\n\n")?;
    fs::write(dir.path().join("template.json"), serde_json::to_string_pretty(&template)?)?;

    let config = RunConfig {
        paths: PathsSection {
            dataset: dir.path().join("dataset.jsonl"),
            template: dir.path().join("template.json"),
            checkpoint: dir.path().join("controller.json"),
            out_dir: dir.path().join("out"),
        },
        model: ModelSection { simulator: Some(sim), remote: None },
        tokenizer: Tokenizer::Whitespace,
        synthesis: SynthesisConfig { k_max: 8, ..SynthesisConfig::default() },
        mle: MleConfig::default(),
        rl: RlConfig {
            alpha: -0.02,
            learning_rate: 0.01,
            batch_size: 8,
            iterations: 1000,
            estimator: RewardEstimator::Expected,
            seed: 5,
            ..RlConfig::default()
        },
        budget: BudgetSection { n: 420, l: 3.5, beta: 1.0, reconcile: ReconcileMode::TrimLargestRemainder },
        eval: EvalSection { seeds: vec![1, 2, 3], ..EvalSection::default() },
    };
    println!("config hash {} stamps every artifact\n", config.hash());

    // The same sequence `shotplan synth && shotplan train mle && ...` runs.
    for paths in [
        cmd_synth(&config)?,
        cmd_train(&config, TrainStage::Mle, false)?,
        cmd_train(&config, TrainStage::Rl, false)?,
        cmd_allocate(&config, AllocationPolicy::Dynamic)?,
        cmd_eval(&config)?,
        cmd_report(&config)?,
    ] {
        for path in paths {
            println!("wrote {}", path.display());
        }
    }

    // The checkpoint records both training stages in order.
    let controller = ControllerState::load(&config.paths.checkpoint)?;
    let stages: Vec<_> = controller.metadata().stages.iter().map(|s| s.stage.as_str()).collect();
    println!("\ncheckpoint stages: {stages:?}");

    // Per-policy reports carry the evaluation the binary prints tables from.
    let out = config.paths.out_dir.as_path();
    for policy in ["uniform", "dynamic"] {
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("report_{policy}.json")))?)?;
        println!(
            "{policy:<8} accuracy {:.3}, demo tokens {}",
            report["accuracy"].as_f64().unwrap(),
            report["tokens_used"]
        );
    }

    let flips: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("flips.json"))?)?;
    println!(
        "uniform -> dynamic flips: {:.3} fixed, {:.3} broken, net {:+.4}",
        flips["flips"]["wrong_to_right"].as_f64().unwrap(),
        flips["flips"]["right_to_wrong"].as_f64().unwrap(),
        flips["flips"]["acc_delta"].as_f64().unwrap()
    );
    println!("\nartifacts left in {}", out.display());
    Ok(())
}

//! The deterministic simulator and its closed-form response curve.
//!
//! The simulator answers prompts like a hosted model, but its probability of
//! being correct is a known function of how many demonstrations the prompt
//! carries and how good they are. That makes every expectation in training
//! and evaluation checkable by brute force.

use std::collections::BTreeMap;

use shotplan::data::{PoolEntry, Sample};
use shotplan::model::sim::{ResponseParams, SimSpec, Simulator};
use shotplan::model::GeneralistModel;
use shotplan::prompt::{build_prompt, DemoPlacement, PredictedLabel, Template};
use shotplan::tokenizer::Tokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sample = Sample {
        id: "q0".into(),
        instruction: String::new(),
        input: "is the stove still on".into(),
        label: "yes".into(),
        pool: (0..6)
            .map(|i| PoolEntry {
                id: format!("q0#{i}"),
                input: format!("question {i}"),
                label: if i % 2 == 0 { "yes".into() } else { "no".into() },
            })
            .collect(),
        difficulty: Some(0.1),
    };

    // Correctness probability:
    //   p = clamp(base - difficulty + strength * qbar * min(k, sat) / sat
    //             - overload * max(0, k - sat), 0, 1)
    // where qbar is the mean quality of the chosen demonstrations. Gains
    // saturate at `saturation_k` shots; every shot past it costs
    // `overload_penalty`.
    let spec = SimSpec {
        defaults: ResponseParams {
            base: 0.45,
            strength: 0.4,
            saturation_k: 3,
            overload_penalty: 0.05,
        },
        demo_quality: BTreeMap::from([("q0#1".to_string(), 0.2)]),
        ..SimSpec::default()
    };
    let sim = Simulator::from_samples(spec, std::slice::from_ref(&sample), &["no".into(), "yes".into()]);

    println!("k  demos                    p(correct)");
    let ids: Vec<&str> = sample.pool.iter().map(|e| e.id.as_str()).collect();
    for k in 0..=6 {
        let chosen = &ids[..k];
        let p = sim.correct_probability(&sample, chosen)?;
        println!("{k}  {:<24} {p:.4}", format!("{chosen:?}"));
    }

    // The model-facing side: a prompt in, a label out. The reply is a pure
    // function of the prompt text and the seed, so reruns are identical.
    let template = Template::new("Q: {x}\nA: {y}", "\n\n")?;
    let tokenizer = Tokenizer::Whitespace;
    let entries: Vec<_> = sample.pool.iter().take(3).collect();
    let prompt = build_prompt(&sample, &entries, &template, &tokenizer, DemoPlacement::BeforeBase)?;

    let once = sim.predict(&prompt, 41)?;
    let again = sim.predict(&prompt, 41)?;
    assert_eq!(once, again);
    println!("\nseed 41 replies {:?} both times", once.text);

    // Across seeds the empirical hit rate converges on the closed form.
    let p = sim.correct_probability(&sample, &ids[..3])?;
    let trials = 4000;
    let hits = (0..trials)
        .filter(|seed| {
            let output = sim.predict(&prompt, *seed).expect("prompt fits");
            output.predicted_label == PredictedLabel::Label(sample.label.clone())
        })
        .count();
    let observed = hits as f64 / trials as f64;
    println!("closed form p = {p:.4}, observed over {trials} seeds = {observed:.4}");
    assert!((observed - p).abs() < 0.03);
    Ok(())
}

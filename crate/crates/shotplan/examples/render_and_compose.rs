//! Templates, demonstrations, and prompt composition.
//!
//! Builds a two-shot prompt by hand, then the same prompt through
//! [`build_prompt`], and shows the token accounting that every budget
//! decision downstream rests on.

use shotplan::data::{PoolEntry, Sample};
use shotplan::prompt::{
    build_prompt, compose_prompt, render_demonstration, DemoPlacement, Template,
};
use shotplan::tokenizer::Tokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let template = Template::new("Review: {x}\nSentiment: {y}", "\n\n")?;
    let tokenizer = Tokenizer::Whitespace;

    let sample = Sample {
        id: "review-7".into(),
        instruction: String::new(),
        input: "the plot wanders but the cast holds it together".into(),
        label: "positive".into(),
        pool: vec![
            PoolEntry { id: "review-7#0".into(), input: "a joyless slog".into(), label: "negative".into() },
            PoolEntry { id: "review-7#1".into(), input: "sharp and funny throughout".into(), label: "positive".into() },
            PoolEntry { id: "review-7#2".into(), input: "forgettable".into(), label: "negative".into() },
        ],
        difficulty: None,
    };

    // Each demonstration is one pool pair pushed through the template.
    let demos: Vec<_> = sample.pool[..2]
        .iter()
        .map(|entry| render_demonstration(&template, entry, &tokenizer))
        .collect::<Result<_, _>>()?;
    for demo in &demos {
        println!("demo {} ({} tokens):\n{}\n", demo.source_id, demo.token_count, demo.text);
    }

    // The task body is the bare instruction-plus-input text; only the
    // demonstrations go through the template.
    let base = sample.base_text();
    let prompt = compose_prompt(&sample.id, &base, demos, &template, &tokenizer)?;
    println!("composed prompt:\n---\n{}\n---", prompt.text);
    println!(
        "base {} + demos {} = total {} tokens",
        prompt.base_tokens,
        prompt.demo_tokens(),
        prompt.total_tokens
    );

    // total_tokens = base + sum(demo tokens) + one separator per demo.
    let separator = tokenizer.count(template.separator())?;
    let demo_sum: u32 = prompt.demos.iter().map(|d| d.token_count).sum();
    assert_eq!(prompt.total_tokens, prompt.base_tokens + demo_sum + separator * prompt.demos.len() as u32);

    // build_prompt fuses both steps; placement decides which side of the
    // task body the demonstrations land on.
    let entries: Vec<_> = sample.pool.iter().take(2).collect();
    let before = build_prompt(&sample, &entries, &template, &tokenizer, DemoPlacement::BeforeBase)?;
    let after = build_prompt(&sample, &entries, &template, &tokenizer, DemoPlacement::AfterBase)?;
    assert_eq!(before.text, prompt.text);
    assert_eq!(before.total_tokens, after.total_tokens);
    println!("\nafter-base placement moves text, not cost:\n---\n{}\n---", after.text);

    // A coarser tokenizer changes every count consistently.
    let chars = Tokenizer::CharsPerToken(4.0);
    let coarse = build_prompt(&sample, &entries, &template, &chars, DemoPlacement::BeforeBase)?;
    println!("\nwhitespace counts {} tokens, chars/4 counts {}", before.total_tokens, coarse.total_tokens);
    Ok(())
}

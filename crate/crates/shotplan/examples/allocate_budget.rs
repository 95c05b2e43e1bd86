//! Turning per-sample predictions into a budgeted shot plan.
//!
//! The dynamic allocator scales each prediction by the budget so that the
//! population mean lands on the per-sample average the budget allows:
//!   counts_i = round(beta * (pred_i / mean_pred) * N / (K * L)).
//! Rounding can leave the plan a few shots over; reconciliation trims it
//! back under beta * N.

use std::collections::BTreeMap;

use shotplan::allocation::{
    allocate_dynamic, allocate_uniform, reconcile_budget, Budget, ReconcileMode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // N = 300 tokens over K = 3 samples at L = 20 tokens per demonstration:
    // an average of 5 shots each.
    let budget = Budget::new(300, 3, 20.0, 1.0)?;
    println!(
        "budget: N={} K={} L={} beta={} -> {:.1} shots per sample on average",
        300, 3, 20.0, 1.0,
        budget.per_sample_shots()
    );

    let uniform = allocate_uniform(&budget, &["a".into(), "b".into(), "c".into()]);
    println!("uniform plan: {:?}", uniform.counts);

    // Predictions 2, 4, 6 average 4, so each is scaled by 5/4.
    let predictions = BTreeMap::from([
        ("a".to_string(), 2.0),
        ("b".to_string(), 4.0),
        ("c".to_string(), 6.0),
    ]);
    let dynamic = allocate_dynamic(&predictions, &budget, 10)?;
    println!("dynamic plan:  {:?}", dynamic.counts);
    assert_eq!(
        dynamic.counts.values().copied().collect::<Vec<_>>(),
        vec![3, 5, 8],
        "2,4,6 scaled to a 5-shot average round to 3,5,8"
    );

    // The scaling is invariant to the predictions' units: only ratios matter.
    let doubled: BTreeMap<_, _> = predictions.iter().map(|(id, p)| (id.clone(), p * 2.0)).collect();
    assert_eq!(allocate_dynamic(&doubled, &budget, 10)?.counts, dynamic.counts);

    // Rounding pushed the plan to 16 shots = 320 tokens against a 300-token
    // budget. Trimming removes shots, smallest fractional remainder first,
    // until the plan fits.
    let spent = |counts: &BTreeMap<String, u32>| {
        counts.values().map(|c| *c as f64 * 20.0).sum::<f64>()
    };
    println!(
        "\nrounded plan spends {} tokens against beta*N = {}",
        spent(&dynamic.counts),
        budget.effective_tokens()
    );
    let trimmed = reconcile_budget(&dynamic, &budget, ReconcileMode::TrimLargestRemainder);
    println!("trimmed plan:  {:?} spends {}", trimmed.counts, spent(&trimmed.counts));
    assert!(spent(&trimmed.counts) <= budget.effective_tokens());

    // k_max caps every count; a tight cap reallocates nothing, it clamps.
    let capped = allocate_dynamic(&predictions, &budget, 6)?;
    println!("\nwith k_max=6:  {:?}", capped.counts);

    // A half-budget run (beta = 0.5) halves the average, not the ratios.
    let half = Budget::new(300, 3, 20.0, 0.5)?;
    println!("beta=0.5 plan: {:?}", allocate_dynamic(&predictions, &half, 10)?.counts);
    Ok(())
}

//! Brute-force enumerator, independent of the library's synthesis path.
//!
//! Subsets are enumerated by walking the bit patterns of a counter and the
//! response probability is recomputed inline, so nothing here shares code
//! with the implementation it is checking.

#[derive(Debug, Clone)]
pub struct BruteParams {
    pub base: f64,
    pub strength: f64,
    pub saturation_k: u32,
    pub overload_penalty: f64,
    pub qualities: Vec<f64>,
}

fn probability(params: &BruteParams, subset_bits: u64) -> f64 {
    let k = subset_bits.count_ones();
    let mut quality_sum = 0.0;
    for (i, q) in params.qualities.iter().enumerate() {
        if subset_bits & (1 << i) != 0 {
            quality_sum += q;
        }
    }
    let mean_quality = if k == 0 { 0.0 } else { quality_sum / k as f64 };
    let gain = if params.saturation_k == 0 {
        0.0
    } else {
        params.strength * mean_quality * (k.min(params.saturation_k) as f64)
            / params.saturation_k as f64
    };
    let overload = params.overload_penalty * k.saturating_sub(params.saturation_k) as f64;
    (params.base + gain - overload).clamp(0.0, 1.0)
}

/// Mean response probability over every size-k subset of the pool.
pub fn brute_force_expected_accuracy(params: &BruteParams, k: u32) -> f64 {
    let n = params.qualities.len();
    assert!(n <= 20, "brute-force oracle is for small pools");
    let mut total = 0.0;
    let mut count = 0u64;
    for bits in 0u64..(1 << n) {
        if bits.count_ones() == k {
            total += probability(params, bits);
            count += 1;
        }
    }
    total / count as f64
}

/// Smallest k in [0, k_max] whose expected accuracy strictly exceeds t,
/// censored at k_max when none qualifies.
pub fn brute_force_k_star(params: &BruteParams, t: f64, k_max: u32) -> (u32, bool) {
    let pool = params.qualities.len() as u32;
    for k in 0..=k_max.min(pool) {
        if brute_force_expected_accuracy(params, k) > t {
            return (k, false);
        }
    }
    (k_max, true)
}

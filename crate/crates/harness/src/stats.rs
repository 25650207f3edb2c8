//! Cross-seed aggregation and target subsampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mean and standard error (sample std / √n). A single value has zero error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Trailing running average; the first entries average what is available.
pub fn running_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            let slice = &values[start..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Uniform sample of `m` entries of `full` without replacement, in the
/// order of `full`.
pub fn subsample_targets(full: &[usize], m: usize, seed: u64) -> Vec<usize> {
    if m >= full.len() {
        return full.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, full.len(), m).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|p| full[p]).collect()
}

/// Deterministic per-(seed, stream, round) seed for auxiliary generators.
pub fn derive_seed(seed: u64, stream: u64, round: u64) -> u64 {
    let mut x = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ round.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^= x >> 33;
    x
}

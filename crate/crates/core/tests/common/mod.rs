#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use transductive::{FiniteDomain, GaussianBelief, Kernel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, m: usize, d: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..d).map(|_| rng.gen_range(-spread..spread)).collect()).collect()
}

/// Gaussian-kernel prior on random points with a random mean.
pub fn random_belief(rng: &mut ChaCha8Rng, m: usize, d: usize) -> (FiniteDomain, GaussianBelief) {
    let pts = random_points(rng, m, d, 2.0);
    let domain = FiniteDomain::from_points(&pts).unwrap();
    let ell = rng.gen_range(0.5..2.0);
    let mut belief = GaussianBelief::prior(&domain, &Kernel::gaussian(ell), |_| 0.0).unwrap();
    let mean = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    belief = GaussianBelief::new(mean, belief.cov().clone()).unwrap();
    (domain, belief)
}

/// `Σ` of a belief conditioned on noisy observations, through an explicit
/// inverse rather than a factorization.
pub fn brute_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    idx: &[usize],
    values: &[f64],
    noise: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let m = cov.nrows();
    let n = idx.len();
    let kxx = DMatrix::from_fn(n, n, |i, j| cov[(idx[i], idx[j])] + if i == j { noise[i] } else { 0.0 });
    let inv = kxx.try_inverse().expect("invertible");
    let kmx = DMatrix::from_fn(m, n, |i, j| cov[(i, idx[j])]);
    let resid = DVector::from_fn(n, |i, _| values[i] - mean[idx[i]]);
    let post_mean = mean + &kmx * &inv * resid;
    let post_cov = cov - &kmx * &inv * kmx.transpose();
    (post_mean, post_cov)
}

/// `½ log det(K_XX + P) − ½ log det(K_XX|A + P)` via LU determinants.
pub fn brute_information(cov: &DMatrix<f64>, a: &[usize], x: &[usize], noise: &[f64]) -> f64 {
    let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| cov[(r[i], c[j])]);
    let kaa_inv = sub(a, a).try_inverse().expect("invertible target block");
    let mut prior = sub(x, x);
    let mut post = &prior - sub(x, a) * kaa_inv * sub(a, x);
    for i in 0..x.len() {
        prior[(i, i)] += noise[i];
        post[(i, i)] += noise[i];
    }
    0.5 * (prior.determinant().ln() - post.determinant().ln())
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

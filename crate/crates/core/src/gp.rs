//! Exact joint-Gaussian beliefs over a finite domain.
//!
//! A [`GaussianBelief`] holds the mean vector and full covariance matrix of
//! `f` at every domain point. Conditioning is closed-form; the covariance
//! depends only on where observations were taken, never on their values, so
//! location-only updates are exact for the covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::linalg::{self, Factor};

const LN_2PI_E: f64 = 2.837_877_066_409_345_5; // ln(2πe)

#[derive(Debug, Clone, PartialEq)]
enum PointStore {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

/// Indexed universe of points. Index `i` is the identity of a point.
///
/// Coordinates are stored flat; embedding tables may be stored in single
/// precision to keep large files at four bytes per value.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDomain {
    dim: usize,
    store: PointStore,
    embedding: bool,
}

impl FiniteDomain {
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().ok_or(Error::Empty("domain"))?.len();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat)
    }

    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() {
            return Err(Error::Empty("domain"));
        }
        if values.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len() % dim,
            });
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { position });
        }
        Ok(FiniteDomain {
            dim,
            store: PointStore::F64(values),
            embedding: false,
        })
    }

    /// Embedding-mode domain backed by single-precision storage.
    pub fn from_embeddings(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || values.is_empty() {
            return Err(Error::Empty("domain"));
        }
        if values.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len() % dim,
            });
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { position });
        }
        Ok(FiniteDomain {
            dim,
            store: PointStore::F32(values),
            embedding: true,
        })
    }

    /// Regular grid over the box `[lower, upper]` with `resolution` points per
    /// axis. The first axis varies slowest.
    pub fn grid(lower: &[f64], upper: &[f64], resolution: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() || resolution == 0 {
            return Err(Error::Empty("grid"));
        }
        let dim = lower.len();
        let axis = |d: usize, i: usize| {
            if resolution == 1 {
                0.5 * (lower[d] + upper[d])
            } else {
                lower[d] + (upper[d] - lower[d]) * i as f64 / (resolution - 1) as f64
            }
        };
        let total = resolution.pow(dim as u32);
        let mut flat = Vec::with_capacity(total * dim);
        for idx in 0..total {
            let mut rem = idx;
            let mut coords = vec![0.0; dim];
            for d in (0..dim).rev() {
                coords[d] = axis(d, rem % resolution);
                rem /= resolution;
            }
            flat.extend_from_slice(&coords);
        }
        Self::from_flat(dim, flat)
    }

    pub fn len(&self) -> usize {
        match &self.store {
            PointStore::F64(v) => v.len() / self.dim,
            PointStore::F32(v) => v.len() / self.dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_embedding(&self) -> bool {
        self.embedding
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let r = i * self.dim..(i + 1) * self.dim;
        match &self.store {
            PointStore::F64(v) => v[r].to_vec(),
            PointStore::F32(v) => v[r].iter().map(|x| *x as f64).collect(),
        }
    }

    /// Single-precision view of the raw table, when stored that way.
    pub fn raw_f32(&self) -> Option<&[f32]> {
        match &self.store {
            PointStore::F32(v) => Some(v),
            PointStore::F64(_) => None,
        }
    }

    pub fn points(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices
            .iter()
            .map(|&i| {
                check_index(i, self.len())?;
                Ok(self.point(i))
            })
            .collect()
    }

    pub fn all_points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Indices whose coordinates lie in the closed box `[lower, upper]`.
    pub fn indices_in_box(&self, lower: &[f64], upper: &[f64]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let p = self.point(i);
                p.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(x, (lo, hi))| *x >= *lo - 1e-12 && *x <= *hi + 1e-12)
            })
            .collect()
    }
}

/// Per-point observation-noise variance `ρ²(x)`, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    variances: Vec<f64>,
}

impl NoiseModel {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::Empty("noise model"));
        }
        for (index, &value) in variances.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidNoise { index, value });
            }
        }
        Ok(NoiseModel { variances })
    }

    pub fn homoscedastic(size: usize, variance: f64) -> Result<Self> {
        Self::new(vec![variance; size.max(1)])
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn variance(&self, index: usize) -> f64 {
        self.variances[index]
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.variances.iter().map(|v| v * factor).collect())
    }
}

/// A noisy observation `y = f(x) + ε` at domain index `index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub value: f64,
    pub noise_var: f64,
}

impl Observation {
    pub fn new(index: usize, value: f64, noise_var: f64) -> Self {
        Observation {
            index,
            value,
            noise_var,
        }
    }

    /// Observation with the noise variance taken from `noise`.
    pub fn with_noise(index: usize, value: f64, noise: &NoiseModel) -> Self {
        Observation::new(index, value, noise.variance(index))
    }
}

/// Joint Gaussian over `f` at all domain points.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("belief"));
        }
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        if let Some(position) = mean.iter().chain(cov.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { position });
        }
        let mut cov = cov;
        linalg::symmetrize_in_place(&mut cov);
        Ok(GaussianBelief { mean, cov })
    }

    /// Prior with `mean[i] = mean_fn(points[i])` and the kernel matrix of the
    /// domain as covariance.
    pub fn prior<F>(domain: &FiniteDomain, kernel: &Kernel, mean_fn: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let points = domain.all_points();
        let cov = kernel.gram(&points)?;
        let mean = DVector::from_iterator(points.len(), points.iter().map(|p| mean_fn(p)));
        Self::new(mean, cov)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.cov[(i, i)]
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.cov[(i, i)]).collect()
    }

    pub fn std(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0).sqrt()
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)]
    }

    pub fn sub_cov(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        linalg::submatrix(&self.cov, rows, cols)
    }

    /// Belief with every covariance entry multiplied by `factor`.
    pub fn with_scaled_cov(&self, factor: f64) -> Result<Self> {
        Self::new(self.mean.clone(), &self.cov * factor)
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        indices.iter().try_for_each(|&i| check_index(i, self.len()))
    }

    /// Posterior after the given noisy observations (repeats allowed).
    pub fn condition(&self, obs: &[Observation]) -> Result<Self> {
        if obs.is_empty() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = obs.iter().map(|o| o.index).collect();
        self.check_indices(&idx)?;
        validate_noise(obs.iter().map(|o| (o.index, o.noise_var)))?;
        let noise: Vec<f64> = obs.iter().map(|o| o.noise_var).collect();
        let factor = self.factor_observed(&idx, &noise)?;

        let residual = DVector::from_iterator(
            obs.len(),
            obs.iter().map(|o| o.value - self.mean[o.index]),
        );
        let alpha = factor.solve_vec(&residual);
        let k_xm = linalg::submatrix(&self.cov, &idx, &(0..self.len()).collect::<Vec<_>>());
        let mean = &self.mean + k_xm.transpose() * alpha;
        let cov = downdate(&self.cov, k_xm, &factor);
        Ok(GaussianBelief { mean, cov })
    }

    /// Covariance-only conditioning on observation locations with the given
    /// noise variances. The mean is left unchanged.
    pub fn condition_on_locations(&self, locations: &[(usize, f64)]) -> Result<Self> {
        if locations.is_empty() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = locations.iter().map(|l| l.0).collect();
        self.check_indices(&idx)?;
        validate_noise(locations.iter().copied())?;
        let noise: Vec<f64> = locations.iter().map(|l| l.1).collect();
        let factor = self.factor_observed(&idx, &noise)?;
        let k_xm = linalg::submatrix(&self.cov, &idx, &(0..self.len()).collect::<Vec<_>>());
        let cov = downdate(&self.cov, k_xm, &factor);
        Ok(GaussianBelief {
            mean: self.mean.clone(),
            cov,
        })
    }

    /// Covariance of `f` given the exact values `f_given` (jittered
    /// pseudo-solve). The mean is left unchanged.
    pub fn condition_noiseless(&self, given: &[usize]) -> Result<Self> {
        if given.is_empty() {
            return Ok(self.clone());
        }
        self.check_indices(given)?;
        let k_gg = self.sub_cov(given, given);
        let factor = linalg::cholesky_regularized(&k_gg, linalg::NOISELESS_JITTER)?;
        let k_gm = linalg::submatrix(&self.cov, given, &(0..self.len()).collect::<Vec<_>>());
        let cov = downdate(&self.cov, k_gm, &factor);
        Ok(GaussianBelief {
            mean: self.mean.clone(),
            cov,
        })
    }

    fn factor_observed(&self, idx: &[usize], noise: &[f64]) -> Result<Factor> {
        let mut k = self.sub_cov(idx, idx);
        for (i, v) in noise.iter().enumerate() {
            k[(i, i)] += v;
        }
        linalg::cholesky(&k)
    }

    /// Single-observation covariance update
    /// `K ← K − K[:,j] K[j,:] / (K[j,j] + ρ²)`; mean unchanged.
    pub fn rank_one_condition(&self, index: usize, noise_var: f64) -> Result<Self> {
        let mut next = self.clone();
        next.rank_one_update(index, noise_var, None)?;
        Ok(next)
    }

    /// In-place single-observation update. When `value` is given the mean is
    /// updated as well.
    pub fn rank_one_update(&mut self, index: usize, noise_var: f64, value: Option<f64>) -> Result<()> {
        check_index(index, self.len())?;
        let denom = self.cov[(index, index)] + noise_var;
        if !(denom > 0.0 && denom.is_finite()) {
            return Err(Error::InvalidNoise {
                index,
                value: noise_var,
            });
        }
        let col = self.cov.column(index).clone_owned();
        if let Some(y) = value {
            let gain = (y - self.mean[index]) / denom;
            self.mean.axpy(gain, &col, 1.0);
        }
        let w = col / denom.sqrt();
        self.cov.ger(-1.0, &w, &w, 1.0);
        for i in 0..self.len() {
            if self.cov[(i, i)] < 0.0 {
                self.cov[(i, i)] = 0.0;
            }
        }
        Ok(())
    }

    /// Differential entropy of `f_A`.
    pub fn entropy(&self, a: &[usize]) -> Result<f64> {
        if a.is_empty() {
            return Err(Error::Empty("target set"));
        }
        self.check_indices(a)?;
        let factor = linalg::cholesky(&self.sub_cov(a, a))?;
        Ok(0.5 * a.len() as f64 * LN_2PI_E + 0.5 * factor.log_det())
    }

    /// `I(f_A; y_X)` for noisy observations `y_X` (repeats in `X` are
    /// independent observations).
    pub fn mutual_information(&self, a: &[usize], x: &[usize], noise: &NoiseModel) -> Result<f64> {
        if a.is_empty() {
            return Err(Error::Empty("target set"));
        }
        if x.is_empty() {
            return Err(Error::Empty("observation set"));
        }
        self.check_indices(a)?;
        self.check_indices(x)?;
        let mut k_xx = self.sub_cov(x, x);
        let k_aa = self.sub_cov(a, a);
        let fa = linalg::cholesky(&k_aa)?;
        let mut w = self.sub_cov(a, x);
        fa.solve_lower_mut(&mut w);
        let mut cond = &k_xx - w.transpose() * &w;
        for (i, &xi) in x.iter().enumerate() {
            k_xx[(i, i)] += noise.variance(xi);
            cond[(i, i)] += noise.variance(xi);
        }
        linalg::symmetrize_in_place(&mut cond);
        let prior = linalg::cholesky(&k_xx)?.log_det();
        let post = linalg::cholesky(&cond)?.log_det();
        Ok((0.5 * (prior - post)).max(0.0))
    }

    /// `count` joint draws of `f` at `indices` from this belief.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        if indices.is_empty() {
            return Ok(vec![DVector::zeros(0); count]);
        }
        self.check_indices(indices)?;
        let mean = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.mean[i]));
        let k = self.sub_cov(indices, indices);
        if k.iter().all(|v| *v == 0.0) {
            return Ok(vec![mean; count]);
        }
        let l = linalg::cholesky(&k)?.l();
        Ok((0..count)
            .map(|_| {
                let z = DVector::from_iterator(
                    indices.len(),
                    (0..indices.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                &mean + &l * z
            })
            .collect())
    }
}

/// Draws from `N(mean, L Lᵀ)` for a precomputed lower factor.
pub fn sample_with_factor<R: Rng + ?Sized>(mean: &DVector<f64>, l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    mean + l * z
}

/// `cov − K_{·X} (K_XX + P)⁻¹ K_{X·}` given `k_xm = K_{X·}` and the factor of
/// `K_XX + P`.
fn downdate(cov: &DMatrix<f64>, mut k_xm: DMatrix<f64>, factor: &Factor) -> DMatrix<f64> {
    factor.solve_lower_mut(&mut k_xm);
    let mut out = cov - k_xm.transpose() * &k_xm;
    linalg::symmetrize_in_place(&mut out);
    for i in 0..out.nrows() {
        if out[(i, i)] < 0.0 {
            out[(i, i)] = 0.0;
        }
    }
    out
}

fn validate_noise(items: impl Iterator<Item = (usize, f64)>) -> Result<()> {
    for (index, value) in items {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidNoise { index, value });
        }
    }
    Ok(())
}

pub(crate) fn check_index(index: usize, size: usize) -> Result<()> {
    if index >= size {
        Err(Error::IndexOutOfRange { index, size })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(cov: &[f64], n: usize) -> GaussianBelief {
        GaussianBelief::new(DVector::zeros(n), DMatrix::from_row_slice(n, n, cov)).unwrap()
    }

    #[test]
    fn prior_mean_function_is_evaluated_per_point() {
        let domain = FiniteDomain::grid(&[0.0], &[2.0], 3).unwrap();
        let b = GaussianBelief::prior(&domain, &Kernel::gaussian(1.0), |x| 0.1 * x[0]).unwrap();
        let m: Vec<f64> = b.mean().iter().copied().collect();
        assert!((m[0] - 0.0).abs() < 1e-15 && (m[1] - 0.1).abs() < 1e-15 && (m[2] - 0.2).abs() < 1e-15);
        assert!(b.variances().iter().all(|v| *v == 1.0));
        let zero = GaussianBelief::prior(&domain, &Kernel::gaussian(1.0), |_| 0.0).unwrap();
        assert!(zero.mean().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grid_ordering_first_axis_slowest() {
        let g = FiniteDomain::grid(&[0.0, 10.0], &[1.0, 11.0], 2).unwrap();
        assert_eq!(g.all_points(), vec![vec![0.0, 10.0], vec![0.0, 11.0], vec![1.0, 10.0], vec![1.0, 11.0]]);
        assert_eq!(g.indices_in_box(&[0.5, 9.0], &[2.0, 12.0]), vec![2, 3]);
    }

    #[test]
    fn empty_condition_is_identity() {
        let b = belief(&[1.0, 0.5, 0.5, 1.0], 2);
        assert_eq!(b.condition(&[]).unwrap(), b);
    }

    #[test]
    fn scalar_bayes_update() {
        let b = belief(&[1.0], 1);
        let post = b.condition(&[Observation::new(0, 2.0, 1.0)]).unwrap();
        assert!((post.mean()[0] - 1.0).abs() < 1e-15);
        assert!((post.variance(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn schur_reduction_on_correlated_pair() {
        let rho2 = 0.3;
        let b = belief(&[1.0, 0.9, 0.9, 1.0], 2);
        let post = b.condition_on_locations(&[(0, rho2)]).unwrap();
        let expected = 1.0 - 0.81 / (1.0 + rho2);
        assert!((post.variance(1) - expected).abs() < 1e-14);
    }

    #[test]
    fn rank_one_on_uncorrelated_index_touches_only_that_variance() {
        let b = belief(&[1.0, 0.0, 0.0, 0.0, 2.0, 0.3, 0.0, 0.3, 1.5], 3);
        let post = b.rank_one_condition(0, 1.0).unwrap();
        assert!((post.variance(0) - 0.5).abs() < 1e-15);
        assert_eq!(post.variance(1), 2.0);
        assert_eq!(post.variance(2), 1.5);
        assert_eq!(post.covariance(1, 2), 0.3);
    }

    #[test]
    fn rank_one_rejects_bad_index() {
        let b = belief(&[1.0], 1);
        assert!(matches!(b.rank_one_condition(3, 1.0), Err(Error::IndexOutOfRange { index: 3, size: 1 })));
    }

    #[test]
    fn entropy_values() {
        let b = belief(&[1.0, 0.0, 0.0, 1.0], 2);
        let h1 = b.entropy(&[0]).unwrap();
        assert!((h1 - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!((b.entropy(&[0, 1]).unwrap() - 2.0 * h1).abs() < 1e-12);
        assert!(b.entropy(&[]).is_err());
    }

    #[test]
    fn scalar_mutual_information() {
        let b = belief(&[1.0], 1);
        let noise = NoiseModel::homoscedastic(1, 1.0).unwrap();
        let mi = b.mutual_information(&[0], &[0], &noise).unwrap();
        assert!((mi - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_of_independent_blocks_is_zero() {
        let b = belief(&[1.0, 0.0, 0.0, 2.0], 2);
        let noise = NoiseModel::homoscedastic(2, 0.1).unwrap();
        assert!(b.mutual_information(&[0], &[1], &noise).unwrap().abs() < 1e-10);
    }

    #[test]
    fn noise_model_validation() {
        assert!(matches!(NoiseModel::new(vec![1.0, 0.0]), Err(Error::InvalidNoise { index: 1, .. })));
        assert!(NoiseModel::new(vec![]).is_err());
        let b = belief(&[1.0], 1);
        assert!(b.condition(&[Observation::new(0, 1.0, -1.0)]).is_err());
    }

    #[test]
    fn singular_conditioning_reports_error() {
        let b = belief(&[1.0, 2.0, 2.0, 1.0], 2);
        let err = b.condition(&[Observation::new(0, 0.0, 1e-9), Observation::new(1, 0.0, 1e-9)]);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn noiseless_conditioning_zeroes_observed_variance() {
        let b = belief(&[1.0, 0.6, 0.6, 1.0], 2);
        let post = b.condition_noiseless(&[0]).unwrap();
        assert!(post.variance(0).abs() < 1e-8);
        assert!((post.variance(1) - 0.64).abs() < 1e-8);
    }

    #[test]
    fn embedding_domain_keeps_single_precision() {
        let d = FiniteDomain::from_embeddings(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(d.is_embedding());
        assert_eq!(d.len(), 2);
        assert_eq!(d.raw_f32().unwrap().len(), 4);
        assert_eq!(d.point(1), vec![0.0, 1.0]);
        assert!(FiniteDomain::from_embeddings(2, vec![1.0, f32::NAN]).is_err());
    }
}

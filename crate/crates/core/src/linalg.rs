//! Dense linear-algebra helpers shared by the GP engine and the decision rules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative jitter levels tried after a plain factorization fails. Each level
/// adds `lambda * trace(K) / m` to the diagonal.
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Relative jitter used when conditioning on noise-free function values.
pub const NOISELESS_JITTER: f64 = 1e-10;

/// Cholesky factor together with the absolute jitter that was needed.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Absolute diagonal jitter that was added before factorizing.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// log det, as twice the sum of the log-diagonal of L.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solves `L x = b` in place (forward substitution only).
    pub fn solve_lower_mut(&self, b: &mut DMatrix<f64>) {
        self.chol.l_dirty().solve_lower_triangular_mut(b);
    }

    pub fn solve_lower_vec(&self, b: &mut DVector<f64>) {
        self.chol.l_dirty().solve_lower_triangular_mut(b);
    }
}

fn mean_diagonal(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1);
    m.trace() / n as f64
}

fn try_factor(m: &DMatrix<f64>, jitter: f64) -> Option<Factor> {
    let mut a = m.clone();
    if jitter > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
    }
    Cholesky::new(a).map(|chol| Factor { chol, jitter })
}

/// Ratio of extreme eigenvalue magnitudes; only computed on failure paths.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky with escalating jitter: plain first, then each rung of
/// [`JITTER_LADDER`]. Fails with a condition estimate if every rung fails.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Factor> {
    if let Some(f) = try_factor(m, 0.0) {
        return Ok(f);
    }
    let scale = mean_diagonal(m);
    if scale > 0.0 && scale.is_finite() {
        for lambda in JITTER_LADDER {
            if let Some(f) = try_factor(m, lambda * scale) {
                return Ok(f);
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        size: m.nrows(),
        condition: condition_estimate(m),
    })
}

/// Cholesky with a fixed relative jitter (`lambda * trace / m`), escalating
/// through the ladder only if that still fails.
pub fn cholesky_regularized(m: &DMatrix<f64>, lambda: f64) -> Result<Factor> {
    let scale = mean_diagonal(m);
    if let Some(f) = try_factor(m, lambda * scale) {
        return Ok(f);
    }
    for rung in JITTER_LADDER.into_iter().filter(|r| *r > lambda) {
        if let Some(f) = try_factor(m, rung * scale) {
            return Ok(f);
        }
    }
    Err(Error::NotPositiveDefinite {
        size: m.nrows(),
        condition: condition_estimate(m),
    })
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Rows `rows` and columns `cols` of `m`, in the given order (repeats allowed).
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

//! Covariance functions and kernel-matrix construction.
//!
//! Stationary kernels measure distance with a fixed metric per variant:
//! Euclidean for Gaussian and Matérn, ℓ₁ for Laplace. The embedding kernel
//! treats each point as a feature vector `φ(x)` and returns `φ(x)ᵀ Σ φ(x')`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smoothness of a Matérn kernel. Only the closed-form half-integer cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn from_value(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(MaternNu::Half),
            v if v == 1.5 => Ok(MaternNu::ThreeHalves),
            v if v == 2.5 => Ok(MaternNu::FiveHalves),
            v => Err(Error::InvalidKernel(format!(
                "matern nu must be one of 0.5, 1.5, 2.5 (got {v})"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    Gaussian { lengthscale: f64 },
    Laplace { lengthscale: f64 },
    Matern { nu: MaternNu, lengthscale: f64 },
    Linear,
    /// `φ(x)ᵀ Σ φ(x')`; `Σ = I` when `sigma` is `None`.
    Embedding { sigma: Option<DMatrix<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub output_scale: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, output_scale: f64) -> Result<Self> {
        let k = Kernel { kind, output_scale };
        k.validate()?;
        Ok(k)
    }

    pub fn gaussian(lengthscale: f64) -> Self {
        Kernel {
            kind: KernelKind::Gaussian { lengthscale },
            output_scale: 1.0,
        }
    }

    pub fn laplace(lengthscale: f64) -> Self {
        Kernel {
            kind: KernelKind::Laplace { lengthscale },
            output_scale: 1.0,
        }
    }

    pub fn matern(nu: MaternNu, lengthscale: f64) -> Self {
        Kernel {
            kind: KernelKind::Matern { nu, lengthscale },
            output_scale: 1.0,
        }
    }

    pub fn linear() -> Self {
        Kernel {
            kind: KernelKind::Linear,
            output_scale: 1.0,
        }
    }

    pub fn embedding(sigma: Option<DMatrix<f64>>) -> Self {
        Kernel {
            kind: KernelKind::Embedding { sigma },
            output_scale: 1.0,
        }
    }

    pub fn with_output_scale(mut self, output_scale: f64) -> Self {
        self.output_scale = output_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "output scale must be positive and finite (got {})",
                self.output_scale
            )));
        }
        match &self.kind {
            KernelKind::Gaussian { lengthscale }
            | KernelKind::Laplace { lengthscale }
            | KernelKind::Matern { lengthscale, .. } => {
                if !(*lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "lengthscale must be positive and finite (got {lengthscale})"
                    )));
                }
            }
            KernelKind::Linear => {}
            KernelKind::Embedding { sigma } => {
                if let Some(s) = sigma {
                    if s.nrows() != s.ncols() {
                        return Err(Error::InvalidKernel(
                            "embedding weight matrix must be square".into(),
                        ));
                    }
                    if s.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidKernel(
                            "embedding weight matrix must be finite".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates `k(x, x')`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        check_point(x, x.len())?;
        check_point(y, x.len())?;
        if let KernelKind::Embedding { sigma: Some(s) } = &self.kind {
            if s.nrows() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: s.nrows(),
                    found: x.len(),
                });
            }
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let raw = match &self.kind {
            KernelKind::Gaussian { lengthscale } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelKind::Laplace { lengthscale } => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-d1 / lengthscale).exp()
            }
            KernelKind::Matern { nu, lengthscale } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                let r = d2.sqrt() / lengthscale;
                match nu {
                    MaternNu::Half => (-r).exp(),
                    MaternNu::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternNu::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
                    }
                }
            }
            KernelKind::Linear | KernelKind::Embedding { sigma: None } => {
                x.iter().zip(y).map(|(a, b)| a * b).sum()
            }
            KernelKind::Embedding { sigma: Some(s) } => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let mut row = 0.0;
                    for j in 0..y.len() {
                        row += s[(i, j)] * y[j];
                    }
                    acc += x[i] * row;
                }
                acc
            }
        };
        self.output_scale * raw
    }

    /// Kernel matrix with entry `(i, j) = k(xs[i], ys[j])`.
    ///
    /// When both lists hold the same points the result is built from the
    /// upper triangle and mirrored, so it is exactly symmetric.
    pub fn matrix<P: AsRef<[f64]>>(&self, xs: &[P], ys: &[P]) -> Result<DMatrix<f64>> {
        let same = xs.len() == ys.len()
            && xs.iter().zip(ys).all(|(a, b)| a.as_ref() == b.as_ref());
        if same {
            return self.gram(xs);
        }
        self.validate()?;
        let dim = check_points(xs)?;
        let dim_y = check_points(ys)?;
        if dim != dim_y {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: dim_y,
            });
        }
        self.check_embedding_dim(dim)?;
        Ok(DMatrix::from_fn(xs.len(), ys.len(), |i, j| {
            self.eval_unchecked(xs[i].as_ref(), ys[j].as_ref())
        }))
    }

    /// Symmetric kernel matrix of a single point list.
    pub fn gram<P: AsRef<[f64]>>(&self, xs: &[P]) -> Result<DMatrix<f64>> {
        self.validate()?;
        let dim = check_points(xs)?;
        self.check_embedding_dim(dim)?;
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.eval_unchecked(xs[i].as_ref(), xs[j].as_ref());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    fn check_embedding_dim(&self, dim: usize) -> Result<()> {
        if let KernelKind::Embedding { sigma: Some(s) } = &self.kind {
            if s.nrows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: s.nrows(),
                    found: dim,
                });
            }
        }
        Ok(())
    }
}

fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.len(),
        });
    }
    if let Some(position) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { position });
    }
    Ok(())
}

fn check_points<P: AsRef<[f64]>>(xs: &[P]) -> Result<usize> {
    let first = xs.first().ok_or(Error::Empty("point list"))?;
    let dim = first.as_ref().len();
    for x in xs {
        check_point(x.as_ref(), dim)?;
    }
    Ok(dim)
}

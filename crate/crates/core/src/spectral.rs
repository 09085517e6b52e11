//! Thin singular value decomposition of the feature matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Whether the decomposition is of `X` or of `X / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    Raw,
    Normalized,
}

/// How the decomposition is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Backend {
    /// Golub-Kahan SVD. Most accurate, slow beyond a few hundred columns.
    Svd,
    /// Symmetric eigendecomposition of the smaller Gram matrix. Small singular
    /// values lose relative accuracy, which is harmless for spectral filters
    /// because every filter weight carries a factor s^2.
    Gram,
    /// `Svd` when min(n, d) <= 128, `Gram` otherwise.
    #[default]
    Auto,
}

/// `X = U diag(s) V^T` with `m = min(n, d)` columns, singular values sorted
/// descending.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    left: DMatrix<f64>,
    singular: DVector<f64>,
    right: DMatrix<f64>,
    scaling: Scaling,
    n: usize,
}

/// Decomposes the features of `data` (divided by sqrt(n) when `normalize`).
pub fn spectral_decompose(data: &Dataset, normalize: bool) -> Result<SpectralCache> {
    SpectralCache::new(data.features(), normalize, Backend::Auto)
}

impl SpectralCache {
    pub fn new(x: &DMatrix<f64>, normalize: bool, backend: Backend) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::EmptyInput("matrix to decompose"));
        }
        let scaled;
        let x = if normalize {
            scaled = x / (n as f64).sqrt();
            &scaled
        } else {
            x
        };
        let backend = match backend {
            Backend::Auto if n.min(d) <= 128 => Backend::Svd,
            Backend::Auto => Backend::Gram,
            b => b,
        };
        let (left, singular, right) = match backend {
            Backend::Svd => via_svd(x)?,
            _ => via_gram(x)?,
        };
        Ok(Self {
            left,
            singular,
            right,
            scaling: if normalize {
                Scaling::Normalized
            } else {
                Scaling::Raw
            },
            n,
        })
    }

    /// U, n x m.
    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left
    }

    /// s, length m, descending.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular
    }

    /// V, d x m.
    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Eigenvalues of the sample covariance `X^T X / n`, descending.
    pub fn covariance_eigenvalues(&self) -> DVector<f64> {
        match self.scaling {
            Scaling::Normalized => self.singular.map(|s| s * s),
            Scaling::Raw => self.singular.map(|s| s * s / self.n as f64),
        }
    }

    /// Eigenvalues of the Gram matrix `X^T X` of the unscaled features.
    pub fn gram_eigenvalues(&self) -> DVector<f64> {
        let n = self.n as f64;
        self.covariance_eigenvalues().map(|l| l * n)
    }

    /// Largest eigenvalue of `X^T X / n`.
    pub fn lambda_max(&self) -> f64 {
        self.covariance_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// `U diag(s) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.left.clone();
        for (j, s) in self.singular.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.right.transpose()
    }
}

fn via_svd(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = x
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(Error::ConvergenceFailure)?;
    let u = svd.u.ok_or(Error::ConvergenceFailure)?;
    let v_t = svd.v_t.ok_or(Error::ConvergenceFailure)?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let left = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    let singular = DVector::from_fn(order.len(), |i, _| s[order[i]].max(0.0));
    Ok((left, singular, right))
}

fn via_gram(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (n, d) = x.shape();
    let wide = n <= d;
    // Eigenvectors of the small Gram matrix are one side of the SVD; the other
    // side is recovered as X v / s.
    let gram = if wide {
        x * x.transpose()
    } else {
        x.transpose() * x
    };
    let eig =
        SymmetricEigen::try_new(gram, f64::EPSILON, 10_000).ok_or(Error::ConvergenceFailure)?;
    let m = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let singular = DVector::from_fn(m, |i, _| eig.eigenvalues[order[i]].max(0.0).sqrt());
    let near = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    let far_raw = if wide {
        x.transpose() * &near
    } else {
        x * &near
    };
    let cutoff = singular[0] * f64::EPSILON * (n.max(d) as f64);
    let mut far = far_raw;
    for j in 0..m {
        let s = singular[j];
        if s > cutoff && s > 0.0 {
            far.column_mut(j).scale_mut(1.0 / s);
        } else {
            far.column_mut(j).fill(0.0);
        }
    }
    Ok(if wide {
        (near, singular, far)
    } else {
        (far, singular, near)
    })
}

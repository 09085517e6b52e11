//! Ridge regression `min ||y - X b||^2 + lambda ||b||^2` and its closed-form
//! leave-one-out residuals.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Ridge coefficients `(X^T X + lambda I)^{-1} X^T y`.
pub fn ridge_fit(data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let x = data.features();
    let (n, d) = x.shape();
    if d <= n {
        let mut a = x.transpose() * x;
        a.fill_diagonal_plus(lambda);
        let chol = cholesky(a)?;
        Ok(chol.solve(&x.tr_mul(data.response())))
    } else {
        // b = X^T (X X^T + lambda I)^{-1} y.
        let mut a = x * x.transpose();
        a.fill_diagonal_plus(lambda);
        let chol = cholesky(a)?;
        Ok(x.tr_mul(&chol.solve(data.response())))
    }
}

/// Diagonal of the ridge smoother `X (X^T X + lambda I)^{-1} X^T`.
pub fn ridge_leverages(data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let x = data.features();
    let (n, d) = x.shape();
    if d <= n {
        let mut a = x.transpose() * x;
        a.fill_diagonal_plus(lambda);
        let chol = cholesky(a)?;
        // H_ii = ||L^{-1} x_i||^2.
        let z = chol
            .l()
            .solve_lower_triangular(&x.transpose())
            .ok_or(Error::SingularSystem)?;
        Ok(DVector::from_fn(n, |i, _| z.column(i).norm_squared()))
    } else {
        // H = K (K + lambda I)^{-1} with K = X X^T.
        let k = x * x.transpose();
        let mut a = k.clone();
        a.fill_diagonal_plus(lambda);
        let h = cholesky(a)?.solve(&k);
        Ok(h.diagonal())
    }
}

/// `y_i - x_i^T b_{lambda,-i} = (y_i - x_i^T b_lambda) / (1 - H_ii)`.
pub fn ridge_loo_residuals(data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    let beta = ridge_fit(data, lambda)?;
    let h = ridge_leverages(data, lambda)?;
    let resid = data.response() - data.features() * beta;
    let mut out = DVector::zeros(data.n());
    for i in 0..data.n() {
        let denom = 1.0 - h[i];
        if denom.abs() < 1e-12 {
            return Err(Error::SingularSystem);
        }
        out[i] = resid[i] / denom;
    }
    Ok(out)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge penalty must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

fn cholesky(a: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(a).ok_or(Error::SingularSystem)
}

trait DiagonalPlus {
    fn fill_diagonal_plus(&mut self, v: f64);
}

impl DiagonalPlus for DMatrix<f64> {
    fn fill_diagonal_plus(&mut self, v: f64) {
        for i in 0..self.nrows().min(self.ncols()) {
            self[(i, i)] += v;
        }
    }
}

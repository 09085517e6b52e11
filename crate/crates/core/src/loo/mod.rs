//! Leave-one-out predictions along the gradient descent path.
//!
//! The leave-one-out fit `b_{k,-i}` runs gradient descent on the data without
//! row `i`, keeping the full-sample step multiplier `delta_k / n`. Four ways of
//! computing it are provided:
//!
//! * [`loo_predictions_naive`] refits from scratch for every row, `O(n^2 p k)`.
//! * [`augmented::loo_via_augmented`] runs on the full data with the held-out
//!   response replaced at every step by the current LOO prediction.
//! * [`loo_predictions_fast`] (the default shortcut) writes
//!   `b_{k,-i} - b_k = P_k(X^T X) x_i` for a polynomial `P_k` and tracks `P_k`
//!   on the eigenvalues of `X^T X`, `O(n m k)` after one decomposition.
//! * [`recursion::LooShortcutState`] tracks the same polynomial in the monomial
//!   basis. It is exact in exact arithmetic but its coefficients grow like
//!   binomial coefficients, so it is only usable for short paths.

pub mod augmented;
pub mod cost;
pub mod recursion;
pub mod ridge;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, StepSchedule};
use crate::error::{Error, Result};
use crate::gd::{gd_steps, run_gd};
use crate::io::{csv_writer, fmt_f64};
use crate::par;
use crate::risk::{CurveLabel, ErrorFunctional, RiskCurve};
use crate::spectral::{Scaling, SpectralCache};

/// Largest magnitude accepted for an intermediate shortcut term.
pub const OVERFLOW_LIMIT: f64 = 1e300;

/// LOO predictions `x_i^T b_{k,-i}` for every row `i` and `k = 0..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LooPredictions {
    predictions: DMatrix<f64>,
    response: DVector<f64>,
}

impl LooPredictions {
    pub(crate) fn new(predictions: DMatrix<f64>, response: DVector<f64>) -> Self {
        debug_assert_eq!(predictions.nrows(), response.len());
        Self {
            predictions,
            response,
        }
    }

    /// n x (k_max + 1).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.predictions
    }

    pub fn n(&self) -> usize {
        self.predictions.nrows()
    }

    pub fn k_max(&self) -> usize {
        self.predictions.ncols() - 1
    }

    pub fn prediction(&self, i: usize, k: usize) -> f64 {
        self.predictions[(i, k)]
    }

    /// LOO residuals `y_i - x_i^T b_{k,-i}` at step `k`.
    pub fn residuals(&self, k: usize) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.response[i] - self.predictions[(i, k)])
            .collect()
    }

    /// `(1/n) sum_i psi(y_i, x_i^T b_{k,-i})` for every k.
    pub fn curve(&self, psi: &ErrorFunctional, label: CurveLabel) -> RiskCurve {
        let values = (0..=self.k_max())
            .map(|k| {
                let terms: Vec<f64> = (0..self.n())
                    .map(|i| psi.evaluate(self.response[i], self.predictions[(i, k)]))
                    .collect();
                terms.iter().sum::<f64>() / self.n() as f64
            })
            .collect();
        RiskCurve::new((0..=self.k_max()).collect(), values, label)
    }

    /// Largest absolute difference to another set of predictions.
    pub fn max_abs_diff(&self, other: &LooPredictions) -> f64 {
        (&self.predictions - &other.predictions).amax()
    }

    /// Columns `i,k,loo_prediction,residual`, rows ordered by k then i.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["i", "k", "loo_prediction", "residual"])?;
        for k in 0..=self.k_max() {
            for i in 0..self.n() {
                let pred = self.predictions[(i, k)];
                w.write_record([
                    i.to_string(),
                    k.to_string(),
                    fmt_f64(pred),
                    fmt_f64(self.response[i] - pred),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_k_max(schedule: &StepSchedule, k_max: usize) -> Result<()> {
    if k_max > schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "k_max = {k_max} exceeds the {} steps of the schedule",
            schedule.len()
        )));
    }
    Ok(())
}

/// Refits gradient descent without each row in turn (from the origin).
pub fn loo_predictions_naive(
    data: &Dataset,
    schedule: &StepSchedule,
    k_max: usize,
) -> Result<LooPredictions> {
    check_k_max(schedule, k_max)?;
    let n = data.n();
    let norm = n as f64;
    let deltas = &schedule.deltas()[..k_max];
    let rows = par::map_range(n, |i| {
        let held = data.drop_row_raw(i);
        let xi = data.row(i);
        let mut preds = Vec::with_capacity(k_max + 1);
        preds.push(0.0);
        gd_steps(
            &held.0,
            &held.1,
            deltas,
            &DVector::zeros(data.d()),
            norm,
            |_, beta| preds.push(xi.dot(beta)),
        );
        preds
    });
    Ok(LooPredictions::new(
        DMatrix::from_fn(n, k_max + 1, |i, k| rows[i][k]),
        data.response().clone(),
    ))
}

/// Spectral-basis shortcut. Exact up to rounding; agrees with
/// [`loo_predictions_naive`] to about 1e-12 on well-scaled problems.
pub fn loo_predictions_fast(
    data: &Dataset,
    schedule: &StepSchedule,
    k_max: usize,
    cache: &SpectralCache,
) -> Result<LooPredictions> {
    check_k_max(schedule, k_max)?;
    if cache.n() != data.n() || cache.right_vectors().nrows() != data.d() {
        return Err(Error::DimensionMismatch(
            "spectral cache does not match the data".into(),
        ));
    }
    let n = data.n();
    let norm = n as f64;
    let truncated = StepSchedule::new_unchecked(schedule.deltas()[..k_max].to_vec());
    let traj = run_gd(data, &truncated, &DVector::zeros(data.d()))?;
    let fitted = traj.predictions(data.features());
    let raw = raw_singular_values(cache);
    let gram: Vec<f64> = raw.iter().map(|s| s * s).collect();
    let deltas = truncated.deltas();
    let u = cache.left_vectors();
    let y = data.response();
    let rows = par::map_range(n, |i| -> Result<Vec<f64>> {
        let weights: Vec<f64> = (0..raw.len())
            .map(|m| (raw[m] * u[(i, m)]).powi(2))
            .collect();
        let mut poly = vec![0.0; raw.len()];
        let mut preds = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let correction: f64 = weights.iter().zip(&poly).map(|(w, p)| w * p).sum();
            if !correction.is_finite() || correction.abs() > OVERFLOW_LIMIT {
                return Err(Error::PowerOverflow(correction.abs()));
            }
            let f = fitted[(i, k)] + correction;
            preds.push(f);
            if k == k_max {
                break;
            }
            let c = deltas[k] / norm;
            let e = y[i] - f;
            for (p, &g) in poly.iter_mut().zip(&gram) {
                *p = (1.0 - c * g) * *p - c * e;
            }
        }
        Ok(preds)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LooPredictions::new(
        DMatrix::from_fn(n, k_max + 1, |i, k| rows[i][k]),
        y.clone(),
    ))
}

/// Squared-error LOOCV curve from the shortcut, with the per-row predictions.
pub fn loocv_fast(
    data: &Dataset,
    schedule: &StepSchedule,
    k_max: usize,
    cache: &SpectralCache,
) -> Result<(RiskCurve, LooPredictions)> {
    let preds = loo_predictions_fast(data, schedule, k_max, cache)?;
    Ok((
        preds.curve(&ErrorFunctional::Squared, CurveLabel::LoocvShortcut),
        preds,
    ))
}

/// Singular values of the unscaled feature matrix.
pub(crate) fn raw_singular_values(cache: &SpectralCache) -> Vec<f64> {
    let scale = match cache.scaling() {
        Scaling::Raw => 1.0,
        Scaling::Normalized => (cache.n() as f64).sqrt(),
    };
    cache.singular_values().iter().map(|s| s * scale).collect()
}

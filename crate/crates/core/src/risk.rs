//! Risk curves along the gradient descent path: GCV, LOOCV, plug-in
//! functionals and the oracle risk under a known model.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StepSchedule};
use crate::error::{Error, Result};
use crate::gd::{path_traces, GdTrajectory};
use crate::io::{csv_writer, fmt_f64, fmt_opt};
use crate::loo::loo_predictions_naive;
use crate::par::pairwise_mean;
use crate::simgen::{stream, GroundTruth};
use crate::spectral::SpectralCache;

/// Below this `|1 - tr[H]/n|` the GCV value is reported as infinite.
pub const GCV_DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurveLabel {
    TrueRisk,
    Gcv,
    Loocv,
    LoocvShortcut,
    FunctionalLoocv,
}

impl fmt::Display for CurveLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveLabel::TrueRisk => "true_risk",
            CurveLabel::Gcv => "gcv",
            CurveLabel::Loocv => "loocv",
            CurveLabel::LoocvShortcut => "loocv_shortcut",
            CurveLabel::FunctionalLoocv => "functional_loocv",
        })
    }
}

/// Values of a risk or risk estimate indexed by iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    iteration_index: Vec<usize>,
    values: Vec<f64>,
    label: CurveLabel,
    stderr: Option<Vec<f64>>,
    degenerate: Vec<usize>,
}

impl RiskCurve {
    pub fn new(iteration_index: Vec<usize>, values: Vec<f64>, label: CurveLabel) -> Self {
        assert_eq!(
            iteration_index.len(),
            values.len(),
            "index and values differ in length"
        );
        Self {
            iteration_index,
            values,
            label,
            stderr: None,
            degenerate: Vec::new(),
        }
    }

    pub fn with_stderr(mut self, stderr: Vec<f64>) -> Self {
        assert_eq!(stderr.len(), self.values.len());
        self.stderr = Some(stderr);
        self
    }

    pub fn iteration_index(&self) -> &[usize] {
        &self.iteration_index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> CurveLabel {
        self.label
    }

    pub fn stderr(&self) -> Option<&[f64]> {
        self.stderr.as_deref()
    }

    /// Iterations whose value was replaced by `+inf` (GCV near interpolation).
    pub fn degenerate_steps(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at iteration `k`, if recorded.
    pub fn at(&self, k: usize) -> Option<f64> {
        self.iteration_index
            .iter()
            .position(|&i| i == k)
            .map(|pos| self.values[pos])
    }

    /// Columns `k,value,label,stderr`; `stderr` is empty when absent.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["k", "value", "label", "stderr"])?;
        let label = self.label.to_string();
        for (pos, (&k, &v)) in self.iteration_index.iter().zip(&self.values).enumerate() {
            let se = self.stderr.as_ref().map(|s| s[pos]);
            w.write_record([k.to_string(), fmt_f64(v), label.clone(), fmt_opt(se)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// An error function `psi(y, prediction)`.
#[derive(Clone)]
pub enum ErrorFunctional {
    Squared,
    Absolute,
    /// `1{y - prediction <= t}`: the error distribution function at `t`.
    IndicatorBelow(f64),
    Custom {
        name: String,
        f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        gradient_bounds: Option<(f64, f64)>,
    },
}

impl fmt::Debug for ErrorFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorFunctional::Squared => f.write_str("Squared"),
            ErrorFunctional::Absolute => f.write_str("Absolute"),
            ErrorFunctional::IndicatorBelow(t) => write!(f, "IndicatorBelow({t})"),
            ErrorFunctional::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ErrorFunctional {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ErrorFunctional::Custom {
            name: name.into(),
            f: Arc::new(f),
            gradient_bounds: None,
        }
    }

    pub fn evaluate(&self, y: f64, prediction: f64) -> f64 {
        match self {
            ErrorFunctional::Squared => (y - prediction).powi(2),
            ErrorFunctional::Absolute => (y - prediction).abs(),
            ErrorFunctional::IndicatorBelow(t) => f64::from(u8::from(y - prediction <= *t)),
            ErrorFunctional::Custom { f, .. } => f(y, prediction),
        }
    }

    /// Constants `(C, C_bar)` with `||grad psi(u)|| <= C ||u|| + C_bar`, when
    /// `psi` is differentiable almost everywhere with such a bound.
    pub fn gradient_bounds(&self) -> Option<(f64, f64)> {
        match self {
            ErrorFunctional::Squared => Some((4.0, 0.0)),
            ErrorFunctional::Absolute => Some((0.0, std::f64::consts::SQRT_2)),
            ErrorFunctional::IndicatorBelow(_) => None,
            ErrorFunctional::Custom {
                gradient_bounds, ..
            } => *gradient_bounds,
        }
    }
}

/// `||y - X b_k||^2 / n` for every iterate.
pub fn training_errors(data: &Dataset, trajectory: &GdTrajectory) -> Vec<f64> {
    let fitted = trajectory.predictions(data.features());
    (0..fitted.ncols())
        .map(|k| (data.response() - fitted.column(k)).norm_squared() / data.n() as f64)
        .collect()
}

/// `train_err / (1 - trace)^2`, or `DenominatorDegenerate` near interpolation.
pub fn gcv_value(train_err: f64, trace: f64) -> Result<f64> {
    let denom = 1.0 - trace;
    if denom.abs() < GCV_DEGENERATE_TOL {
        return Err(Error::DenominatorDegenerate(denom));
    }
    Ok(train_err / (denom * denom))
}

/// GCV along the path. Degenerate steps are recorded as `+inf` and listed in
/// [`RiskCurve::degenerate_steps`]; use [`gcv_value`] for the strict form.
pub fn gcv_risk(
    data: &Dataset,
    trajectory: &GdTrajectory,
    cache: &SpectralCache,
) -> Result<RiskCurve> {
    if cache.n() != data.n() {
        return Err(Error::DimensionMismatch(
            "spectral cache does not match the data".into(),
        ));
    }
    let traces = match trajectory.smoother_traces() {
        Some(t) => t.to_vec(),
        None => path_traces(cache, trajectory.schedule()),
    };
    let train = training_errors(data, trajectory);
    let mut degenerate = Vec::new();
    let values = train
        .iter()
        .zip(&traces)
        .enumerate()
        .map(|(k, (&e, &tr))| {
            gcv_value(e, tr).unwrap_or_else(|_| {
                degenerate.push(k);
                f64::INFINITY
            })
        })
        .collect();
    let mut curve = RiskCurve::new((0..train.len()).collect(), values, CurveLabel::Gcv);
    curve.degenerate = degenerate;
    Ok(curve)
}

/// Exact LOOCV by refitting without each row.
pub fn loocv_naive(data: &Dataset, schedule: &StepSchedule, k_max: usize) -> Result<RiskCurve> {
    functional_loocv(data, schedule, k_max, &ErrorFunctional::Squared).map(|mut c| {
        c.label = CurveLabel::Loocv;
        c
    })
}

/// Plug-in LOOCV `(1/n) sum_i psi(y_i, x_i^T b_{k,-i})` by refitting.
pub fn functional_loocv(
    data: &Dataset,
    schedule: &StepSchedule,
    k_max: usize,
    psi: &ErrorFunctional,
) -> Result<RiskCurve> {
    let preds = loo_predictions_naive(data, schedule, k_max)?;
    Ok(preds.curve(psi, CurveLabel::FunctionalLoocv))
}

/// `(b_k - b0)^T Sigma (b_k - b0) + sigma^2` for a linear model.
pub fn true_risk_closed_form(trajectory: &GdTrajectory, truth: &GroundTruth) -> Result<RiskCurve> {
    if !truth.is_linear() {
        return Err(Error::ModelMismatch);
    }
    if truth.p() != trajectory.iterate(0).len() {
        return Err(Error::DimensionMismatch(
            "model and trajectory dimensions differ".into(),
        ));
    }
    let sigma2 = truth.noise_variance();
    let values = trajectory
        .iterates()
        .iter()
        .map(|b| truth.sigma_norm2(&(b - &truth.beta0)) + sigma2)
        .collect();
    Ok(RiskCurve::new(
        (0..=trajectory.steps()).collect(),
        values,
        CurveLabel::TrueRisk,
    ))
}

/// Test errors `y - x^T b_k`, one row per test point and one column per k.
pub fn test_errors(trajectory: &GdTrajectory, test: &Dataset) -> DMatrix<f64> {
    let mut preds = trajectory.predictions(test.features());
    for k in 0..preds.ncols() {
        for i in 0..preds.nrows() {
            preds[(i, k)] = test.response()[i] - preds[(i, k)];
        }
    }
    preds
}

/// Monte Carlo estimate of `E[psi(y0, x0^T b_k) | b_k]` over `n_test` fresh
/// draws from stream 2 of `seed`, with standard errors.
pub fn true_risk_monte_carlo(
    trajectory: &GdTrajectory,
    truth: &GroundTruth,
    n_test: usize,
    seed: u64,
    psi: &ErrorFunctional,
) -> Result<RiskCurve> {
    if n_test == 0 {
        return Err(Error::EmptyInput("n_test"));
    }
    let test = truth.sample(n_test, &mut stream(seed, 2))?;
    Ok(monte_carlo_on(trajectory, &test, psi))
}

/// [`true_risk_monte_carlo`] on a given test set.
pub fn monte_carlo_on(
    trajectory: &GdTrajectory,
    test: &Dataset,
    psi: &ErrorFunctional,
) -> RiskCurve {
    let preds = trajectory.predictions(test.features());
    let n = test.n() as f64;
    let (values, stderr): (Vec<f64>, Vec<f64>) = (0..preds.ncols())
        .map(|k| {
            let losses: Vec<f64> = (0..test.n())
                .map(|i| psi.evaluate(test.response()[i], preds[(i, k)]))
                .collect();
            let mean = pairwise_mean(&losses);
            let dev: Vec<f64> = losses.iter().map(|l| (l - mean).powi(2)).collect();
            let var = if test.n() > 1 {
                pairwise_mean(&dev) * n / (n - 1.0)
            } else {
                0.0
            };
            (mean, (var / n).sqrt())
        })
        .unzip();
    RiskCurve::new((0..preds.ncols()).collect(), values, CurveLabel::TrueRisk).with_stderr(stderr)
}

/// Position of the minimum value; ties go to the smallest index. Returns the
/// iteration number stored at that position.
pub fn tune_by_loocv(curve: &RiskCurve) -> Result<usize> {
    if curve.is_empty() {
        return Err(Error::EmptyInput("risk curve"));
    }
    let mut best = 0;
    for (pos, v) in curve.values.iter().enumerate() {
        if *v < curve.values[best] {
            best = pos;
        }
    }
    Ok(curve.iteration_index[best])
}

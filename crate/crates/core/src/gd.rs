//! Gradient descent on `(1/2n) ||y - X b||^2`, its smoother trace, and the
//! gradient-flow limit.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, StepSchedule};
use crate::error::{Error, Result};
use crate::spectral::{Scaling, SpectralCache};

/// The iterates `b_0, ..., b_K` of one gradient descent run.
#[derive(Debug, Clone)]
pub struct GdTrajectory {
    iterates: Vec<DVector<f64>>,
    schedule: StepSchedule,
    smoother_traces: Option<Vec<f64>>,
}

impl GdTrajectory {
    /// All K + 1 iterates; index 0 is the initialization.
    pub fn iterates(&self) -> &[DVector<f64>] {
        &self.iterates
    }

    pub fn iterate(&self, k: usize) -> &DVector<f64> {
        &self.iterates[k]
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    /// Number of steps K.
    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    /// `tr[H_k] / n` for k = 0..=K, once attached.
    pub fn smoother_traces(&self) -> Option<&[f64]> {
        self.smoother_traces.as_deref()
    }

    /// Computes and stores the smoother traces from a decomposition of the
    /// same features.
    pub fn attach_traces(&mut self, cache: &SpectralCache) {
        self.smoother_traces = Some(path_traces(cache, &self.schedule));
    }

    /// Predictions `x^T b_k` for every row of `x` (rows) and every k (columns).
    pub fn predictions(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.coefficient_matrix()
    }

    /// Iterates stacked as columns, d x (K+1).
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.iterates)
    }
}

/// Runs `K = schedule.len()` steps of
/// `b_k = b_{k-1} + (delta_{k-1}/n) X^T (y - X b_{k-1})` from `init`.
pub fn run_gd(
    data: &Dataset,
    schedule: &StepSchedule,
    init: &DVector<f64>,
) -> Result<GdTrajectory> {
    if init.len() != data.d() {
        return Err(Error::DimensionMismatch(format!(
            "initialization has length {} but the data has d = {}",
            init.len(),
            data.d()
        )));
    }
    let mut iterates = Vec::with_capacity(schedule.len() + 1);
    iterates.push(init.clone());
    let norm = data.n() as f64;
    gd_steps(
        data.features(),
        data.response(),
        schedule.deltas(),
        init,
        norm,
        |_, beta| iterates.push(beta.clone()),
    );
    Ok(GdTrajectory {
        iterates,
        schedule: schedule.clone(),
        smoother_traces: None,
    })
}

/// [`run_gd`] from the origin, with smoother traces attached and a warning
/// when a step exceeds the stability limit `delta * lambda_max < 2`.
pub fn run_gd_cached(
    data: &Dataset,
    schedule: &StepSchedule,
    cache: &SpectralCache,
) -> Result<GdTrajectory> {
    warn_if_unstable(cache, schedule);
    let mut traj = run_gd(data, schedule, &DVector::zeros(data.d()))?;
    traj.attach_traces(cache);
    Ok(traj)
}

/// Returns whether every step satisfies `delta_k * lambda_max < 2`, logging a
/// warning otherwise.
pub fn warn_if_unstable(cache: &SpectralCache, schedule: &StepSchedule) -> bool {
    let lmax = cache.lambda_max();
    let worst = schedule
        .deltas()
        .iter()
        .fold(0.0f64, |a, &d| a.max(d * lmax));
    if worst >= 2.0 {
        log::warn!("step size times lambda_max reaches {worst:.3} >= 2; gradient descent diverges");
        false
    } else {
        true
    }
}

/// The raw iteration with step multiplier `delta_k / norm`. `visit(k, b_k)` is
/// called after each step k = 1..=K.
pub(crate) fn gd_steps(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    deltas: &[f64],
    init: &DVector<f64>,
    norm: f64,
    mut visit: impl FnMut(usize, &DVector<f64>),
) {
    let n = norm;
    let mut beta = init.clone();
    let mut resid = DVector::zeros(x.nrows());
    for (k, &delta) in deltas.iter().enumerate() {
        resid.copy_from(y);
        resid.gemv(-1.0, x, &beta, 1.0);
        beta.gemv_tr(delta / n, x, &resid, 1.0);
        visit(k + 1, &beta);
    }
}

/// Spectral filter applied to the eigenvalues of the sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum SmootherFilter {
    /// `g(x) = 1 - prod_j (1 - delta_j x)` over the given steps.
    Gd(Vec<f64>),
    /// `g(x) = 1 - exp(-T x)`.
    Gf(f64),
}

impl SmootherFilter {
    /// The filter after the first `k` steps of `schedule`.
    pub fn gd(schedule: &StepSchedule, k: usize) -> Self {
        SmootherFilter::Gd(schedule.deltas()[..k.min(schedule.len())].to_vec())
    }

    pub fn gf(t: f64) -> Self {
        SmootherFilter::Gf(t)
    }

    /// `g(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SmootherFilter::Gf(t) => -(-t * x).exp_m1(),
            SmootherFilter::Gd(deltas) => gd_filter(deltas, x),
        }
    }

    /// `g(x) / x`, continuously extended to `T` (or the total step length)
    /// at zero.
    pub fn eval_over_x(&self, x: f64) -> f64 {
        if x == 0.0 {
            return match self {
                SmootherFilter::Gf(t) => *t,
                SmootherFilter::Gd(deltas) => deltas.iter().sum(),
            };
        }
        self.eval(x) / x
    }
}

fn gd_filter(deltas: &[f64], x: f64) -> f64 {
    if deltas.iter().all(|&d| d * x < 1.0) {
        // Sum of logs keeps relative accuracy when the product is close to 1.
        let log_q: f64 = deltas.iter().map(|&d| (-d * x).ln_1p()).sum();
        -log_q.exp_m1()
    } else {
        1.0 - deltas.iter().map(|&d| 1.0 - d * x).product::<f64>()
    }
}

/// `tr[H] / n = (1/n) sum_i g(lambda_i)` over the eigenvalues of `X^T X / n`.
pub fn smoother_trace(cache: &SpectralCache, filter: &SmootherFilter) -> f64 {
    let total: f64 = cache
        .covariance_eigenvalues()
        .iter()
        .map(|&l| filter.eval(l))
        .sum();
    total / cache.n() as f64
}

/// Smoother traces for k = 0..=K along `schedule`.
pub fn path_traces(cache: &SpectralCache, schedule: &StepSchedule) -> Vec<f64> {
    let lambdas = cache.covariance_eigenvalues();
    let n = cache.n() as f64;
    let mut q = vec![1.0; lambdas.len()];
    let mut out = Vec::with_capacity(schedule.len() + 1);
    out.push(0.0);
    for &delta in schedule.deltas() {
        for (qm, &l) in q.iter_mut().zip(lambdas.iter()) {
            *qm *= 1.0 - delta * l;
        }
        out.push(q.iter().map(|qm| 1.0 - qm).sum::<f64>() / n);
    }
    out
}

/// `V diag(gbar(lambda)) V^T X^T y / n`, the estimator whose spectral filter is
/// `filter`, started from the origin.
pub fn spectral_estimate(
    cache: &SpectralCache,
    data: &Dataset,
    filter: &SmootherFilter,
) -> DVector<f64> {
    let n = cache.n() as f64;
    let lambdas = cache.covariance_eigenvalues();
    let raw_scale = match cache.scaling() {
        Scaling::Raw => 1.0,
        Scaling::Normalized => n.sqrt(),
    };
    // X^T y = V diag(s_raw) U^T y.
    let uty = cache.left_vectors().tr_mul(data.response());
    let coef = DVector::from_fn(uty.len(), |m, _| {
        let s_raw = cache.singular_values()[m] * raw_scale;
        filter.eval_over_x(lambdas[m]) * s_raw * uty[m] / n
    });
    cache.right_vectors() * coef
}

/// Gradient flow at time `t`: `pinv(S) (I - exp(-t S)) X^T y / n` with
/// `S = X^T X / n`, evaluated spectrally.
pub fn gradient_flow(cache: &SpectralCache, data: &Dataset, t: f64) -> Result<DVector<f64>> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "flow time must be finite and nonnegative, got {t}"
        )));
    }
    Ok(spectral_estimate(cache, data, &SmootherFilter::Gf(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{spectral_decompose, Backend};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn gaussian_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        Dataset::new(x, y, false).unwrap()
    }

    #[test]
    fn one_exact_step() {
        let ds = Dataset::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            false,
        )
        .unwrap();
        let traj = run_gd(
            &ds,
            &StepSchedule::constant(1.0, 1).unwrap(),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(traj.iterate(1)[0], 1.0);
        assert_eq!(traj.steps(), 1);
    }

    #[test]
    fn zero_steps_keep_init() {
        let ds = gaussian_data(8, 5, 1);
        let init = DVector::from_element(5, 0.3);
        let traj = run_gd(&ds, &StepSchedule::frozen(6), &init).unwrap();
        assert_eq!(traj.iterates().len(), 7);
        assert!(traj.iterates().iter().all(|b| *b == init));
    }

    #[test]
    fn init_dimension_is_checked() {
        let ds = gaussian_data(4, 3, 2);
        let err = run_gd(
            &ds,
            &StepSchedule::constant(0.1, 2).unwrap(),
            &DVector::zeros(2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn matches_spectral_closed_form() {
        let ds = gaussian_data(20, 10, 3);
        let sched = StepSchedule::constant(0.01, 500).unwrap();
        let traj = run_gd(&ds, &sched, &DVector::zeros(10)).unwrap();
        let cache = spectral_decompose(&ds, false).unwrap();
        let closed = spectral_estimate(&cache, &ds, &SmootherFilter::gd(&sched, 500));
        assert!((traj.iterate(500) - closed).amax() < 1e-6);
    }

    #[test]
    fn matches_closed_form_on_wide_instance() {
        let ds = gaussian_data(50, 80, 4);
        let sched = StepSchedule::constant(0.02, 120).unwrap();
        let traj = run_gd(&ds, &sched, &DVector::zeros(80)).unwrap();
        let cache = spectral_decompose(&ds, true).unwrap();
        for k in [1, 7, 60, 120] {
            let closed = spectral_estimate(&cache, &ds, &SmootherFilter::gd(&sched, k));
            let rel = (traj.iterate(k) - &closed).norm() / closed.norm();
            assert!(rel < 1e-8, "k = {k}: {rel}");
        }
    }

    #[test]
    fn trace_of_zero_matrix_is_zero() {
        let ds = Dataset::new(DMatrix::zeros(5, 3), DVector::zeros(5), false).unwrap();
        let cache = spectral_decompose(&ds, false).unwrap();
        assert_eq!(smoother_trace(&cache, &SmootherFilter::gf(3.0)), 0.0);
    }

    #[test]
    fn flow_trace_tends_to_one_for_square_full_rank() {
        let ds = gaussian_data(12, 12, 5);
        let cache = spectral_decompose(&ds, false).unwrap();
        let tr = smoother_trace(&cache, &SmootherFilter::gf(1e9));
        assert!((tr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_matches_dense_smoother_matrix() {
        let ds = gaussian_data(30, 15, 6);
        let sched = StepSchedule::constant(0.05, 100).unwrap();
        let x = ds.features();
        let n = 30.0;
        // beta_{k} = (I - c G) beta_{k-1} + c X^T y, so H_k = X M_k X^T with
        // M_k = (I - c G) M_{k-1} + c I.
        let g = x.transpose() * x;
        let c = 0.05 / n;
        let mut m = DMatrix::<f64>::zeros(15, 15);
        let id = DMatrix::<f64>::identity(15, 15);
        for _ in 0..100 {
            m = (&id - &g * c) * m + &id * c;
        }
        let h = x * m * x.transpose();
        let dense = h.trace() / n;
        let cache = spectral_decompose(&ds, false).unwrap();
        let spectral = smoother_trace(&cache, &SmootherFilter::gd(&sched, 100));
        assert!((dense - spectral).abs() < 1e-8);
        assert!((path_traces(&cache, &sched)[100] - spectral).abs() < 1e-12);
    }

    #[test]
    fn flow_at_zero_is_zero() {
        let ds = gaussian_data(6, 4, 7);
        let cache = spectral_decompose(&ds, false).unwrap();
        assert_eq!(gradient_flow(&cache, &ds, 0.0).unwrap(), DVector::zeros(4));
        assert!(gradient_flow(&cache, &ds, -1.0).is_err());
    }

    #[test]
    fn scalar_flow() {
        let ds = Dataset::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 2.0),
            false,
        )
        .unwrap();
        let cache = spectral_decompose(&ds, false).unwrap();
        let b = gradient_flow(&cache, &ds, 1.0).unwrap();
        assert!((b[0] - (1.0 - (-1.0f64).exp()) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn small_steps_approach_flow() {
        let ds = gaussian_data(40, 20, 8);
        let k = 10_000;
        let sched = StepSchedule::constant(2.0 / k as f64, k).unwrap();
        let traj = run_gd(&ds, &sched, &DVector::zeros(20)).unwrap();
        let cache = spectral_decompose(&ds, false).unwrap();
        let flow = gradient_flow(&cache, &ds, 2.0).unwrap();
        assert!((traj.iterate(k) - flow).amax() < 1e-3);
    }

    #[test]
    fn gd_filter_uniformly_close_to_flow_filter() {
        let zeta: f64 = 2.0;
        let upper = zeta + 2.0 * zeta.sqrt() + 2.0;
        let k = 10_000;
        let gd = SmootherFilter::Gd(vec![1.0 / k as f64; k]);
        let gf = SmootherFilter::gf(1.0);
        let sup = (0..=20_000)
            .map(|i| upper * i as f64 / 20_000.0)
            .map(|x| (gd.eval(x) - gf.eval(x)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-3, "{sup}");
    }

    #[test]
    fn continuous_extensions() {
        assert_eq!(SmootherFilter::gf(2.5).eval_over_x(0.0), 2.5);
        assert_eq!(
            SmootherFilter::Gd(vec![0.1, 0.2]).eval_over_x(0.0),
            0.1 + 0.2
        );
        assert_eq!(SmootherFilter::gf(1.0).eval(0.0), 0.0);
        let tiny = SmootherFilter::gf(2.5).eval_over_x(1e-14);
        assert!((tiny - 2.5).abs() < 1e-12);
    }

    #[test]
    fn backends_give_same_trajectory_traces() {
        let ds = gaussian_data(30, 45, 9);
        let sched = StepSchedule::constant(0.05, 40).unwrap();
        let a = path_traces(
            &SpectralCache::new(ds.features(), false, Backend::Svd).unwrap(),
            &sched,
        );
        let b = path_traces(
            &SpectralCache::new(ds.features(), false, Backend::Gram).unwrap(),
            &sched,
        );
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn product_form_matches_sum_form(delta_x in 0.0f64..=1.0, k in 1usize..200) {
            let product = SmootherFilter::Gd(vec![delta_x; k]).eval(1.0);
            let sum: f64 = (0..k).map(|j| delta_x * (1.0 - delta_x).powi((k - j - 1) as i32)).sum();
            prop_assert!((product - sum).abs() < 1e-12);
        }

        #[test]
        fn filter_nondecreasing_in_k_and_bounded(delta in 0.001f64..1.0, lambda in 0.0f64..1.0, k in 1usize..300) {
            let lo = SmootherFilter::Gd(vec![delta; k]).eval(lambda);
            let hi = SmootherFilter::Gd(vec![delta; k + 1]).eval(lambda);
            prop_assert!(hi >= lo - 1e-15);
            prop_assert!(hi <= 1.0 + 1e-15);
        }
    }
}

//! Pathwise prediction intervals from LOO residual quantiles.
//!
//! At step `k` the interval for a new response is
//! `x0^T b_k + [alpha_k(q1), alpha_k(q2)]`, where `alpha_k(q)` is the
//! `ceil(q n)`-th smallest LOO residual.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gd::GdTrajectory;
use crate::io::{csv_writer, fmt_f64};
use crate::loo::LooPredictions;
use crate::par;
use crate::simgen::{stream, GroundTruth};

/// Smallest Monte Carlo test set accepted by [`coverage_monte_carlo`].
pub const MIN_TEST_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSpec {
    q1: f64,
    q2: f64,
    nominal: f64,
}

impl IntervalSpec {
    pub fn new(q1: f64, q2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q1) || !(0.0..=1.0).contains(&q2) || q1 > q2 {
            return Err(Error::InvalidArgument(format!(
                "quantile levels must satisfy 0 <= q1 <= q2 <= 1, got ({q1}, {q2})"
            )));
        }
        Ok(Self {
            q1,
            q2,
            nominal: q2 - q1,
        })
    }

    /// Equal-tailed levels `((1 - level) / 2, (1 + level) / 2)`; the nominal
    /// level is kept exactly as given.
    pub fn symmetric(level: f64) -> Result<Self> {
        let spec = Self::new(0.5 * (1.0 - level), 0.5 * (1.0 + level))?;
        Ok(Self {
            nominal: level,
            ..spec
        })
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn nominal(&self) -> f64 {
        self.nominal
    }
}

/// Order-statistic quantile: the `ceil(q n)`-th smallest value (1-based),
/// with `q = 0` giving the minimum.
pub fn loo_quantile(residuals: &[f64], q: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::EmptyInput("residuals"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {q} outside [0, 1]"
        )));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(q, sorted.len())])
}

fn order_index(q: f64, n: usize) -> usize {
    let rank = (q * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// Residual offsets `[alpha_k(q1), alpha_k(q2)]` for a set of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBands {
    pub spec: IntervalSpec,
    pub steps: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ResidualBands {
    pub fn from_loo(loo: &LooPredictions, spec: IntervalSpec, steps: &[usize]) -> Result<Self> {
        if loo.n() == 0 {
            return Err(Error::EmptyInput("LOO residuals"));
        }
        if let Some(&k) = steps.iter().find(|&&k| k > loo.k_max()) {
            return Err(Error::InvalidArgument(format!(
                "step {k} beyond k_max {}",
                loo.k_max()
            )));
        }
        let bands = par::map_slice(steps, |&k| {
            let mut r = loo.residuals(k);
            r.sort_by(f64::total_cmp);
            (
                r[order_index(spec.q1, r.len())],
                r[order_index(spec.q2, r.len())],
            )
        });
        let (lower, upper) = bands.into_iter().unzip();
        Ok(Self {
            spec,
            steps: steps.to_vec(),
            lower,
            upper,
        })
    }

    /// Every step `0..=k_max`.
    pub fn full_path(loo: &LooPredictions, spec: IntervalSpec) -> Result<Self> {
        let steps: Vec<usize> = (0..=loo.k_max()).collect();
        Self::from_loo(loo, spec, &steps)
    }

    pub fn length(&self, pos: usize) -> f64 {
        self.upper[pos] - self.lower[pos]
    }
}

/// Prediction interval at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// Intervals for a new point `x_new`, which must include the intercept
/// column when the training data does.
pub fn build_intervals(
    bands: &ResidualBands,
    trajectory: &GdTrajectory,
    x_new: &DVector<f64>,
) -> Result<Vec<PredictionInterval>> {
    let d = trajectory.iterate(0).len();
    if x_new.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "x_new has {} entries, expected {d}",
            x_new.len()
        )));
    }
    bands
        .steps
        .iter()
        .enumerate()
        .map(|(pos, &k)| {
            if k > trajectory.steps() {
                return Err(Error::InvalidArgument(format!(
                    "step {k} beyond trajectory length"
                )));
            }
            let center = trajectory.iterate(k).dot(x_new);
            Ok(PredictionInterval {
                k,
                lower: center + bands.lower[pos],
                upper: center + bands.upper[pos],
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageRow {
    pub k: usize,
    pub nominal: f64,
    pub coverage: f64,
    pub stderr: f64,
    pub mean_length: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    /// Largest `|coverage - nominal|` over the recorded steps.
    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.coverage - r.nominal).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["k", "nominal", "coverage", "stderr", "mean_length"])?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                fmt_f64(r.nominal),
                fmt_f64(r.coverage),
                fmt_f64(r.stderr),
                fmt_f64(r.mean_length),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coverage on `n_test` fresh draws from stream 2 of `seed`.
pub fn coverage_monte_carlo(
    bands: &ResidualBands,
    trajectory: &GdTrajectory,
    truth: &GroundTruth,
    n_test: usize,
    seed: u64,
) -> Result<CoverageReport> {
    if n_test < MIN_TEST_POINTS {
        return Err(Error::InvalidArgument(format!(
            "n_test must be at least {MIN_TEST_POINTS}"
        )));
    }
    let test = truth.sample(n_test, &mut stream(seed, 2))?;
    coverage_on(bands, trajectory, &test)
}

/// Fraction of test errors `y - x^T b_k` inside `[alpha_k(q1), alpha_k(q2)]`.
pub fn coverage_on(
    bands: &ResidualBands,
    trajectory: &GdTrajectory,
    test: &Dataset,
) -> Result<CoverageReport> {
    if let Some(&k) = bands.steps.iter().find(|&&k| k > trajectory.steps()) {
        return Err(Error::InvalidArgument(format!(
            "step {k} beyond trajectory length"
        )));
    }
    let errors = test_errors_at(trajectory, test, &bands.steps);
    let m = test.n();
    let rows = par::map_range(bands.steps.len(), |pos| {
        let k = bands.steps[pos];
        let (lo, hi) = (bands.lower[pos], bands.upper[pos]);
        let hits = errors
            .column(pos)
            .iter()
            .filter(|&&e| lo <= e && e <= hi)
            .count();
        let coverage = hits as f64 / m as f64;
        CoverageRow {
            k,
            nominal: bands.spec.nominal(),
            coverage,
            stderr: (coverage * (1.0 - coverage) / m as f64).sqrt(),
            mean_length: bands.length(pos),
            n_test: m,
        }
    });
    Ok(CoverageReport { rows })
}

/// Test errors `y - x^T b_k` for the listed steps only, one column per step.
pub fn test_errors_at(trajectory: &GdTrajectory, test: &Dataset, steps: &[usize]) -> DMatrix<f64> {
    let d = trajectory.iterate(0).len();
    let coefs = DMatrix::from_fn(d, steps.len(), |j, c| trajectory.iterate(steps[c])[j]);
    let mut errors = test.features() * coefs;
    for mut col in errors.column_iter_mut() {
        col.zip_apply(test.response(), |e, y| *e = y - *e);
    }
    errors
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn error_distribution_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut sup) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StepSchedule;
    use crate::gd::run_gd;
    use crate::loo::loo_predictions_naive;
    use crate::simgen::{generate, SimModel};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn quantile_rule() {
        let r = [3.0, 1.0, 4.0, 2.0];
        assert_eq!(loo_quantile(&r, 0.5).unwrap(), 2.0);
        assert_eq!(loo_quantile(&r, 0.0).unwrap(), 1.0);
        assert_eq!(loo_quantile(&r, 1.0).unwrap(), 4.0);
        assert_eq!(loo_quantile(&r, 0.51).unwrap(), 3.0);
        assert!(matches!(loo_quantile(&[], 0.5), Err(Error::EmptyInput(_))));
        assert!(loo_quantile(&r, 1.5).is_err());
    }

    #[test]
    fn normal_quantile() {
        let mut rng = stream(5, 0);
        let r: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!((loo_quantile(&r, 0.9).unwrap() - 1.2816).abs() < 0.1);
    }

    #[test]
    fn spec_validation() {
        assert!(IntervalSpec::new(0.6, 0.4).is_err());
        assert!(IntervalSpec::new(-0.1, 0.4).is_err());
        let s = IntervalSpec::symmetric(0.9).unwrap();
        assert!((s.q1() - 0.05).abs() < 1e-15);
        assert_eq!(s.nominal(), 0.9);
    }

    #[test]
    fn ks_endpoints() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(error_distribution_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(error_distribution_distance(&a, &[10.0, 11.0]).unwrap(), 1.0);
        assert!((error_distribution_distance(&[1.0, 2.0], &[1.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(error_distribution_distance(&a, &[]).is_err());
    }

    fn small_problem() -> (crate::simgen::Simulation, GdTrajectory, LooPredictions) {
        let sim = generate(&SimModel::isotropic_linear(60, 30, 2.0, 1.0, 11), 0).unwrap();
        let schedule = StepSchedule::constant(0.2, 20).unwrap();
        let traj = run_gd(&sim.train, &schedule, &DVector::zeros(30)).unwrap();
        let loo = loo_predictions_naive(&sim.train, &schedule, 20).unwrap();
        (sim, traj, loo)
    }

    #[test]
    fn trivial_intervals() {
        let (sim, traj, loo) = small_problem();
        let full = ResidualBands::full_path(&loo, IntervalSpec::new(0.0, 1.0).unwrap()).unwrap();
        let x0 = sim.train.row(0);
        for (pos, iv) in build_intervals(&full, &traj, &x0)
            .unwrap()
            .iter()
            .enumerate()
        {
            let r = loo.residuals(pos);
            let (lo, hi) = r
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            assert!((iv.width() - (hi - lo)).abs() < 1e-12);
        }
        let point = ResidualBands::full_path(&loo, IntervalSpec::new(0.5, 0.5).unwrap()).unwrap();
        assert!(build_intervals(&point, &traj, &x0)
            .unwrap()
            .iter()
            .all(|iv| iv.width() == 0.0));
        let report = coverage_monte_carlo(&point, &traj, &sim.truth, 2000, 3).unwrap();
        assert!(report
            .rows
            .iter()
            .all(|r| r.coverage <= 3.0 * (1.0 / 2000.0f64).sqrt()));
    }

    #[test]
    fn infinite_bands_cover_everything() {
        let (sim, traj, loo) = small_problem();
        let mut bands =
            ResidualBands::full_path(&loo, IntervalSpec::new(0.0, 1.0).unwrap()).unwrap();
        bands.lower.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        bands.upper.iter_mut().for_each(|v| *v = f64::INFINITY);
        let report = coverage_monte_carlo(&bands, &traj, &sim.truth, 500, 1).unwrap();
        assert!(report
            .rows
            .iter()
            .all(|r| r.coverage == 1.0 && r.stderr == 0.0));
        assert!(coverage_monte_carlo(&bands, &traj, &sim.truth, 50, 1).is_err());
    }

    #[test]
    fn selected_errors_match_full_matrix() {
        let (sim, traj, _) = small_problem();
        let test = sim.truth.sample(50, &mut stream(2, 2)).unwrap();
        let full = crate::risk::test_errors(&traj, &test);
        let some = test_errors_at(&traj, &test, &[3, 0, 20]);
        for (c, k) in [3, 0, 20].into_iter().enumerate() {
            assert!((some.column(c) - full.column(k)).amax() < 1e-12);
        }
    }

    #[test]
    fn coverage_csv() {
        let (sim, traj, loo) = small_problem();
        let bands =
            ResidualBands::from_loo(&loo, IntervalSpec::symmetric(0.8).unwrap(), &[0, 10]).unwrap();
        let report = coverage_monte_carlo(&bands, &traj, &sim.truth, 200, 1).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,nominal,coverage,stderr,mean_length\n0,0.8,"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn quantile_permutation_invariant(mut v in prop::collection::vec(-1e3f64..1e3, 1..60), q in 0.0f64..=1.0, seed in any::<u64>()) {
            let before = loo_quantile(&v, q).unwrap();
            v.shuffle(&mut stream(seed, 0));
            prop_assert_eq!(before, loo_quantile(&v, q).unwrap());
        }

        #[test]
        fn widening_never_reduces_coverage(a in 0.0f64..0.5, b in 0.5f64..1.0, da in 0.0f64..0.5, db in 0.0f64..0.5) {
            let (sim, traj, loo) = small_problem();
            let inner = IntervalSpec::new(a, b).unwrap();
            let outer = IntervalSpec::new((a - da).max(0.0), (b + db).min(1.0)).unwrap();
            let widest = IntervalSpec::new(0.0, 1.0).unwrap();
            let test = sim.truth.sample(300, &mut stream(9, 2)).unwrap();
            let cov = |s| coverage_on(&ResidualBands::full_path(&loo, s).unwrap(), &traj, &test).unwrap();
            let (ci, co, cw) = (cov(inner), cov(outer), cov(widest));
            for ((i, o), w) in ci.rows.iter().zip(&co.rows).zip(&cw.rows) {
                prop_assert!(i.coverage <= o.coverage && o.coverage <= w.coverage);
                prop_assert!(i.mean_length >= 0.0);
            }
        }
    }
}

//! Simulation checks at desk scale against Monte Carlo and asymptotic oracles.

use gdcv::asymptotics::{gcv_limit, MpLaw};
use gdcv::gd::run_gd_cached;
use gdcv::intervals::{coverage_monte_carlo, IntervalSpec, ResidualBands};
use gdcv::loo::loo_predictions_fast;
use gdcv::risk::{
    gcv_risk, monte_carlo_on, true_risk_closed_form, true_risk_monte_carlo, tune_by_loocv,
    CurveLabel, ErrorFunctional,
};
use gdcv::simgen::{stream, PreparedModel, SimModel};
use gdcv::{spectral_decompose, StepSchedule};

#[test]
fn underparameterized_risk_decreases_then_flattens() {
    let sim = PreparedModel::new(&SimModel::isotropic_linear(3000, 1500, 5.0, 1.0, 0))
        .unwrap()
        .generate(0, 0)
        .unwrap();
    let cache = spectral_decompose(&sim.train, false).unwrap();
    let schedule = StepSchedule::constant(0.01, 1000).unwrap();
    let traj = run_gd_cached(&sim.train, &schedule, &cache).unwrap();
    let risk = true_risk_closed_form(&traj, &sim.truth).unwrap();
    let r = risk.values();
    assert!((r[0] - 26.0).abs() < 1e-9);
    assert!(r[..200].windows(2).all(|w| w[1] < w[0]));
    let early_drop = r[0] - r[100];
    let late_drop = (r[900] - r[1000]).abs();
    assert!(late_drop < 0.05 * early_drop, "{early_drop} {late_drop}");
    assert!(r.iter().skip(1).all(|&v| v < 26.0));
}

#[test]
fn gcv_follows_its_limit_but_not_the_risk() {
    let (n, p, r2, sigma2) = (1000, 2000, 25.0, 1.0);
    let prepared = PreparedModel::new(&SimModel::isotropic_linear(n, p, 5.0, sigma2, 0)).unwrap();
    let schedule = StepSchedule::constant(0.01, 500).unwrap();
    let seeds = 0..20u64;
    let steps: Vec<usize> = (10..=200).step_by(10).collect();
    let mut gcv_mean = vec![0.0; steps.len()];
    let mut late_gap = 0.0;
    for seed in seeds.clone() {
        let sim = prepared.generate(seed, 0).unwrap();
        let cache = spectral_decompose(&sim.train, false).unwrap();
        let traj = run_gd_cached(&sim.train, &schedule, &cache).unwrap();
        let gcv = gcv_risk(&sim.train, &traj, &cache).unwrap();
        let risk = true_risk_closed_form(&traj, &sim.truth).unwrap();
        for (slot, &k) in gcv_mean.iter_mut().zip(&steps) {
            *slot += gcv.values()[k] / 20.0;
        }
        late_gap += (gcv.values()[500] - risk.values()[500]) / 20.0;
    }
    let law = MpLaw::new(p as f64 / n as f64).unwrap();
    for (mean, &k) in gcv_mean.iter().zip(&steps) {
        let limit = gcv_limit(&law, r2, sigma2, 0.01 * k as f64).unwrap();
        assert!(
            (mean - limit).abs() < 0.05 * limit,
            "T={}: {mean} vs {limit}",
            0.01 * k as f64
        );
    }
    assert!(late_gap > 10.0, "GCV - risk at T = 5: {late_gap}");
}

#[test]
fn absolute_error_functional_tracks_monte_carlo() {
    let model = SimModel::heavy_tailed_nonlinear(500, 1000, 3);
    let sim = PreparedModel::new(&model).unwrap().generate(3, 0).unwrap();
    let cache = spectral_decompose(&sim.train, false).unwrap();
    let schedule = StepSchedule::constant(0.01, 300).unwrap();
    let traj = run_gd_cached(&sim.train, &schedule, &cache).unwrap();
    let loo = loo_predictions_fast(&sim.train, &schedule, 300, &cache).unwrap();
    let psi = ErrorFunctional::Absolute;
    let estimate = loo.curve(&psi, CurveLabel::FunctionalLoocv);
    let test = sim.truth.sample(20_000, &mut stream(3, 2)).unwrap();
    let truth = monte_carlo_on(&traj, &test, &psi);
    for k in 0..=300 {
        let (e, t) = (estimate.values()[k], truth.values()[k]);
        assert!((e - t).abs() < 0.05 * t, "k={k}: {e} vs {t}");
    }
}

#[test]
fn monte_carlo_risk_within_three_standard_errors() {
    let sim = PreparedModel::new(&SimModel::isotropic_linear(200, 300, 2.0, 1.0, 5))
        .unwrap()
        .generate(5, 0)
        .unwrap();
    let cache = spectral_decompose(&sim.train, false).unwrap();
    let schedule = StepSchedule::constant(0.05, 100).unwrap();
    let traj = run_gd_cached(&sim.train, &schedule, &cache).unwrap();
    let exact = true_risk_closed_form(&traj, &sim.truth).unwrap();
    let mc =
        true_risk_monte_carlo(&traj, &sim.truth, 100_000, 5, &ErrorFunctional::Squared).unwrap();
    let se = mc.stderr().unwrap();
    let outside = (0..=100)
        .filter(|&k| (mc.values()[k] - exact.values()[k]).abs() > 3.0 * se[k])
        .count();
    // Steps are strongly correlated, so count rather than require every k.
    assert!(outside <= 3, "{outside} of 101 steps outside 3 SE");
    assert!((mc.values()[50] - exact.values()[50]).abs() < 3.0 * se[50]);
}

#[test]
fn loocv_tuning_has_small_regret() {
    let sim = PreparedModel::new(&SimModel::isotropic_linear(500, 1000, 5.0, 1.0, 11))
        .unwrap()
        .generate(11, 0)
        .unwrap();
    let cache = spectral_decompose(&sim.train, false).unwrap();
    let schedule = StepSchedule::constant(0.01, 400).unwrap();
    let traj = run_gd_cached(&sim.train, &schedule, &cache).unwrap();
    let risk = true_risk_closed_form(&traj, &sim.truth).unwrap();
    let loo = loo_predictions_fast(&sim.train, &schedule, 400, &cache).unwrap();
    let chosen = tune_by_loocv(&loo.curve(&ErrorFunctional::Squared, CurveLabel::Loocv)).unwrap();
    let best = risk.values().iter().copied().fold(f64::INFINITY, f64::min);
    assert!(risk.values()[chosen] - best < 0.05, "chose k = {chosen}");
}

#[test]
fn linear_model_intervals_cover() {
    let sim = PreparedModel::new(&SimModel::isotropic_linear(500, 250, 2.0, 1.0, 21))
        .unwrap()
        .generate(21, 0)
        .unwrap();
    let cache = spectral_decompose(&sim.train, false).unwrap();
    let schedule = StepSchedule::constant(0.01, 300).unwrap();
    let traj = run_gd_cached(&sim.train, &schedule, &cache).unwrap();
    let loo = loo_predictions_fast(&sim.train, &schedule, 300, &cache).unwrap();
    let bands = ResidualBands::full_path(&loo, IntervalSpec::symmetric(0.8).unwrap()).unwrap();
    let report = coverage_monte_carlo(&bands, &traj, &sim.truth, 5000, 21).unwrap();
    assert_eq!(report.rows.len(), 301);
    for row in &report.rows {
        assert!(
            (row.coverage - 0.8).abs() <= 0.05,
            "k={}: {}",
            row.k,
            row.coverage
        );
        assert!(row.mean_length > 0.0);
    }
}

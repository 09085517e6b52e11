use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gdcv::asymptotics::limits::{mismatch, write_limit_csv, LimitCurves};
use gdcv::asymptotics::MpLaw;
use gdcv::gd::run_gd_cached;
use gdcv::intervals::{
    coverage_on, error_distribution_distance, test_errors_at, IntervalSpec, ResidualBands,
};
use gdcv::io::{csv_writer, fmt_f64};
use gdcv::loo::cost::cost_model;
use gdcv::loo::{loo_predictions_fast, loo_predictions_naive, loocv_fast};
use gdcv::par;
use gdcv::risk::{gcv_risk, monte_carlo_on, true_risk_closed_form, ErrorFunctional, RiskCurve};
use gdcv::simgen::{stream, PreparedModel, Simulation};
use gdcv::{spectral_decompose, Error, StepSchedule};

use crate::config::{ExperimentConfig, ExperimentKind};

/// Files written by a run plus any timings (kept out of the CSVs).
#[derive(Debug, Default)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

pub fn run(config: &ExperimentConfig, out: &Path) -> gdcv::Result<RunArtifacts> {
    std::fs::create_dir_all(out)?;
    match config.kind {
        ExperimentKind::Fig1 => per_seed(config, out, fig1),
        ExperimentKind::Fig2Coverage => per_seed(config, out, fig2_coverage),
        ExperimentKind::Fig3Distributions => per_seed(config, out, fig3_distributions),
        ExperimentKind::Custom => per_seed(config, out, custom),
        ExperimentKind::LimitsMismatch => limits_mismatch(config, out),
        ExperimentKind::ShortcutBench => shortcut_bench(config, out),
    }
}

type SeedRun = fn(&ExperimentConfig, &Simulation, u64, &Path) -> gdcv::Result<Vec<PathBuf>>;

fn per_seed(config: &ExperimentConfig, out: &Path, f: SeedRun) -> gdcv::Result<RunArtifacts> {
    let model = config.model.as_ref().expect("validated config has a model");
    let prepared = PreparedModel::new(model)?;
    let results = par::map_slice(&config.seeds, |&seed| -> gdcv::Result<Vec<PathBuf>> {
        let sim = prepared.generate(seed, 0)?;
        f(config, &sim, seed, out)
    });
    let mut artifacts = RunArtifacts::default();
    for r in results {
        artifacts.files.extend(r?);
    }
    Ok(artifacts)
}

fn create(path: &Path) -> gdcv::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn truncated(config: &ExperimentConfig) -> StepSchedule {
    config.schedule.truncated(config.k_max)
}

/// True risk in closed form for linear models, otherwise by Monte Carlo on
/// `n_test` fresh points.
fn true_risk(
    config: &ExperimentConfig,
    sim: &Simulation,
    seed: u64,
    traj: &gdcv::gd::GdTrajectory,
) -> gdcv::Result<RiskCurve> {
    if sim.truth.is_linear() {
        true_risk_closed_form(traj, &sim.truth)
    } else {
        let test = sim.truth.sample(config.n_test, &mut stream(seed, 2))?;
        Ok(monte_carlo_on(traj, &test, &ErrorFunctional::Squared))
    }
}

fn fig1(
    config: &ExperimentConfig,
    sim: &Simulation,
    seed: u64,
    out: &Path,
) -> gdcv::Result<Vec<PathBuf>> {
    let schedule = truncated(config);
    let cache = spectral_decompose(&sim.train, false)?;
    let traj = run_gd_cached(&sim.train, &schedule, &cache)?;
    let risk = true_risk(config, sim, seed, &traj)?;
    let gcv = gcv_risk(&sim.train, &traj, &cache)?;
    let (loo, _) = loocv_fast(&sim.train, &schedule, config.k_max, &cache)?;
    let path = out.join(format!("fig1_seed{seed}.csv"));
    let mut w = csv_writer(create(&path)?);
    w.write_record(["k", "true_risk", "gcv", "loocv"])?;
    for k in 0..=config.k_max {
        w.write_record([
            k.to_string(),
            fmt_f64(risk.values()[k]),
            fmt_f64(gcv.values()[k]),
            fmt_f64(loo.values()[k]),
        ])?;
    }
    w.flush()?;
    Ok(vec![path])
}

fn recorded_steps(k_max: usize, stride: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=k_max).step_by(stride).collect();
    if steps.last() != Some(&k_max) {
        steps.push(k_max);
    }
    steps
}

fn fig2_coverage(
    config: &ExperimentConfig,
    sim: &Simulation,
    seed: u64,
    out: &Path,
) -> gdcv::Result<Vec<PathBuf>> {
    let schedule = truncated(config);
    let cache = spectral_decompose(&sim.train, false)?;
    let traj = run_gd_cached(&sim.train, &schedule, &cache)?;
    let loo = loo_predictions_fast(&sim.train, &schedule, config.k_max, &cache)?;
    let test = sim.truth.sample(config.n_test, &mut stream(seed, 2))?;
    let steps = recorded_steps(config.k_max, config.intervals.stride);
    let path = out.join(format!("coverage_seed{seed}.csv"));
    let mut rows = Vec::new();
    for &level in &config.intervals.levels {
        let bands = ResidualBands::from_loo(&loo, IntervalSpec::symmetric(level)?, &steps)?;
        rows.extend(coverage_on(&bands, &traj, &test)?.rows);
    }
    gdcv::intervals::CoverageReport { rows }.write_csv(create(&path)?)?;
    Ok(vec![path])
}

fn fig3_distributions(
    config: &ExperimentConfig,
    sim: &Simulation,
    seed: u64,
    out: &Path,
) -> gdcv::Result<Vec<PathBuf>> {
    let schedule = truncated(config);
    let cache = spectral_decompose(&sim.train, false)?;
    let traj = run_gd_cached(&sim.train, &schedule, &cache)?;
    let loo = loo_predictions_fast(&sim.train, &schedule, config.k_max, &cache)?;
    let test = sim.truth.sample(config.n_test, &mut stream(seed, 2))?;
    let steps = &config.distribution_steps;
    let errors = test_errors_at(&traj, &test, steps);
    let dist_path = out.join(format!("distributions_seed{seed}.csv"));
    let ks_path = out.join(format!("ks_seed{seed}.csv"));
    let mut dist = csv_writer(create(&dist_path)?);
    let mut ks = csv_writer(create(&ks_path)?);
    dist.write_record(["k", "source", "error"])?;
    ks.write_record(["k", "ks"])?;
    for (c, &k) in steps.iter().enumerate() {
        let residuals = loo.residuals(k);
        let test_col: Vec<f64> = errors.column(c).iter().copied().collect();
        for r in &residuals {
            dist.write_record([k.to_string(), "loo".into(), fmt_f64(*r)])?;
        }
        for e in &test_col {
            dist.write_record([k.to_string(), "test".into(), fmt_f64(*e)])?;
        }
        ks.write_record([
            k.to_string(),
            fmt_f64(error_distribution_distance(&residuals, &test_col)?),
        ])?;
    }
    dist.flush()?;
    ks.flush()?;
    Ok(vec![dist_path, ks_path])
}

fn custom(
    config: &ExperimentConfig,
    sim: &Simulation,
    seed: u64,
    out: &Path,
) -> gdcv::Result<Vec<PathBuf>> {
    let schedule = truncated(config);
    let cache = spectral_decompose(&sim.train, false)?;
    let traj = run_gd_cached(&sim.train, &schedule, &cache)?;
    let risk = true_risk(config, sim, seed, &traj)?;
    let gcv = gcv_risk(&sim.train, &traj, &cache)?;
    let (loo, preds) = loocv_fast(&sim.train, &schedule, config.k_max, &cache)?;
    let mut files = Vec::new();
    for (name, curve) in [("true_risk", &risk), ("gcv", &gcv), ("loocv", &loo)] {
        let path = out.join(format!("{name}_seed{seed}.csv"));
        curve.write_csv(create(&path)?)?;
        files.push(path);
    }
    let path = out.join(format!("loo_predictions_seed{seed}.csv"));
    preds.write_csv(create(&path)?)?;
    files.push(path);
    Ok(files)
}

fn limits_mismatch(config: &ExperimentConfig, out: &Path) -> gdcv::Result<RunArtifacts> {
    let block = &config.limits;
    let grid = block.t_grid.values();
    let curves = block
        .curve_zetas
        .iter()
        .map(|&zeta| LimitCurves::compute(&MpLaw::new(zeta)?, block.r2, block.sigma2, &grid))
        .collect::<gdcv::Result<Vec<_>>>()?;
    let curves_path = out.join("limits.csv");
    write_limit_csv(&curves, create(&curves_path)?)?;

    let cells: Vec<(f64, f64)> = block
        .surface_zetas
        .iter()
        .flat_map(|&z| grid.iter().map(move |&t| (z, t)))
        .collect();
    let values = par::map_slice(&cells, |&(zeta, t)| {
        mismatch(&MpLaw::new(zeta)?, block.r2, block.sigma2, t)
    });
    let surface_path = out.join("mismatch_surface.csv");
    let mut w = csv_writer(create(&surface_path)?);
    w.write_record(["T", "zeta", "value", "label"])?;
    for ((zeta, t), v) in cells.iter().zip(values) {
        w.write_record([
            fmt_f64(*t),
            fmt_f64(*zeta),
            fmt_f64(v?.abs()),
            "abs_mismatch".into(),
        ])?;
    }
    w.flush()?;
    Ok(RunArtifacts {
        files: vec![curves_path, surface_path],
        ..Default::default()
    })
}

fn best_time<T>(reps: usize, mut f: impl FnMut() -> gdcv::Result<T>) -> gdcv::Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let value = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(value);
    }
    Ok((best, last.expect("at least one repetition")))
}

fn shortcut_bench(config: &ExperimentConfig, out: &Path) -> gdcv::Result<RunArtifacts> {
    let seed = config.seeds[0];
    let model = config
        .model_for(seed)
        .expect("validated config has a model");
    let sim = PreparedModel::new(&model)?.generate(seed, 0)?;
    let data = &sim.train;
    let reps = config.bench.repetitions;
    let mut artifacts = RunArtifacts::default();
    let path = out.join("cost_model.csv");
    let mut w = csv_writer(create(&path)?);
    w.write_record(["k", "naive_flops", "shortcut_flops", "monomial_flops"])?;
    for &k in &config.bench.steps {
        let (t_naive, naive) =
            best_time(reps, || loo_predictions_naive(data, &config.schedule, k))?;
        let (t_fast, fast) = best_time(reps, || {
            let cache = spectral_decompose(data, false)?;
            loo_predictions_fast(data, &config.schedule, k, &cache)
        })?;
        artifacts.timings.insert(format!("naive_k{k}_s"), t_naive);
        artifacts.timings.insert(format!("shortcut_k{k}_s"), t_fast);
        artifacts
            .diagnostics
            .insert(format!("max_abs_diff_k{k}"), naive.max_abs_diff(&fast));
        let cost = cost_model(data.n(), data.d(), k);
        w.write_record([
            k.to_string(),
            fmt_f64(cost.naive_flops),
            fmt_f64(cost.shortcut_flops),
            fmt_f64(cost.monomial_flops),
        ])?;
    }
    w.flush()?;
    artifacts.files.push(path);
    Ok(artifacts)
}

/// Exit code for a library error raised during a run.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Io(_) | Error::Csv(_) => 2,
        _ => 3,
    }
}

//! Experiment configuration files (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! kind = "fig1"
//! seeds = [0, 1, 2]
//! output_dir = "out/fig1"
//!
//! [model]
//! n = 1000
//! p = 2000
//! covariance = { kind = "isotropic" }
//! signal = { kind = "random-sphere", norm = 5.0 }
//! response = { kind = "linear" }
//! noise = { kind = "gaussian", sigma2 = 1.0 }
//!
//! [schedule]
//! delta = 0.01
//! steps = 500
//! ```
//!
//! Omitted blocks fall back to the preset for `kind`.

use std::path::PathBuf;

use gdcv::simgen::SimModel;
use gdcv::StepSchedule;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Fig1,
    Fig2Coverage,
    Fig3Distributions,
    LimitsMismatch,
    ShortcutBench,
    Custom,
}

/// Constant step size for `steps` iterations, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleBlock {
    Constant { delta: f64, steps: usize },
    Explicit { deltas: Vec<f64> },
}

impl ScheduleBlock {
    pub fn build(&self) -> gdcv::Result<StepSchedule> {
        match self {
            ScheduleBlock::Constant { delta, steps } => StepSchedule::constant(*delta, *steps),
            ScheduleBlock::Explicit { deltas } => StepSchedule::new(deltas.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl TGrid {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => vec![],
            1 => vec![self.start],
            m => (0..m)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (m - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsBlock {
    pub r2: f64,
    pub sigma2: f64,
    /// Aspect ratios with full curve output.
    pub curve_zetas: Vec<f64>,
    /// Aspect ratios of the `|D(T)|` surface.
    pub surface_zetas: Vec<f64>,
    pub t_grid: TGrid,
}

impl Default for LimitsBlock {
    fn default() -> Self {
        Self {
            r2: 5.0,
            sigma2: 1.0,
            curve_zetas: vec![0.5, 2.0],
            surface_zetas: (1..=30).map(|i| i as f64 / 10.0).collect(),
            t_grid: TGrid {
                start: 0.0,
                stop: 5.0,
                points: 101,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalsBlock {
    pub levels: Vec<f64>,
    pub n_test: usize,
    /// Record every `stride`-th step.
    pub stride: usize,
}

impl Default for IntervalsBlock {
    fn default() -> Self {
        Self {
            levels: vec![0.8, 0.9, 0.95],
            n_test: 5000,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchBlock {
    pub steps: Vec<usize>,
    pub repetitions: usize,
}

impl Default for BenchBlock {
    fn default() -> Self {
        Self {
            steps: vec![100, 200, 400],
            repetitions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<SimModel>,
    #[serde(default)]
    pub schedule: Option<ScheduleBlock>,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub limits: Option<LimitsBlock>,
    #[serde(default)]
    pub intervals: Option<IntervalsBlock>,
    #[serde(default)]
    pub distribution_steps: Option<Vec<usize>>,
    #[serde(default)]
    pub bench: Option<BenchBlock>,
}

/// A validated configuration with presets filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub k_max: usize,
    pub output_dir: PathBuf,
    pub model: Option<SimModel>,
    pub schedule: StepSchedule,
    pub n_test: usize,
    pub limits: LimitsBlock,
    pub intervals: IntervalsBlock,
    pub distribution_steps: Vec<usize>,
    pub bench: BenchBlock,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<gdcv::Error> for ConfigError {
    fn from(e: gdcv::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

fn preset_model(kind: ExperimentKind) -> Option<SimModel> {
    match kind {
        ExperimentKind::Fig1 => Some(SimModel::isotropic_linear(1000, 2000, 5.0, 1.0, 0)),
        ExperimentKind::Fig2Coverage | ExperimentKind::Fig3Distributions => {
            Some(SimModel::heavy_tailed_nonlinear(500, 1000, 0))
        }
        ExperimentKind::ShortcutBench => Some(SimModel::isotropic_linear(300, 300, 1.0, 1.0, 0)),
        ExperimentKind::LimitsMismatch | ExperimentKind::Custom => None,
    }
}

fn preset_schedule(kind: ExperimentKind) -> ScheduleBlock {
    let steps = match kind {
        ExperimentKind::ShortcutBench => 400,
        _ => 500,
    };
    ScheduleBlock::Constant { delta: 0.01, steps }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if raw.version != CONFIG_VERSION {
            return invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                raw.version
            ));
        }
        let model = raw.model.clone().or_else(|| preset_model(raw.kind));
        if let Some(m) = &model {
            m.validate()?;
        } else if raw.kind == ExperimentKind::Custom {
            return invalid("custom experiments need a [model] block".into());
        }
        let schedule = raw
            .schedule
            .clone()
            .unwrap_or_else(|| preset_schedule(raw.kind))
            .build()?;
        let k_max = raw.k_max.unwrap_or(schedule.len());
        if k_max > schedule.len() {
            return invalid(format!(
                "k_max {k_max} exceeds the schedule length {}",
                schedule.len()
            ));
        }
        let seeds = raw.seeds.clone().unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return invalid("seed list is empty".into());
        }
        let limits = raw.limits.clone().unwrap_or_default();
        if limits.t_grid.points == 0
            || limits.t_grid.start < 0.0
            || limits.t_grid.stop < limits.t_grid.start
        {
            return invalid("t_grid needs points > 0 and 0 <= start <= stop".into());
        }
        let intervals = raw.intervals.clone().unwrap_or_default();
        if intervals.stride == 0 {
            return invalid("intervals.stride must be positive".into());
        }
        for &level in &intervals.levels {
            gdcv::intervals::IntervalSpec::symmetric(level)?;
        }
        let n_test = raw.n_test.unwrap_or(intervals.n_test);
        if n_test < gdcv::intervals::MIN_TEST_POINTS {
            return invalid(format!(
                "n_test must be at least {}",
                gdcv::intervals::MIN_TEST_POINTS
            ));
        }
        let distribution_steps = raw
            .distribution_steps
            .clone()
            .unwrap_or_else(|| vec![0, k_max / 4, k_max / 2, k_max]);
        if distribution_steps.iter().any(|&k| k > k_max) {
            return invalid("distribution_steps beyond k_max".into());
        }
        let bench = raw.bench.clone().unwrap_or_default();
        let bench_ok =
            bench.repetitions > 0 && bench.steps.iter().all(|&k| k > 0 && k <= schedule.len());
        if raw.kind == ExperimentKind::ShortcutBench && !bench_ok {
            return invalid("bench steps must lie in 1..=schedule length, repetitions > 0".into());
        }
        Ok(Self {
            kind: raw.kind,
            seeds,
            k_max,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("gdcv-out")),
            model,
            schedule,
            n_test,
            limits,
            intervals,
            distribution_steps,
            bench,
        })
    }

    /// The model for one seed.
    pub fn model_for(&self, seed: u64) -> Option<SimModel> {
        self.model.clone().map(|mut m| {
            m.seed = seed;
            m
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_fill_in() {
        let c = ExperimentConfig::parse("version = 1\nkind = \"fig1\"\n").unwrap();
        let m = c.model.unwrap();
        assert_eq!((m.n, m.p), (1000, 2000));
        assert_eq!(c.schedule.constant_step(), Some(0.01));
        assert_eq!(c.k_max, 500);
        assert_eq!(c.seeds, vec![0]);
    }

    #[test]
    fn full_block_parses() {
        let text = r#"
            version = 1
            kind = "custom"
            seeds = [3, 4]
            k_max = 5
            [model]
            n = 20
            p = 10
            covariance = { kind = "ar", rho = 0.5 }
            signal = { kind = "top-eigenvector", energy = 2.0 }
            response = { kind = "linear-plus-quadratic", a = { kind = "identity" } }
            noise = { kind = "student-t", dof = 5.0, standardized = true }
            [schedule]
            deltas = [0.1, 0.1, 0.1, 0.1, 0.1, 0.2]
        "#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.schedule.len(), 6);
        assert_eq!(c.model_for(4).unwrap().seed, 4);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ExperimentConfig::parse(""),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("version = 2\nkind = \"fig1\"\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("version = 1\nkind = \"custom\"\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("version = 1\nkind = \"fig1\"\nk_max = 900\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("version = 1\nkind = \"fig1\"\nbogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut count = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let text = std::fs::read_to_string(&path).unwrap();
            ExperimentConfig::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
        assert_eq!(count, 7);
    }

    #[test]
    fn t_grid_endpoints() {
        let g = TGrid {
            start: 0.0,
            stop: 1.0,
            points: 5,
        };
        assert_eq!(g.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}

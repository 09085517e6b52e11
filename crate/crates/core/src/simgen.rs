//! Seeded synthetic regression models.
//!
//! Every model is driven by a ChaCha20 generator (`rand_chacha` 0.3.1, pinned
//! in the workspace manifest) seeded with `seed_from_u64`. Independent parts of
//! a draw use separate ChaCha streams so that, for example, changing the test
//! set size leaves the training set untouched:
//!
//! | stream | use |
//! |---|---|
//! | 0 | training features |
//! | 1 | training noise |
//! | 2 | test set |
//! | 3 | random signal direction |

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

const STREAM_FEATURES: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_SIGNAL: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Covariance {
    Isotropic,
    /// `Sigma_ij = rho^|i-j|`.
    Ar {
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Signal {
    /// Uniformly random direction with the given Euclidean norm.
    RandomSphere { norm: f64 },
    /// Top eigenvector of the covariance scaled so `b^T Sigma b = energy`.
    TopEigenvector { energy: f64 },
}

/// The matrix `A` of the centred quadratic term `(x^T A x - tr[A Sigma]) / p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum QuadraticForm {
    /// `A = I`, the default.
    Identity,
    /// `A = c I`.
    Scaled { c: f64 },
    /// Symmetric p x p matrix, row-major.
    Dense { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Response {
    Linear,
    LinearPlusQuadratic { a: QuadraticForm },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Noise {
    Gaussian {
        sigma2: f64,
    },
    /// Student t with `dof` degrees of freedom; rescaled to unit variance
    /// when `standardized`.
    StudentT {
        dof: f64,
        standardized: bool,
    },
}

impl Noise {
    pub fn variance(&self) -> f64 {
        match self {
            Noise::Gaussian { sigma2 } => *sigma2,
            Noise::StudentT {
                standardized: true, ..
            } => 1.0,
            Noise::StudentT { dof, .. } => dof / (dof - 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub n: usize,
    pub p: usize,
    pub covariance: Covariance,
    pub signal: Signal,
    pub response: Response,
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
}

impl SimModel {
    /// Isotropic Gaussian features, linear response, Gaussian noise.
    pub fn isotropic_linear(n: usize, p: usize, signal_norm: f64, sigma2: f64, seed: u64) -> Self {
        SimModel {
            n,
            p,
            covariance: Covariance::Isotropic,
            signal: Signal::RandomSphere { norm: signal_norm },
            response: Response::Linear,
            noise: Noise::Gaussian { sigma2 },
            seed,
        }
    }

    /// AR(0.25) features, signal along the top eigenvector with energy 50,
    /// centred quadratic term with `A = I`, standardized t_5 noise.
    pub fn heavy_tailed_nonlinear(n: usize, p: usize, seed: u64) -> Self {
        SimModel {
            n,
            p,
            covariance: Covariance::Ar { rho: 0.25 },
            signal: Signal::TopEigenvector { energy: 50.0 },
            response: Response::LinearPlusQuadratic {
                a: QuadraticForm::Identity,
            },
            noise: Noise::StudentT {
                dof: 5.0,
                standardized: true,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 || self.p == 0 {
            return bad("n and p must be positive".into());
        }
        if let Covariance::Ar { rho } = self.covariance {
            if !(rho.is_finite() && rho.abs() < 1.0) {
                return bad(format!("AR coefficient must satisfy |rho| < 1, got {rho}"));
            }
        }
        match self.signal {
            Signal::RandomSphere { norm: v } | Signal::TopEigenvector { energy: v }
                if !(v.is_finite() && v >= 0.0) =>
            {
                return bad(format!(
                    "signal size must be finite and nonnegative, got {v}"
                ));
            }
            Signal::TopEigenvector { .. }
                if self.covariance == Covariance::Isotropic && self.p > 1 =>
            {
                return bad("the top eigenvector of an isotropic covariance is not unique".into());
            }
            _ => {}
        }
        match self.noise {
            Noise::Gaussian { sigma2 } if !(sigma2.is_finite() && sigma2 >= 0.0) => {
                return bad(format!(
                    "noise variance must be finite and nonnegative, got {sigma2}"
                ));
            }
            Noise::StudentT { dof, .. } if !(dof.is_finite() && dof > 2.0) => {
                return bad(format!(
                    "t noise needs more than 2 degrees of freedom, got {dof}"
                ));
            }
            _ => {}
        }
        if let Response::LinearPlusQuadratic {
            a: QuadraticForm::Dense { rows },
        } = &self.response
        {
            if rows.len() != self.p || rows.iter().any(|r| r.len() != self.p) {
                return bad(format!("quadratic form must be {0} x {0}", self.p));
            }
            for (i, row) in rows.iter().enumerate() {
                for (j, &a) in row.iter().enumerate().take(i) {
                    if (a - rows[j][i]).abs() > 1e-12 * (1.0 + a.abs()) {
                        return bad("quadratic form must be symmetric".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// `Sigma_ij = rho^|i-j|`.
pub fn ar_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// `(x^T A x - tr[A Sigma]) / p` with `p = x.len()`.
pub fn quadratic_response_component(
    x: &DVector<f64>,
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let p = x.len() as f64;
    let quad = x.dot(&(a * x));
    let trace = (a * sigma).trace();
    (quad - trace) / p
}

#[derive(Debug, Clone)]
enum Quad {
    Scaled(f64),
    Dense(DMatrix<f64>, f64),
}

impl Quad {
    fn eval(&self, x: &[f64], trace_sigma: f64) -> f64 {
        let p = x.len() as f64;
        match self {
            Quad::Scaled(c) => c * (x.iter().map(|v| v * v).sum::<f64>() - trace_sigma) / p,
            Quad::Dense(a, tr_a_sigma) => {
                let xv = DVector::from_column_slice(x);
                (xv.dot(&(a * &xv)) - tr_a_sigma) / p
            }
        }
    }
}

/// Everything needed to draw fresh observations and evaluate the oracle risk.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta0: DVector<f64>,
    /// Lower Cholesky factor of the covariance; `None` for the identity.
    pub covariance_factor: Option<Arc<DMatrix<f64>>>,
    pub noise: Noise,
    quadratic: Option<Quad>,
    trace_sigma: f64,
}

impl GroundTruth {
    pub fn noise_variance(&self) -> f64 {
        self.noise.variance()
    }

    pub fn is_linear(&self) -> bool {
        self.quadratic.is_none()
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    /// `b^T Sigma b`.
    pub fn sigma_norm2(&self, b: &DVector<f64>) -> f64 {
        match &self.covariance_factor {
            None => b.norm_squared(),
            Some(l) => l.tr_mul(b).norm_squared(),
        }
    }

    /// Effective signal energy `b0^T Sigma b0`.
    pub fn signal_energy(&self) -> f64 {
        self.sigma_norm2(&self.beta0)
    }

    /// Nonlinear part of `E[y | x]`, zero for linear models.
    pub fn nonlinear_component(&self, x: &[f64]) -> f64 {
        self.quadratic
            .as_ref()
            .map_or(0.0, |q| q.eval(x, self.trace_sigma))
    }

    /// Draws `rows` observations from `rng`: features, then all noise.
    pub fn sample(&self, rows: usize, rng: &mut ChaCha20Rng) -> Result<Dataset> {
        let x = self.sample_features(rows, rng);
        let noise = sample_noise(&self.noise, rows, rng);
        self.respond(x, noise)
    }

    fn sample_features(&self, rows: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        let p = self.p();
        let z: Vec<f64> = (0..rows * p).map(|_| rng.sample(StandardNormal)).collect();
        let z = DMatrix::from_row_slice(rows, p, &z);
        match &self.covariance_factor {
            None => z,
            Some(l) => z * l.transpose(),
        }
    }

    fn respond(&self, x: DMatrix<f64>, noise: Vec<f64>) -> Result<Dataset> {
        let mut y = &x * &self.beta0;
        if self.quadratic.is_some() {
            for i in 0..x.nrows() {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                y[i] += self.nonlinear_component(&row);
            }
        }
        for (yi, e) in y.iter_mut().zip(noise) {
            *yi += e;
        }
        Dataset::new(x, y, false)
    }
}

fn sample_noise(noise: &Noise, rows: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    match *noise {
        Noise::Gaussian { sigma2 } => {
            let sd = sigma2.sqrt();
            (0..rows)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        Noise::StudentT { dof, standardized } => {
            let t = StudentT::new(dof).expect("dof validated");
            let scale = if standardized {
                ((dof - 2.0) / dof).sqrt()
            } else {
                1.0
            };
            (0..rows).map(|_| scale * t.sample(rng)).collect()
        }
    }
}

/// One seeded draw of a model.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub truth: GroundTruth,
}

/// A validated model with its seed-independent pieces (covariance factor,
/// eigenvector signal) computed once.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    model: SimModel,
    factor: Option<Arc<DMatrix<f64>>>,
    top_direction: Option<DVector<f64>>,
    quadratic: Option<Quad>,
    trace_sigma: f64,
}

impl PreparedModel {
    pub fn new(model: &SimModel) -> Result<Self> {
        model.validate()?;
        let p = model.p;
        let sigma = match model.covariance {
            Covariance::Isotropic => None,
            Covariance::Ar { rho } => Some(ar_covariance(p, rho)),
        };
        let factor = match &sigma {
            None => None,
            Some(s) => Some(Arc::new(
                Cholesky::new(s.clone())
                    .ok_or(Error::SingularSystem)?
                    .unpack(),
            )),
        };
        let top_direction = match model.signal {
            Signal::TopEigenvector { energy } => Some(match &sigma {
                None => DVector::from_element(1, energy.sqrt()),
                Some(s) => {
                    let eig = SymmetricEigen::new(s.clone());
                    let top = eig.eigenvalues.imax();
                    let lambda = eig.eigenvalues[top];
                    let mut w = eig.eigenvectors.column(top).into_owned();
                    // Fix the sign so the direction is reproducible.
                    if w.sum() < 0.0 {
                        w.neg_mut();
                    }
                    w * (energy / lambda).sqrt()
                }
            }),
            _ => None,
        };
        let quadratic = match &model.response {
            Response::Linear => None,
            Response::LinearPlusQuadratic { a } => Some(match a {
                QuadraticForm::Identity => Quad::Scaled(1.0),
                QuadraticForm::Scaled { c } => Quad::Scaled(*c),
                QuadraticForm::Dense { rows } => {
                    let a = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
                    let tr = match &sigma {
                        None => a.trace(),
                        Some(s) => (&a * s).trace(),
                    };
                    Quad::Dense(a, tr)
                }
            }),
        };
        Ok(Self {
            model: model.clone(),
            factor,
            top_direction,
            quadratic,
            // Both supported covariances have unit diagonal.
            trace_sigma: p as f64,
        })
    }

    pub fn model(&self) -> &SimModel {
        &self.model
    }

    /// Draws training data (and `extra_test` test rows) for `seed`.
    pub fn generate(&self, seed: u64, extra_test: usize) -> Result<Simulation> {
        let truth = self.truth(seed);
        let mut rng = stream(seed, STREAM_FEATURES);
        let x = truth.sample_features(self.model.n, &mut rng);
        let noise = sample_noise(&truth.noise, self.model.n, &mut stream(seed, STREAM_NOISE));
        let train = truth.respond(x, noise)?;
        let test = if extra_test > 0 {
            Some(truth.sample(extra_test, &mut stream(seed, STREAM_TEST))?)
        } else {
            None
        };
        Ok(Simulation { train, test, truth })
    }

    fn truth(&self, seed: u64) -> GroundTruth {
        let beta0 = match (&self.model.signal, &self.top_direction) {
            (_, Some(w)) => w.clone(),
            (Signal::RandomSphere { norm }, None) => {
                let mut rng = stream(seed, STREAM_SIGNAL);
                let g = DVector::from_fn(self.model.p, |_, _| rng.sample::<f64, _>(StandardNormal));
                let len = g.norm();
                if len == 0.0 {
                    g
                } else {
                    g * (norm / len)
                }
            }
            (Signal::TopEigenvector { .. }, None) => unreachable!("prepared in new"),
        };
        GroundTruth {
            beta0,
            covariance_factor: self.factor.clone(),
            noise: self.model.noise.clone(),
            quadratic: self.quadratic.clone(),
            trace_sigma: self.trace_sigma,
        }
    }
}

/// `generate` for a single model using its own seed.
pub fn generate(model: &SimModel, extra_test: usize) -> Result<Simulation> {
    PreparedModel::new(model)?.generate(model.seed, extra_test)
}

/// A ChaCha20 generator for `seed` positioned on `stream`.
pub fn stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

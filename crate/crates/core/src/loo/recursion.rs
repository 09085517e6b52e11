//! LOO shortcut in the monomial basis.
//!
//! `b_{k,-i} = b_k + A_{i,k} x_i + sum_{j=1}^{k-1} B_{i,k}^{(j)} (X^T X)^j x_i`
//! with
//!
//! ```text
//! A_{i,k+1}     = A_{i,k} - c_k (y_i - x_i^T b_{k,-i})
//! B_{i,k+1}^(1) = B_{i,k}^(1) - c_k A_{i,k}
//! B_{i,k+1}^(j) = B_{i,k}^(j) - c_k B_{i,k}^(j-1),   2 <= j <= k
//! ```
//!
//! where `c_k = delta_k / n` and `B_{i,k}^(k) = 0`. Powers of `X^T X` grow
//! geometrically, so the state stores `H_ij / L^j` and `B^(j) L^j` with `L` the
//! largest eigenvalue of `X^T X`. The coefficients still behave like binomial
//! coefficients of `(1 - c L t)^k`, and the final sum cancels them; expect
//! accuracy to degrade once `k c L` exceeds a few units.

use nalgebra::{DMatrix, DVector};

use super::{check_k_max, raw_singular_values, LooPredictions, OVERFLOW_LIMIT};
use crate::data::{Dataset, StepSchedule};
use crate::error::{Error, Result};
use crate::gd::run_gd;
use crate::par;
use crate::spectral::SpectralCache;

/// Default ceiling on stored `B` coefficients (512 MiB of f64).
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 26;

/// Shortcut coefficients for all rows and steps.
#[derive(Debug, Clone)]
pub struct LooShortcutState {
    /// n x (K+1), `A_{i,k}`.
    a: DMatrix<f64>,
    /// Per row, the ragged triangle of scaled `B_{i,k}^(j)`, j = 1..k-1.
    b_scaled: Vec<Vec<f64>>,
    /// n x K, `x_i^T (X^T X)^j x_i / L^j` for j = 0..K-1.
    h_scaled: DMatrix<f64>,
    scale: f64,
    predictions: LooPredictions,
}

fn offset(k: usize) -> usize {
    if k < 2 {
        0
    } else {
        (k - 1) * (k - 2) / 2
    }
}

impl LooShortcutState {
    /// Runs the recursion for `k_max` steps, refusing when the `B` triangle
    /// would exceed `memory_budget` entries.
    pub fn build(
        data: &Dataset,
        schedule: &StepSchedule,
        k_max: usize,
        cache: &SpectralCache,
        memory_budget: usize,
    ) -> Result<Self> {
        check_k_max(schedule, k_max)?;
        let needed = data.n().saturating_mul(offset(k_max + 1));
        if needed > memory_budget {
            return Err(Error::MemoryBudget {
                needed,
                budget: memory_budget,
            });
        }
        let (h_scaled, scale) = scaled_quadratic_forms(cache, k_max.max(1));
        let truncated = StepSchedule::new_unchecked(schedule.deltas()[..k_max].to_vec());
        let fitted =
            run_gd(data, &truncated, &DVector::zeros(data.d()))?.predictions(data.features());
        let n = data.n();
        let rows = par::map_range(n, |i| {
            row_recursion(
                fitted.row(i).iter().copied().collect(),
                data.response()[i],
                h_scaled.row(i).iter().copied().collect(),
                truncated.deltas(),
                n as f64,
                scale,
                true,
            )
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let a = DMatrix::from_fn(n, k_max + 1, |i, k| rows[i].a[k]);
        let preds = DMatrix::from_fn(n, k_max + 1, |i, k| rows[i].predictions[k]);
        Ok(Self {
            a,
            b_scaled: rows.into_iter().map(|r| r.b).collect(),
            h_scaled,
            scale,
            predictions: LooPredictions::new(preds, data.response().clone()),
        })
    }

    pub fn a(&self, i: usize, k: usize) -> f64 {
        self.a[(i, k)]
    }

    /// `B_{i,k}^(j)`, zero for `j >= k`.
    pub fn b(&self, i: usize, k: usize, j: usize) -> f64 {
        if j == 0 || j >= k {
            return 0.0;
        }
        self.b_scaled[i][offset(k) + j - 1] / self.scale.powi(j as i32)
    }

    /// `x_i^T (X^T X)^j x_i`; may overflow to infinity for large `j`.
    pub fn h_quad(&self, i: usize, j: usize) -> f64 {
        self.h_scaled[(i, j)] * self.scale.powi(j as i32)
    }

    pub fn predictions(&self) -> &LooPredictions {
        &self.predictions
    }
}

/// Monomial-basis LOO predictions without storing the coefficient history.
pub fn loo_predictions_monomial(
    data: &Dataset,
    schedule: &StepSchedule,
    k_max: usize,
    cache: &SpectralCache,
) -> Result<LooPredictions> {
    check_k_max(schedule, k_max)?;
    let (h_scaled, scale) = scaled_quadratic_forms(cache, k_max.max(1));
    let deltas = &schedule.deltas()[..k_max];
    let truncated = StepSchedule::new_unchecked(deltas.to_vec());
    let fitted = run_gd(data, &truncated, &DVector::zeros(data.d()))?.predictions(data.features());
    let n = data.n();
    let rows = par::map_range(n, |i| {
        row_recursion(
            fitted.row(i).iter().copied().collect(),
            data.response()[i],
            h_scaled.row(i).iter().copied().collect(),
            deltas,
            n as f64,
            scale,
            false,
        )
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LooPredictions::new(
        DMatrix::from_fn(n, k_max + 1, |i, k| rows[i].predictions[k]),
        data.response().clone(),
    ))
}

/// `x_i^T (X^T X)^j x_i / L^j` for j = 0..powers, from the decomposition.
fn scaled_quadratic_forms(cache: &SpectralCache, powers: usize) -> (DMatrix<f64>, f64) {
    let raw = raw_singular_values(cache);
    let gram: Vec<f64> = raw.iter().map(|s| s * s).collect();
    let scale = gram.iter().copied().fold(0.0, f64::max);
    let ratio: Vec<f64> = gram
        .iter()
        .map(|g| if scale > 0.0 { g / scale } else { 0.0 })
        .collect();
    let u = cache.left_vectors();
    let n = u.nrows();
    let mut h = DMatrix::zeros(n, powers);
    for i in 0..n {
        let mut w: Vec<f64> = (0..raw.len())
            .map(|m| (raw[m] * u[(i, m)]).powi(2))
            .collect();
        for j in 0..powers {
            h[(i, j)] = w.iter().sum();
            for (wm, r) in w.iter_mut().zip(&ratio) {
                *wm *= r;
            }
        }
    }
    (h, if scale > 0.0 { scale } else { 1.0 })
}

struct RowState {
    a: Vec<f64>,
    b: Vec<f64>,
    predictions: Vec<f64>,
}

fn row_recursion(
    fitted: Vec<f64>,
    y: f64,
    h: Vec<f64>,
    deltas: &[f64],
    n: f64,
    scale: f64,
    keep_history: bool,
) -> Result<RowState> {
    let k_max = deltas.len();
    let mut a = 0.0;
    // Current scaled B^(j), j = 1..k-1, at index j-1.
    let mut b: Vec<f64> = Vec::with_capacity(k_max);
    let mut state = RowState {
        a: Vec::with_capacity(k_max + 1),
        b: Vec::with_capacity(if keep_history { offset(k_max + 1) } else { 0 }),
        predictions: Vec::with_capacity(k_max + 1),
    };
    for k in 0..=k_max {
        let mut correction = a * h[0];
        for (j, bj) in b.iter().enumerate() {
            let term = bj * h[j + 1];
            if !term.is_finite() || term.abs() > OVERFLOW_LIMIT {
                return Err(Error::PowerOverflow(term.abs()));
            }
            correction += term;
        }
        let f = fitted[k] + correction;
        state.a.push(a);
        state.predictions.push(f);
        if keep_history {
            state.b.extend_from_slice(&b);
        }
        if k == k_max {
            break;
        }
        let c = deltas[k] / n;
        let cl = c * scale;
        // Highest power first so each update reads the previous step's value.
        if k >= 1 {
            let top = if b.is_empty() { a } else { b[b.len() - 1] };
            let new_top = -cl * top;
            for j in (1..b.len()).rev() {
                b[j] -= cl * b[j - 1];
            }
            if let Some(first) = b.first_mut() {
                *first -= cl * a;
            }
            b.push(new_top);
        }
        a -= c * (y - f);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loo::loo_predictions_naive;
    use crate::simgen::{generate, SimModel};
    use crate::spectral::spectral_decompose;

    fn sim(n: usize, p: usize, seed: u64) -> Dataset {
        generate(&SimModel::isotropic_linear(n, p, 2.0, 1.0, seed), 0)
            .unwrap()
            .train
    }

    #[test]
    fn short_paths_match_naive() {
        let ds = sim(20, 30, 1);
        let cache = spectral_decompose(&ds, false).unwrap();
        let sched = StepSchedule::constant(0.005, 20).unwrap();
        let naive = loo_predictions_naive(&ds, &sched, 20).unwrap();
        let state =
            LooShortcutState::build(&ds, &sched, 20, &cache, DEFAULT_MEMORY_BUDGET).unwrap();
        assert!(naive.max_abs_diff(state.predictions()) < 1e-8);
        let stream = loo_predictions_monomial(&ds, &sched, 20, &cache).unwrap();
        assert_eq!(&stream, state.predictions());
    }

    #[test]
    fn first_step_closed_form() {
        let ds = sim(8, 5, 2);
        let cache = spectral_decompose(&ds, false).unwrap();
        let sched = StepSchedule::new(vec![0.3, 0.1]).unwrap();
        let state = LooShortcutState::build(&ds, &sched, 2, &cache, DEFAULT_MEMORY_BUDGET).unwrap();
        for i in 0..8 {
            let expected = 0.3 * (0.0 - ds.response()[i]) / 8.0;
            assert!((state.a(i, 1) - expected).abs() < 1e-15);
            assert_eq!(state.b(i, 1, 1), 0.0);
        }
    }

    #[test]
    fn b_triangle_convention() {
        let ds = sim(6, 4, 3);
        let cache = spectral_decompose(&ds, false).unwrap();
        let sched = StepSchedule::constant(0.02, 6).unwrap();
        let state = LooShortcutState::build(&ds, &sched, 6, &cache, DEFAULT_MEMORY_BUDGET).unwrap();
        for i in 0..6 {
            for k in 0..=6 {
                assert_eq!(state.b(i, k, k), 0.0);
            }
            // B_{i,k+1}^(1) = B_{i,k}^(1) - c_k A_{i,k}.
            let c = 0.02 / 6.0;
            for k in 1..6 {
                let lhs = state.b(i, k + 1, 1);
                let rhs = state.b(i, k, 1) - c * state.a(i, k);
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn frozen_schedule_has_zero_coefficients() {
        let ds = sim(7, 3, 4);
        let cache = spectral_decompose(&ds, false).unwrap();
        let state = LooShortcutState::build(
            &ds,
            &StepSchedule::frozen(5),
            5,
            &cache,
            DEFAULT_MEMORY_BUDGET,
        )
        .unwrap();
        for i in 0..7 {
            for k in 0..=5 {
                assert_eq!(state.a(i, k), 0.0);
                assert_eq!(state.predictions().prediction(i, k), 0.0);
                for j in 1..k {
                    assert_eq!(state.b(i, k, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn quadratic_forms_match_dense_products() {
        let ds = sim(50, 80, 5);
        let cache = spectral_decompose(&ds, false).unwrap();
        let sched = StepSchedule::constant(0.001, 21).unwrap();
        let state =
            LooShortcutState::build(&ds, &sched, 21, &cache, DEFAULT_MEMORY_BUDGET).unwrap();
        let x = ds.features();
        let g = x.transpose() * x;
        for i in [0, 17, 49] {
            let mut v = ds.row(i);
            for j in 0..=20 {
                let dense = ds.row(i).dot(&v);
                let rel = (state.h_quad(i, j) - dense).abs() / dense.abs();
                assert!(rel < 1e-6, "i={i} j={j} rel={rel}");
                v = &g * v;
            }
        }
    }

    #[test]
    fn memory_budget_is_enforced() {
        let ds = sim(10, 5, 6);
        let cache = spectral_decompose(&ds, false).unwrap();
        let sched = StepSchedule::constant(0.01, 100).unwrap();
        let err = LooShortcutState::build(&ds, &sched, 100, &cache, 1000).unwrap_err();
        assert_eq!(
            err,
            Error::MemoryBudget {
                needed: 10 * 99 * 100 / 2,
                budget: 1000
            }
        );
    }
}

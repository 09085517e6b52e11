//! The modified augmented system: gradient descent on all `n` rows where the
//! held-out response is overwritten at every step by the current prediction.

use nalgebra::{DMatrix, DVector};

use super::{check_k_max, LooPredictions};
use crate::data::{Dataset, StepSchedule};
use crate::error::{Error, Result};
use crate::par;

/// The augmented run for one held-out row.
#[derive(Debug, Clone)]
pub struct AugmentedTrajectory {
    /// `b~_{k,-i}` for k = 0..=k_max.
    pub loo_iterates: Vec<DVector<f64>>,
    /// The response vector used in step k (k = 0..k_max); entry `i` is the
    /// current LOO prediction.
    pub augmented_responses: Vec<DVector<f64>>,
    /// `x_i^T b~_{k,-i}` for k = 0..=k_max.
    pub predictions: Vec<f64>,
}

/// Runs the augmented system for row `i` from the origin.
pub fn loo_via_augmented(
    data: &Dataset,
    schedule: &StepSchedule,
    i: usize,
    k_max: usize,
) -> Result<AugmentedTrajectory> {
    check_row(data, i)?;
    check_k_max(schedule, k_max)?;
    let mut out = AugmentedTrajectory {
        loo_iterates: Vec::with_capacity(k_max + 1),
        augmented_responses: Vec::with_capacity(k_max),
        predictions: Vec::with_capacity(k_max + 1),
    };
    augmented_run(data, &schedule.deltas()[..k_max], i, |beta, y_aug, pred| {
        out.loo_iterates.push(beta.clone());
        out.predictions.push(pred);
        if let Some(y) = y_aug {
            out.augmented_responses.push(y.clone());
        }
    });
    Ok(out)
}

/// Augmented-system LOO predictions for every row.
pub fn augmented_loo_predictions(
    data: &Dataset,
    schedule: &StepSchedule,
    k_max: usize,
) -> Result<LooPredictions> {
    check_k_max(schedule, k_max)?;
    let deltas = &schedule.deltas()[..k_max];
    let rows = par::map_range(data.n(), |i| {
        let mut preds = Vec::with_capacity(k_max + 1);
        augmented_run(data, deltas, i, |_, _, pred| preds.push(pred));
        preds
    });
    Ok(LooPredictions::new(
        DMatrix::from_fn(data.n(), k_max + 1, |i, k| rows[i][k]),
        data.response().clone(),
    ))
}

/// Calls `visit(b_k, y~_k, x_i^T b_k)` for k = 0..=K; `y~_k` is `None` after
/// the last step.
fn augmented_run(
    data: &Dataset,
    deltas: &[f64],
    i: usize,
    mut visit: impl FnMut(&DVector<f64>, Option<&DVector<f64>>, f64),
) {
    let x = data.features();
    let n = data.n() as f64;
    let xi = data.row(i);
    let mut beta = DVector::zeros(data.d());
    let mut y_aug = data.response().clone();
    let mut resid = DVector::zeros(data.n());
    for &delta in deltas {
        let pred = xi.dot(&beta);
        y_aug[i] = pred;
        visit(&beta, Some(&y_aug), pred);
        resid.copy_from(&y_aug);
        resid.gemv(-1.0, x, &beta, 1.0);
        beta.gemv_tr(delta / n, x, &resid, 1.0);
    }
    let pred = xi.dot(&beta);
    visit(&beta, None, pred);
}

/// The classical single augmentation: `k` steps on the full data with the
/// held-out response fixed at `target` throughout. Returns `x_i^T b~`.
/// With `target` set to the LOO prediction this does not reproduce it.
pub fn single_augmentation_prediction(
    data: &Dataset,
    schedule: &StepSchedule,
    i: usize,
    k: usize,
    target: f64,
) -> Result<f64> {
    check_row(data, i)?;
    check_k_max(schedule, k)?;
    let mut y = data.response().clone();
    y[i] = target;
    let aug = data.with_response(y)?;
    let mut pred = 0.0;
    let xi = data.row(i);
    crate::gd::gd_steps(
        aug.features(),
        aug.response(),
        &schedule.deltas()[..k],
        &DVector::zeros(data.d()),
        data.n() as f64,
        |_, beta| pred = xi.dot(beta),
    );
    Ok(pred)
}

fn check_row(data: &Dataset, i: usize) -> Result<()> {
    if i >= data.n() {
        return Err(Error::InvalidArgument(format!(
            "row {i} out of range for n = {}",
            data.n()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loo::loo_predictions_naive;
    use crate::simgen::{generate, SimModel};

    fn sim(n: usize, p: usize, seed: u64) -> Dataset {
        generate(&SimModel::isotropic_linear(n, p, 2.0, 1.0, seed), 0)
            .unwrap()
            .train
    }

    #[test]
    fn k_zero_is_init_prediction() {
        let ds = sim(6, 4, 1);
        let traj = loo_via_augmented(&ds, &StepSchedule::constant(0.1, 3).unwrap(), 2, 0).unwrap();
        assert_eq!(traj.predictions, vec![0.0]);
        assert!(traj.augmented_responses.is_empty());
    }

    #[test]
    fn two_point_hand_computation() {
        // X = (1; 2), y = (1, 3), delta = 1, hold out row 0. Drop-row GD on the
        // single point (2, 3) with multiplier 1/2: b <- b + (1/2) 2 (3 - 2b).
        let ds = Dataset::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
            DVector::from_vec(vec![1.0, 3.0]),
            false,
        )
        .unwrap();
        let sched = StepSchedule::constant(1.0, 2).unwrap();
        let traj = loo_via_augmented(&ds, &sched, 0, 2).unwrap();
        let b1 = 3.0;
        let b2 = b1 + (3.0 - 2.0 * b1);
        assert_eq!(traj.loo_iterates[1][0], b1);
        assert_eq!(traj.loo_iterates[2][0], b2);
        assert_eq!(traj.predictions, vec![0.0, b1, b2]);
        let naive = loo_predictions_naive(&ds, &sched, 2).unwrap();
        assert_eq!(naive.prediction(0, 2), b2);
    }

    #[test]
    fn augmented_responses_only_change_row_i() {
        let ds = sim(10, 5, 2);
        let traj = loo_via_augmented(&ds, &StepSchedule::constant(0.1, 4).unwrap(), 3, 4).unwrap();
        for (k, y) in traj.augmented_responses.iter().enumerate() {
            for j in 0..10 {
                if j == 3 {
                    assert_eq!(y[j], traj.predictions[k]);
                } else {
                    assert_eq!(y[j], ds.response()[j]);
                }
            }
        }
    }

    #[test]
    fn matches_drop_row_refits() {
        let ds = sim(30, 50, 3);
        let sched = StepSchedule::constant(0.05, 100).unwrap();
        let naive = loo_predictions_naive(&ds, &sched, 100).unwrap();
        let aug = augmented_loo_predictions(&ds, &sched, 100).unwrap();
        assert!(
            naive.max_abs_diff(&aug) < 1e-10,
            "{}",
            naive.max_abs_diff(&aug)
        );
        let one = loo_via_augmented(&ds, &sched, 7, 100).unwrap();
        for k in 0..=100 {
            assert_eq!(one.predictions[k], aug.prediction(7, k));
        }
    }

    #[test]
    fn single_augmentation_differs() {
        let ds = sim(20, 30, 4);
        let sched = StepSchedule::constant(0.05, 50).unwrap();
        let naive = loo_predictions_naive(&ds, &sched, 50).unwrap();
        let gap = (0..20)
            .map(|i| {
                let target = naive.prediction(i, 50);
                (single_augmentation_prediction(&ds, &sched, i, 50, target).unwrap() - target).abs()
            })
            .fold(0.0, f64::max);
        assert!(gap > 1e-6, "{gap}");
    }
}

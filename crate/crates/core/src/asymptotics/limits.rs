//! Limiting risk and GCV of gradient flow under the Marchenko-Pastur law, their
//! mismatch function and its second derivative at the origin.
//!
//! With `F` the law of ratio `zeta` and
//!
//! ```text
//! w(T) = (1 - zeta int (1 - e^{-Tz}) dF)^2      v(T) = int e^{-2Tz} dF
//! u(T) = int z e^{-2Tz} dF                       q(T) = int z^{-1} (1 - e^{-Tz})^2 dF
//! ```
//!
//! the risk limit is `r^2 v + zeta sigma^2 q + sigma^2`, the GCV limit is
//! `(r^2 u + sigma^2 (1 - zeta) + sigma^2 zeta v) / w`, and
//! `D = r^2 (w v - u) + sigma^2 ((1 + zeta q) w - (1 - zeta) - zeta v)`, which
//! equals `w` times their difference. Integrals use the full law, point mass
//! included.

use std::io::Write;

use super::mp::MpLaw;
use super::quadrature::Quadrature;
use crate::error::{Error, Result};
use crate::io::{csv_writer, fmt_f64};
use crate::par;

/// Finite-difference step for second derivatives at zero.
pub const FD_STEP: f64 = 1e-3;

/// Quadrature tolerance used inside finite differences; the default 1e-8
/// would be amplified by `1/h^2`.
pub const FD_QUADRATURE_TOL: f64 = 1e-14;

/// Below this the GCV denominator `w` is treated as zero.
pub const DENOMINATOR_TOL: f64 = 1e-10;

/// How the constant noise term of the GCV numerator treats the point mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseTerm {
    /// `sigma^2 (1 - zeta) + sigma^2 zeta int e^{-2Tz} dF` over the full law.
    #[default]
    FullLaw,
    /// `sigma^2 (1 - zeta)_+ + sigma^2 zeta int e^{-2Tz} dF` over the
    /// continuous part only. Algebraically identical to `FullLaw`.
    ContinuousPart,
}

/// The building-block integrals at one `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitIntegrals {
    pub zeta: f64,
    /// `zeta int (1 - e^{-Tz}) dF`.
    pub i: f64,
    pub w: f64,
    pub v: f64,
    /// `v` restricted to the continuous part.
    pub v_continuous: f64,
    pub u: f64,
    pub q: f64,
}

impl LimitIntegrals {
    /// Evaluates the integrals; `t` may be negative (used by finite
    /// differences).
    pub fn at(law: &MpLaw, t: f64) -> Result<Self> {
        let zeta = law.zeta();
        let one_minus = |z: f64| -(-t * z).exp_m1();
        let i = zeta * law.integrate(one_minus, true)?;
        let v_continuous = law.integrate(|z| (-2.0 * t * z).exp(), false)?;
        let v = v_continuous + law.point_mass();
        let u = law.integrate(|z| z * (-2.0 * t * z).exp(), true)?;
        let q = law.integrate(
            |z| {
                if z == 0.0 {
                    0.0
                } else {
                    one_minus(z).powi(2) / z
                }
            },
            true,
        )?;
        Ok(Self {
            zeta,
            i,
            w: (1.0 - i).powi(2),
            v,
            v_continuous,
            u,
            q,
        })
    }

    /// Noise multiplier on the risk side, `1 + zeta q`.
    pub fn v_tilde(&self) -> f64 {
        1.0 + self.zeta * self.q
    }

    /// Noise numerator on the GCV side, `(1 - zeta) + zeta v`.
    pub fn u_tilde(&self) -> f64 {
        (1.0 - self.zeta) + self.zeta * self.v
    }

    pub fn risk(&self, r2: f64, sigma2: f64) -> f64 {
        r2 * self.v + sigma2 * self.zeta * self.q + sigma2
    }

    pub fn gcv(&self, r2: f64, sigma2: f64, noise: NoiseTerm) -> Result<f64> {
        if self.w < DENOMINATOR_TOL {
            return Err(Error::DenominatorDegenerate(self.w));
        }
        let noise_part = match noise {
            NoiseTerm::FullLaw => self.u_tilde(),
            NoiseTerm::ContinuousPart => (1.0 - self.zeta).max(0.0) + self.zeta * self.v_continuous,
        };
        Ok((r2 * self.u + sigma2 * noise_part) / self.w)
    }

    pub fn mismatch(&self, r2: f64, sigma2: f64) -> f64 {
        r2 * (self.w * self.v - self.u) + sigma2 * (self.v_tilde() * self.w - self.u_tilde())
    }
}

fn check(r2: f64, sigma2: f64, t: f64) -> Result<()> {
    if !(r2 >= 0.0 && sigma2 >= 0.0 && r2 + sigma2 > 0.0 && r2.is_finite() && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need r2, sigma2 >= 0 with a positive sum, got ({r2}, {sigma2})"
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "T must be finite and nonnegative, got {t}"
        )));
    }
    Ok(())
}

/// Limiting prediction risk of gradient flow at time `t`.
pub fn risk_limit(law: &MpLaw, r2: f64, sigma2: f64, t: f64) -> Result<f64> {
    check(r2, sigma2, t)?;
    Ok(LimitIntegrals::at(law, t)?.risk(r2, sigma2))
}

/// Limiting GCV of gradient flow at time `t`.
pub fn gcv_limit(law: &MpLaw, r2: f64, sigma2: f64, t: f64) -> Result<f64> {
    gcv_limit_with(law, r2, sigma2, t, NoiseTerm::FullLaw)
}

pub fn gcv_limit_with(law: &MpLaw, r2: f64, sigma2: f64, t: f64, noise: NoiseTerm) -> Result<f64> {
    check(r2, sigma2, t)?;
    LimitIntegrals::at(law, t)?.gcv(r2, sigma2, noise)
}

/// `D(T)`; zero exactly when the two limits agree.
pub fn mismatch(law: &MpLaw, r2: f64, sigma2: f64, t: f64) -> Result<f64> {
    check(r2, sigma2, t)?;
    Ok(LimitIntegrals::at(law, t)?.mismatch(r2, sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Signal,
    Noise,
}

/// Both sides of the per-component comparison: `(v, u / w)` for the signal
/// and `(1 + zeta q, ((1 - zeta) + zeta v) / w)` for the noise.
pub fn component_mismatch(law: &MpLaw, t: f64, which: Component) -> Result<(f64, f64)> {
    let li = LimitIntegrals::at(law, t)?;
    if li.w < DENOMINATOR_TOL {
        return Err(Error::DenominatorDegenerate(li.w));
    }
    Ok(match which {
        Component::Signal => (li.v, li.u / li.w),
        Component::Noise => (li.v_tilde(), li.u_tilde() / li.w),
    })
}

/// Central second difference at zero with one Richardson step:
/// `(4 D(h/2) - D(h)) / 3`, `D(h) = (f(h) - 2 f(0) + f(-h)) / h^2`.
pub fn second_derivative_at_zero(f: impl Fn(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let f0 = f(0.0)?;
    let d = |step: f64| -> Result<f64> { Ok((f(step)? - 2.0 * f0 + f(-step)?) / (step * step)) };
    let coarse = d(h)?;
    let fine = d(0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

fn fd_law(law: &MpLaw) -> MpLaw {
    law.with_quadrature(Quadrature {
        abs_tol: FD_QUADRATURE_TOL,
        max_evals: 100_000,
    })
}

/// `D''(0)` by finite differences.
pub fn mismatch_second_derivative(law: &MpLaw, r2: f64, sigma2: f64) -> Result<f64> {
    check(r2, sigma2, 0.0)?;
    let law = fd_law(law);
    second_derivative_at_zero(
        |t| Ok(LimitIntegrals::at(&law, t)?.mismatch(r2, sigma2)),
        FD_STEP,
    )
}

/// The value `-2 zeta (2 r^2 + sigma^2)` stated for `D''(0)` in the source
/// analysis. Finite differences give `2 zeta r^2`; see
/// [`mismatch_second_derivative_derived`].
pub fn mismatch_second_derivative_stated(zeta: f64, r2: f64, sigma2: f64) -> f64 {
    -2.0 * zeta * (2.0 * r2 + sigma2)
}

/// `D''(0) = r^2 (B_l'' - B_r'') + sigma^2 (V_l'' - V_r'') = 2 zeta r^2`, from
/// the moment expansion of each factor.
pub fn mismatch_second_derivative_derived(zeta: f64, r2: f64, _sigma2: f64) -> f64 {
    2.0 * zeta * r2
}

/// Second derivatives at zero of `B_l = w v`, `B_r = u`, `V_l = w (1 + zeta q)`
/// and `V_r = (1 - zeta) + zeta v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeTable {
    pub zeta: f64,
    /// Finite-difference values.
    pub signal_left: f64,
    pub signal_right: f64,
    pub noise_left: f64,
    pub noise_right: f64,
}

impl DerivativeTable {
    /// Closed forms as stated in the source claims: signal
    /// `(4 + 12 zeta + 4 zeta^2, 4 + 14 zeta + 4 zeta^2)`, noise
    /// `(4 zeta^2, 4 zeta + 4 zeta^2)`.
    pub fn stated(zeta: f64) -> [f64; 4] {
        let z = zeta;
        [
            4.0 + 12.0 * z + 4.0 * z * z,
            4.0 + 14.0 * z + 4.0 * z * z,
            4.0 * z * z,
            4.0 * z + 4.0 * z * z,
        ]
    }

    /// Closed forms from the moment expansion: `w'' + 2 w' v' + v''` gives
    /// `4 + 14 zeta + 4 zeta^2` on the left and `4 M_3` on the right of the
    /// signal; the noise sides agree at `4 zeta + 4 zeta^2` because the second
    /// derivative of `(1 - e^{-Tz})^2 / z` at zero is `+2z`.
    pub fn derived(zeta: f64) -> [f64; 4] {
        let z = zeta;
        [
            4.0 + 14.0 * z + 4.0 * z * z,
            4.0 + 12.0 * z + 4.0 * z * z,
            4.0 * z + 4.0 * z * z,
            4.0 * z + 4.0 * z * z,
        ]
    }

    pub fn values(&self) -> [f64; 4] {
        [
            self.signal_left,
            self.signal_right,
            self.noise_left,
            self.noise_right,
        ]
    }

    /// Whether the finite-difference signal pair equals the stated set
    /// `{4 + 12 zeta + 4 zeta^2, 4 + 14 zeta + 4 zeta^2}` in either order.
    pub fn signal_set_matches_stated(&self, rel_tol: f64) -> bool {
        let s = Self::stated(self.zeta);
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * b.abs().max(1.0);
        (close(self.signal_left, s[0]) && close(self.signal_right, s[1]))
            || (close(self.signal_left, s[1]) && close(self.signal_right, s[0]))
    }
}

/// Finite-difference second derivatives of the four component functions.
pub fn derivative_table(law: &MpLaw) -> Result<DerivativeTable> {
    let law = fd_law(law);
    let at = |t: f64| LimitIntegrals::at(&law, t);
    let component =
        |f: fn(&LimitIntegrals) -> f64| second_derivative_at_zero(|t| Ok(f(&at(t)?)), FD_STEP);
    Ok(DerivativeTable {
        zeta: law.zeta(),
        signal_left: component(|l| l.w * l.v)?,
        signal_right: component(|l| l.u)?,
        noise_left: component(|l| l.w * l.v_tilde())?,
        noise_right: component(|l| l.u_tilde())?,
    })
}

/// Limit curves over a grid of `T` for one aspect ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCurves {
    pub zeta: f64,
    pub r2: f64,
    pub sigma2: f64,
    pub t_grid: Vec<f64>,
    pub risk_limit: Vec<f64>,
    pub gcv_limit: Vec<f64>,
    pub mismatch: Vec<f64>,
    pub signal: Vec<(f64, f64)>,
    pub noise: Vec<(f64, f64)>,
}

impl LimitCurves {
    pub fn compute(law: &MpLaw, r2: f64, sigma2: f64, t_grid: &[f64]) -> Result<Self> {
        for &t in t_grid {
            check(r2, sigma2, t)?;
        }
        let rows = par::map_slice(t_grid, |&t| LimitIntegrals::at(law, t));
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let gcv = rows
            .iter()
            .map(|l| l.gcv(r2, sigma2, NoiseTerm::FullLaw))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            zeta: law.zeta(),
            r2,
            sigma2,
            t_grid: t_grid.to_vec(),
            risk_limit: rows.iter().map(|l| l.risk(r2, sigma2)).collect(),
            gcv_limit: gcv,
            mismatch: rows.iter().map(|l| l.mismatch(r2, sigma2)).collect(),
            signal: rows.iter().map(|l| (l.v, l.u / l.w)).collect(),
            noise: rows
                .iter()
                .map(|l| (l.v_tilde(), l.u_tilde() / l.w))
                .collect(),
        })
    }

    fn labelled(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            ("risk_limit", self.risk_limit.clone()),
            ("gcv_limit", self.gcv_limit.clone()),
            ("mismatch", self.mismatch.clone()),
            ("signal_lhs", self.signal.iter().map(|p| p.0).collect()),
            ("signal_rhs", self.signal.iter().map(|p| p.1).collect()),
            ("noise_lhs", self.noise.iter().map(|p| p.0).collect()),
            ("noise_rhs", self.noise.iter().map(|p| p.1).collect()),
        ]
    }
}

/// Long-format CSV `T,zeta,value,label` for any number of curve sets.
pub fn write_limit_csv<W: Write>(curves: &[LimitCurves], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["T", "zeta", "value", "label"])?;
    for c in curves {
        for (label, values) in c.labelled() {
            for (t, v) in c.t_grid.iter().zip(values) {
                w.write_record([fmt_f64(*t), fmt_f64(c.zeta), fmt_f64(v), label.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_model_endpoints() {
        for zeta in [0.5, 1.0, 2.0] {
            let law = MpLaw::new(zeta).unwrap();
            assert!((risk_limit(&law, 3.0, 2.0, 0.0).unwrap() - 5.0).abs() < 1e-8);
            assert!((gcv_limit(&law, 3.0, 2.0, 0.0).unwrap() - 5.0).abs() < 1e-8);
            assert!(mismatch(&law, 3.0, 2.0, 0.0).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn long_time_noise_limits() {
        // zeta < 1: variance of least squares, 1 + zeta/(1 - zeta) = 2 at 0.5.
        let law = MpLaw::new(0.5).unwrap();
        assert!((risk_limit(&law, 0.0, 1.0, 200.0).unwrap() - 2.0).abs() < 1e-6);
        // zeta > 1: the interpolator has zero training error.
        let law = MpLaw::new(1.5).unwrap();
        let li = LimitIntegrals::at(&law, 200.0).unwrap();
        assert!(li.u_tilde().abs() < 1e-8);
    }

    /// Stratified Monte Carlo over the density in `s`, one uniform draw per
    /// stratum, plus the point mass at zero.
    fn stratified_expectation(
        law: &MpLaw,
        strata: usize,
        seed: u64,
        phi: impl Fn(f64) -> f64,
    ) -> f64 {
        use rand::Rng;
        let (a, b) = law.support();
        let width = (b - a) / strata as f64;
        let mut rng = crate::simgen::stream(seed, 0);
        let mut acc = 0.0;
        for j in 0..strata {
            let s = a + width * (j as f64 + rng.gen::<f64>());
            acc += phi(s) * law.density(s);
        }
        acc * width + law.point_mass() * phi(0.0)
    }

    #[test]
    fn risk_limit_matches_stratified_monte_carlo() {
        let law = MpLaw::new(1.5).unwrap();
        let (zeta, t, r2, sigma2) = (1.5, 1.0, 25.0, 1.0);
        let v = stratified_expectation(&law, 1_000_000, 1, |z| (-2.0 * t * z).exp());
        let q = stratified_expectation(&law, 1_000_000, 2, |z| {
            if z == 0.0 {
                0.0
            } else {
                (-(-t * z).exp_m1()).powi(2) / z
            }
        });
        let oracle = r2 * v + zeta * sigma2 * q + sigma2;
        let value = risk_limit(&law, r2, sigma2, t).unwrap();
        assert!((value - oracle).abs() < 1e-3, "{value} vs {oracle}");
    }

    #[test]
    fn variants_agree() {
        for zeta in [0.3, 1.0, 2.5] {
            let law = MpLaw::new(zeta).unwrap();
            for t in [0.0, 0.7, 3.0] {
                let a = gcv_limit_with(&law, 2.0, 1.0, t, NoiseTerm::FullLaw).unwrap();
                let b = gcv_limit_with(&law, 2.0, 1.0, t, NoiseTerm::ContinuousPart).unwrap();
                assert!((a - b).abs() < 1e-12, "{zeta} {t}");
            }
        }
    }

    #[test]
    fn gap_at_overparameterized_point() {
        let law = MpLaw::new(2.0).unwrap();
        let gap = (gcv_limit(&law, 25.0, 1.0, 1.0).unwrap()
            - risk_limit(&law, 25.0, 1.0, 1.0).unwrap())
        .abs();
        assert!(gap >= 0.01, "{gap}");
    }

    #[test]
    fn mismatch_is_w_times_difference() {
        let law = MpLaw::new(1.3).unwrap();
        let li = LimitIntegrals::at(&law, 0.8).unwrap();
        let lhs = li.mismatch(2.0, 0.5);
        let rhs = li.w * (li.risk(2.0, 0.5) - li.gcv(2.0, 0.5, NoiseTerm::FullLaw).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn noiseless_risk_decreasing() {
        let law = MpLaw::new(0.5).unwrap();
        let vals: Vec<f64> = (0..=50)
            .map(|i| risk_limit(&law, 1.0, 0.0, 0.1 * i as f64).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn small_ratio_limit() {
        let law = MpLaw::new(1e-3).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let g = gcv_limit(&law, 1.0, 1.0, t).unwrap();
            assert!((g - ((-2.0 * t).exp() + 1.0)).abs() < 1e-2, "{t}");
        }
    }

    #[test]
    fn components_start_at_one() {
        let law = MpLaw::new(1.5).unwrap();
        for which in [Component::Signal, Component::Noise] {
            let (l, r) = component_mismatch(&law, 0.0, which).unwrap();
            assert!((l - 1.0).abs() < 1e-8 && (r - 1.0).abs() < 1e-8);
        }
        let (l, r) = component_mismatch(&law, 1.0, Component::Noise).unwrap();
        assert!((l - r).abs() > 1e-3, "{l} {r}");
    }

    #[test]
    fn mismatch_nonzero_on_grid() {
        let law = MpLaw::new(0.5).unwrap();
        for i in 1..=100 {
            let t = 0.05 * i as f64;
            assert!(mismatch(&law, 1.0, 1.0, t).unwrap().abs() > 0.0, "{t}");
        }
    }

    #[test]
    fn derivative_table_matches_moment_expansion() {
        for zeta in [0.5, 1.0, 2.0] {
            let table = derivative_table(&MpLaw::new(zeta).unwrap()).unwrap();
            let derived = DerivativeTable::derived(zeta);
            for (fd, d) in table.values().iter().zip(derived) {
                assert!(
                    (fd - d).abs() < 1e-4 * d.max(1.0),
                    "zeta={zeta}: {fd} vs {d}"
                );
            }
            assert!(table.signal_set_matches_stated(1e-4));
        }
    }

    #[test]
    fn stated_noise_pair_at_one() {
        // As printed: (4, 8). Finite differences give (8, 8); see the
        // derivative table test above.
        let s = DerivativeTable::stated(1.0);
        assert_eq!((s[2], s[3]), (4.0, 8.0));
        assert_eq!((s[0], s[1]), (20.0, 22.0));
        let fd = derivative_table(&MpLaw::new(1.0).unwrap()).unwrap();
        assert!((fd.noise_left - 8.0).abs() < 1e-4);
        assert!((fd.noise_right - 8.0).abs() < 1e-4);
    }

    #[test]
    fn small_ratio_derivatives() {
        let zeta = 1e-4;
        let table = derivative_table(&MpLaw::new(zeta).unwrap()).unwrap();
        let at_zero = DerivativeTable::stated(0.0);
        for (fd, z) in table.values().iter().zip(at_zero) {
            assert!((fd - z).abs() < 1e-2, "{fd} vs {z}");
        }
    }

    #[test]
    fn second_derivative_of_mismatch() {
        for zeta in [0.5, 1.0, 2.0] {
            for (r2, s2) in [(1.0, 1.0), (25.0, 1.0)] {
                let fd = mismatch_second_derivative(&MpLaw::new(zeta).unwrap(), r2, s2).unwrap();
                let derived = mismatch_second_derivative_derived(zeta, r2, s2);
                assert!((fd - derived).abs() < 1e-3 * derived, "{zeta} {r2}: {fd}");
            }
        }
    }

    #[test]
    fn curves_csv() {
        let law = MpLaw::new(2.0).unwrap();
        let c = LimitCurves::compute(&law, 1.0, 1.0, &[0.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        write_limit_csv(&[c], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("T,zeta,value,label\n0,2,"));
        assert_eq!(text.lines().count(), 1 + 2 * 7);
    }
}

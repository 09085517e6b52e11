//! The Marchenko-Pastur law.

use std::f64::consts::PI;

use super::quadrature::Quadrature;
use crate::error::{Error, Result};

/// Marchenko-Pastur law with aspect ratio `zeta`: density
/// `sqrt((b - s)(s - a)) / (2 pi zeta s)` on `[a, b]`, `a = (1 - sqrt(zeta))^2`,
/// `b = (1 + sqrt(zeta))^2`, plus mass `max(1 - 1/zeta, 0)` at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpLaw {
    zeta: f64,
    a: f64,
    b: f64,
    point_mass: f64,
    quadrature: Quadrature,
}

impl MpLaw {
    pub fn new(zeta: f64) -> Result<Self> {
        if !(zeta.is_finite() && zeta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "aspect ratio must be positive, got {zeta}"
            )));
        }
        let r = zeta.sqrt();
        Ok(Self {
            zeta,
            a: (1.0 - r).powi(2),
            b: (1.0 + r).powi(2),
            point_mass: (1.0 - 1.0 / zeta).max(0.0),
            quadrature: Quadrature::default(),
        })
    }

    pub fn with_quadrature(mut self, quadrature: Quadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn point_mass(&self) -> f64 {
        self.point_mass
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    /// Density of the continuous part; zero outside `[a, b]`.
    pub fn density(&self, s: f64) -> f64 {
        if s <= self.a || s >= self.b || s <= 0.0 {
            return 0.0;
        }
        ((self.b - s) * (s - self.a)).sqrt() / (2.0 * PI * self.zeta * s)
    }

    /// `int phi dF`. The continuous part is integrated in `t in [0, pi]` with
    /// `s = a + 2h sin^2(t/2)`, `h = (b - a)/2`, which turns the square-root
    /// endpoint behaviour into a smooth periodic integrand. When
    /// `include_point_mass`, `phi(0)` must be the value (or continuous
    /// extension) of the integrand at zero.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64, include_point_mass: bool) -> Result<f64> {
        let h = 0.5 * (self.b - self.a);
        let scale = 1.0 / (2.0 * PI * self.zeta);
        let integrand = |t: f64| {
            let half = 0.5 * t;
            let s = self.a + 2.0 * h * half.sin().powi(2);
            if s <= 0.0 {
                return 0.0;
            }
            let st = h * t.sin();
            phi(s) * st * st * scale / s
        };
        let continuous = self.quadrature.integrate(integrand, 0.0, PI)?.value;
        let mass = if include_point_mass && self.point_mass > 0.0 {
            self.point_mass * phi(0.0)
        } else {
            0.0
        };
        Ok(continuous + mass)
    }

    /// `int s^k dF` by quadrature.
    pub fn moment(&self, k: u32) -> Result<f64> {
        self.integrate(|s| s.powi(k as i32), true)
    }

    /// Closed-form moments for `k <= 4`.
    pub fn moment_closed_form(&self, k: u32) -> Option<f64> {
        let z = self.zeta;
        match k {
            0 | 1 => Some(1.0),
            2 => Some(1.0 + z),
            3 => Some(1.0 + 3.0 * z + z * z),
            4 => Some(1.0 + 6.0 * z + 6.0 * z * z + z * z * z),
            _ => None,
        }
    }
}

/// `int phi dF_zeta`; see [`MpLaw::integrate`].
pub fn mp_integral(
    law: &MpLaw,
    integrand: impl Fn(f64) -> f64,
    include_point_mass: bool,
) -> Result<f64> {
    law.integrate(integrand, include_point_mass)
}

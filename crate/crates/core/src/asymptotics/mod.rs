//! Proportional-asymptotics limits of early-stopped gradient descent.

pub mod limits;
pub mod mp;
pub mod quadrature;

pub use limits::{
    component_mismatch, derivative_table, gcv_limit, mismatch, mismatch_second_derivative,
    risk_limit, Component, DerivativeTable, LimitCurves,
};
pub use mp::{mp_integral, MpLaw};
pub use quadrature::Quadrature;

//! Risk estimation along the path of early-stopped gradient descent on
//! least squares.
//!
//! * [`gd`] runs the iterates, with a spectral fast path.
//! * [`risk`] has the true risk (closed form or Monte Carlo), GCV and LOOCV
//!   curves, and early-stopping selection.
//! * [`loo`] computes exact leave-one-out predictions for every step, either
//!   by refitting or through an `O(n)`-per-row shortcut.
//! * [`intervals`] turns LOO residual quantiles into prediction intervals.
//! * [`asymptotics`] evaluates proportional-limit risk and GCV under the
//!   Marchenko-Pastur law.
//! * [`simgen`] generates reproducible synthetic designs.
//!
//! The `parallel` feature (on by default) spreads per-row work over rayon.
//! Results are bit-identical with and without it.

pub mod acceptance;
pub mod asymptotics;
pub mod data;
pub mod error;
pub mod gd;
pub mod intervals;
pub mod io;
pub mod loo;
pub mod par;
pub mod risk;
pub mod simgen;
pub mod spectral;

pub use data::{CsvLayout, Dataset, StepSchedule};
pub use error::{Error, Result};
pub use spectral::{spectral_decompose, Backend, SpectralCache};

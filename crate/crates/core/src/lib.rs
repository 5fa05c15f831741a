//! Simulation of two lithium-ion cells connected in parallel.
//!
//! * [`ocv`] — affine and tabulated open-circuit-voltage curves.
//! * [`analytic`] — closed-form imbalance dynamics for an affine OCV.
//! * [`simulator`] — forward-Euler cycling with nonlinear OCV curves.
//! * [`bounds`] — input-to-state bound on SOC imbalance and its verification.
//! * [`degradation`] — incremental capacity loss and resistance growth.
//! * [`coupled`] — cycle-by-cycle coupling of imbalance and degradation.
//!
//! Applied current is positive on discharge. Imbalances are always reported
//! as cell 2 minus cell 1.

// `!(x > 0.0)` style checks deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bounds;
pub mod cell;
pub mod coupled;
pub mod degradation;
pub mod error;
pub mod exec;
pub mod ocv;
pub mod simulator;

pub use cell::CellParams;
pub use error::{Error, Result};
pub use exec::Execution;
pub use ocv::{AffineOcv, BundledCurve, OcvCurve, TabulatedOcv};

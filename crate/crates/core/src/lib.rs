//! Echo state networks operated at the critical point.
//!
//! A reservoir is critical when the largest singular value and the largest
//! absolute eigenvalue of its recurrent matrix both equal one. At that
//! boundary the classic contraction argument no longer applies and whether
//! initial-state differences wash out depends on the transfer function. This
//! crate provides:
//!
//! - [`transfer`]: admissible transfer functions and their epi-critical points
//!   (points where the slope reaches exactly one),
//! - [`reservoir`]: reservoirs with controlled spectra and the echo-state checks,
//! - [`dynamics`]: simulation, twin-trajectory convergence traces and
//!   input-perturbation experiments,
//! - [`analysis`]: Lyapunov exponents, decay-law fits and critical parameter search,
//! - [`contraction`]: the weak-contraction cover function and numerical
//!   certificates for the inequalities used to prove convergence at `S = 1`,
//! - [`readout`]: ridge-regression readouts and memory capacity.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod contraction;
pub mod dynamics;
mod error;
pub mod readout;
pub mod reservoir;
pub mod transfer;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits so CSV output round-trips exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

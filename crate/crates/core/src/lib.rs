//! One-dimensional simulator for the forager–exploiter chemotaxis system
//!
//! ```text
//! u_t = u_xx - chi1 (u w_x)_x
//! v_t = v_xx - chi2 (v u_x)_x
//! w_t = d w_xx - lambda (u + v) w - mu w + r
//! ```
//!
//! on an interval with homogeneous Neumann conditions, together with the
//! diagnostics used to check its conservation laws, bounds, energy
//! dissipation and exponential stabilization, and a checker for the ODE
//! comparison bounds used in the decay analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod integrator;
pub mod model;
pub mod ode_lemmas;
pub mod output;
pub mod sweep;

pub use error::{Error, Result};

//! Markovian lifting of jump-driven stochastic Volterra equations with
//! completely monotone kernels, and optimal control of the jump intensity.
//!
//! The kernel `k(t) = Σ_j w_j e^{-x_j t}` is carried by a finite atomic
//! Bernstein measure ([`kernel::BernsteinMeasure`]). Each atom becomes one
//! coordinate of the lifted state ([`lift::LiftState`]), which evolves as a
//! diagonal linear SDE driven by a finite-activity marked Poisson measure
//! ([`levy`]). The direct convolution solver in [`volterra`] integrates the
//! original memory equation on the same jump path and serves as an
//! independent cross-check of the lift.
//!
//! [`control`] poses the jump-intensity control problem, evaluates the
//! Hamiltonian by enumeration over a finite action set, solves the backward
//! equation by least-squares regression and extracts a feedback policy.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod levy;
pub mod lift;
pub mod rng;
pub mod stats;
pub mod volterra;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use kernel::{BernsteinMeasure, DensitySpec};
pub use levy::{JumpPath, LevyModel};
pub use lift::{CoefficientSet, LiftState, LiftTrajectory};

//! Latent ODE models regularized by a latent-space path-length penalty.
//!
//! The crate is organized bottom-up:
//!
//! - [`odeint`]: fixed-step RK4 and adaptive Dormand–Prince 5(4) integrators.
//! - [`diffcore`]: parameter trees, a vector-level reverse-mode tape, MLP and
//!   recurrent cells, Adam, checkpoints.
//! - [`systems`]: damped oscillator, Lane–Emden and Lotka–Volterra ground
//!   truth plus dataset generation and persistence.
//! - [`latentode`]: ODE-RNN/GRU/LSTM recognition network, latent dynamics and
//!   decoder.
//! - [`losses`]: reconstruction error, Mahalanobis path length, KL penalty.
//! - [`train`]: training loop, evaluation protocols, latent export.
//! - [`sbi`]: conditional affine-coupling flow over Lotka–Volterra parameters.
//! - [`cli`]: the `geodesic-lode` experiment runner.

// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diffcore;
mod error;
pub mod latentode;
pub mod losses;
pub mod odeint;
pub mod rng;
pub mod sbi;
pub mod systems;
pub mod train;

pub use error::{Error, Result};

/// Version of every on-disk output schema written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

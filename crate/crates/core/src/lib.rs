//! Bayes-optimal approximate message passing for blind calibration and
//! dictionary learning, with the asymptotic theory used to predict it.
//!
//! The crate is organised bottom-up:
//!
//! - [`quadrature`]: Gauss-Hermite and graded Gauss-Legendre rules for
//!   Gaussian expectations.
//! - [`denoisers`]: scalar posterior means/variances for the spike-slab
//!   signal prior and the Gaussian side-information matrix prior.
//! - [`instance`]: synthetic problem generation and the `MFAMP1` binary
//!   instance format.
//! - [`amp`]: the finite-size message-passing solver.
//! - [`state_evolution`]: the `(E, D)` order-parameter recursion.
//! - [`potential`]: the replica potential, MMSE, and phase boundaries.
//! - [`metrics`]: MSE and permutation/sign alignment.
//! - [`cli`]: the `mfamp` command-line front end.

pub mod amp;
pub mod cli;
pub mod denoisers;
pub mod error;
pub mod instance;
pub mod metrics;
pub mod params;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod state_evolution;

pub use error::{Error, FileError, Result};
pub use params::{Eta, ModelParams, DELTA_FLOOR};

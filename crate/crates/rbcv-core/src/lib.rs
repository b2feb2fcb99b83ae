//! Reduced-basis control variates for parametrized SDE expectations.
//!
//! The crate estimates `E[Z^lambda]` for functionals of Itô processes over
//! many parameter values. An offline greedy stage selects a small set of
//! parameters and precomputes per-element data (accurate means, or
//! backward-Kolmogorov gradients); the online stage combines the resulting
//! control variates per query through a variance-minimizing least-squares
//! solve on common random numbers.
//!
//! Layout:
//! - [`rng`], [`estimators`]: seeded streams, `E_M` / `Var_M` / `Cov_M`;
//! - [`sde`]: Euler–Maruyama stepping with Itô-sum accumulators;
//! - [`models`]: Black–Scholes local volatility, dumbbells, the OU oracle;
//! - [`pde`]: Crank–Nicolson call solver and the exact Hookean solution;
//! - [`cv`]: basis evaluation, covariance solve, controlled estimation;
//! - [`greedy`]: offline parameter selection and basis evaluation sweeps;
//! - [`fk`]: pathwise gradient estimation via the first-variation process;
//! - [`config`], [`runner`], [`basis_io`]: experiment configs, orchestration
//!   and the on-disk formats.

pub mod basis_io;
pub mod config;
pub mod cv;
pub mod error;
pub mod estimators;
pub mod fk;
pub mod greedy;
pub mod models;
pub mod oracles;
pub mod params;
pub mod pde;
pub mod rng;
pub mod runner;
pub mod sde;

pub use error::{Error, Result};

//! Deterministic backward-Kolmogorov solvers and their grid storage.

pub mod bs_solver;
pub mod grid;
pub mod hookean;

pub use bs_solver::solve_bs_crank_nicolson;
pub use grid::{GridField, GridFunction};
pub use hookean::{solve_hookean_kolmogorov, HookeanKolmogorov};

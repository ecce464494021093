//! Dual extraction for regularized minimax problems.
//!
//! A primal oracle for the dual-regularized objective `f_{λ,q}` plus an exact
//! regularized best response are turned into a dual solver by
//! [`framework::run_dual_extraction`]. Instantiations cover bilinear matrix
//! games ([`matgames`]), CVaR distributionally robust optimization ([`cvar`])
//! and gradient-norm minimization of smooth convex functions ([`critpoint`]).

pub mod accel;
pub mod critpoint;
pub mod cvar;
pub mod error;
pub mod exec;
pub mod formats;
pub mod framework;
pub mod instances;
pub mod linalg;
pub mod matgames;
pub mod reference;
pub mod setups;

pub use error::{Error, Result};

//! Regime-switching stochastic reaction–diffusion SIV epidemic model:
//! simulation, adjoint-based control, integral RL and invariant-measure
//! diagnostics.

pub mod control;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod irl;
pub mod measure;
pub mod model;
pub mod regime;
pub mod seed;

pub use error::{Error, Result};

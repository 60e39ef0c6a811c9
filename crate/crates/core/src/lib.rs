//! Cahn-Hilliard image inpainting with a logarithmic potential and an
//! optimised, spatially varying fidelity coefficient.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod control;
pub mod decay;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod forward;
pub mod grid;
pub mod imaging;
mod operator;
pub mod potential;
pub mod sensitivity;
pub mod spectral;

pub use control::{ControlBox, ControlProblem, CostWeights};
pub use error::{Error, Result};
pub use forward::{FidelityField, SolverConfig, Trajectory};
pub use grid::{Field, Grid};
pub use potential::{LogPotential, Potential, PotentialParams};

//! Backstepping boundary control for an ODE cascaded with a reaction-diffusion
//! PDE actuated by a flux jump at an interior point.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod gain_synthesis;
pub mod kernel_solver;
pub mod simulator;
mod stencil;
pub mod system_model;
pub mod transform;

pub use error::{BackstepError, Result};

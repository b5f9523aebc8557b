//! Spectral analysis of single-well Schrödinger operators `-d²/dx² + V` and
//! kernels of spectral multipliers of the Grushin operator `-∂ₓ² - V(x)∂_y²`.

pub mod cache;
pub mod error;
pub mod geometry;
pub mod grushin;
pub mod multipliers;
pub mod ode;
pub mod potentials;
pub mod quad;
pub mod spectral_matrices;
pub mod sturm;

pub use error::{Error, Result};

//! Multi-resolution localized orthogonal decomposition for 2D Helmholtz
//! problems on Cartesian mesh hierarchies.

pub mod corrector;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod multires;
pub mod rng;
pub mod solver;
pub mod sparse;
pub mod transfer;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

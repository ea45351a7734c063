//! Numerical verification of anisotropic Carleman estimates for Schrödinger operators.
pub mod cli;
pub mod error;
pub mod gevrey;
pub mod conjugation;
pub mod grid;
pub mod jet;
mod quadrature;
pub mod schrodinger;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};

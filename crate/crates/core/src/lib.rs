pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod mesh;
pub mod nonlocal_op;
pub mod runner;
pub mod spectral;

pub use error::{Error, Result};

//! Finite-difference engine for subelliptic geometry on the Heisenberg group.

pub mod error;
pub mod fefferman;
pub mod grid;
pub mod heisenberg;
pub mod operators;
pub mod oracle;
pub mod stencil;
pub mod target;
pub mod variational;

pub use error::{Error, Result};

//! Numerical solver and verification suite for saddle-shaped solutions of the fractional
//! Allen–Cahn equation, computed through the λ^a-weighted extension problem in the reduced
//! doubly radial variables (s, t, λ).

pub mod error;
pub mod fracops1d;
pub mod geometry;
pub mod grid;
pub mod layer;
pub mod linalg;
pub mod numerics;
pub mod problem;
pub mod saddle;
pub mod stability;
pub mod verify;

pub use error::{Error, Result};

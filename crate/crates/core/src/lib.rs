//! Cooperative angle-of-arrival estimation across several access points.
//!
//! Each AP's single-snapshot sparse-recovery problem is restricted to binary
//! support indicators, the APs are coupled by a penalty on misaligned
//! supports after compensating for their known orientations, and the whole
//! thing is rewritten as a QUBO and minimized by annealed Metropolis search.

pub mod array_model;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod linalg;
pub mod qubo;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};

//! Structure-adversarial training of propagation-tree fake news detectors
//! that must work on content-only (cold-start) inputs.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod training;

pub use error::{ErrorKind, Result, SanError};

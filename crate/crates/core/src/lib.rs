//! Temporal-kernel operator banks, multi-scale propagation and
//! time-conditioned routing for multimodal recommendation.

pub mod checkpoint;
pub mod config;
pub mod context;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod operators;
pub mod pipeline;
pub mod propagation;
pub mod spectral;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

//! Regularized inverse holographic volume reconstruction.
//!
//! Recovers sparse 3D particle fields from single inline holograms by
//! minimizing `||H x - b||^2 + l1 ||x||_1 + tv ||x||_TV` with FISTA over
//! sparse plane stacks, then segments, tracks and evaluates the particles.

pub mod error;
pub mod metrics;
pub mod optics;
pub mod pipeline;
pub mod prox;
pub mod segment;
pub mod solver;
pub mod sparsevol;
pub mod synth;
pub mod track;

pub use error::{Error, Result};

//! Motion-compensated MR reconstruction toolkit.
//!
//! The crate covers the multi-coil Cartesian forward model, CG-SENSE
//! initialization, K-neighbor motion-compensated conjugate-gradient
//! reconstruction, a classical pyramidal optical-flow baseline, and flow
//! refinement driven directly by the reconstruction error with gradients
//! propagated through the unrolled solver.

#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod linalg;
pub mod metrics;
pub mod motion;
pub mod operators;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::{Seed, SeededRng};
pub use tensor::{load_tensor, save_tensor, ComplexTensor, Dtype};

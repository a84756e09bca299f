//! Iterative reconstruction: CG-SENSE and motion-compensated CG.

pub mod cg;
pub mod mc;
mod types;
mod window;

pub use cg::{cg_solve, CgOutput};
pub use mc::{
    cgsense_init, mc_adjoint, mc_forward, mcmr_reconstruct, zero_filled, FrameSystem, ReconConfig,
    ReconOutput,
};
pub use types::{CineSequence, KSpaceStack};
pub use window::neighbor_window;

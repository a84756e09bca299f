//! Linear operators of the MR forward chain.

pub mod adjoint;
pub mod coils;
pub mod encoder;
pub mod fft;
pub mod mask;
pub mod warp;

pub use adjoint::{adjoint_check, LinearOperatorPair};
pub use coils::{coil_combine, coil_expand, CoilMaps};
pub use encoder::{adjoint_ah, forward_a, Encoder};
pub use fft::{fft2c, ifft2c};
pub use mask::{apply_mask, MaskStack};
pub use warp::{warp_adjoint, warp_bilinear, FlowSet, WarpPlan};

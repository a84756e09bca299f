//! Motion estimation: the warping-loss baseline and reconstruction-driven
//! refinement through the unrolled CG solve.

pub(crate) mod estimate;
mod gradient;
mod refine;
mod warploss;


use crate::error::{Error, Result};
use crate::rng::Seed;

pub use estimate::{estimate_flow_warploss, NORMAL_DAMPING, WINDOW_SIGMA};
pub use gradient::{grad_recon_loss, recon_loss, LossReport};
pub use refine::{refine_flow_recon_driven, RefineOutput, RefineStatus, STALL_TOL, STALL_WINDOW};
pub use warploss::warping_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Unrolled,
    /// Unrolled gradient plus a few central-difference probes per iteration.
    FiniteDifferenceCheck,
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unrolled" => Ok(Self::Unrolled),
            "finite-difference-check" | "fd-check" => Ok(Self::FiniteDifferenceCheck),
            _ => Err(Error::Config(format!("unknown grad_mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOptConfig {
    pub max_outer_iters: usize,
    /// Initial step, in pixels of displacement of the largest gradient component.
    pub step_size: f64,
    pub step_shrink: f64,
    pub step_grow: f64,
    pub grad_mode: GradMode,
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    pub warp_iters_per_level: usize,
    pub seed: Seed,
}

impl Default for FlowOptConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 30,
            step_size: 0.5,
            step_shrink: 0.5,
            step_grow: 1.5,
            grad_mode: GradMode::Unrolled,
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            warp_iters_per_level: 10,
            seed: Seed(0),
        }
    }
}

impl FlowOptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be > 0");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink must lie in (0, 1)");
        }
        if !(self.step_grow >= 1.0 && self.step_grow.is_finite()) {
            return bad("step_grow must be >= 1");
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be >= 1");
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad("pyramid_scale must lie in (0, 1)");
        }
        Ok(())
    }
}

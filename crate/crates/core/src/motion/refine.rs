//! Reconstruction-driven flow refinement by backtracking gradient descent.

use super::gradient::Problem;
use super::{FlowOptConfig, GradMode};
use crate::error::Result;
use crate::operators::{CoilMaps, FlowSet, MaskStack};
use crate::recon::mc::ReconConfig;
use crate::recon::{CineSequence, KSpaceStack};
use crate::rng::SeededRng;

/// Relative improvement over the last [`STALL_WINDOW`] accepted steps that counts as converged.
pub const STALL_TOL: f64 = 1e-5;
pub const STALL_WINDOW: usize = 5;
/// Smallest trial step relative to the initial one.
const MIN_STEP_RATIO: f64 = 1e-3;
/// Components probed per iteration in finite-difference check mode.
const FD_PROBES: usize = 3;
const FD_H: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStatus {
    Converged,
    MaxIters,
    /// No decrease found even at the smallest step; best flows returned.
    StepTooSmall,
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub flows: FlowSet,
    /// Loss at the start and after each accepted step.
    pub trajectory: Vec<f64>,
    pub status: RefineStatus,
    pub gradient_evals: usize,
    pub loss_evals: usize,
    /// Largest relative gradient error seen in finite-difference check mode.
    pub fd_max_rel_err: Option<f64>,
}

/// Minimize the reconstruction loss over the flows starting from `flows_init`.
///
/// Steps move the largest-gradient component by `step` pixels. A trial is
/// accepted only if it lowers the loss; the step grows after an acceptance
/// and shrinks after a rejection.
#[allow(clippy::too_many_arguments)]
pub fn refine_flow_recon_driven(
    flows_init: &FlowSet,
    y: &KSpaceStack,
    coils: &CoilMaps,
    mask: &MaskStack,
    cfg_recon: &ReconConfig,
    cfg_opt: &FlowOptConfig,
    x_u: Option<&CineSequence>,
    x_ref: &CineSequence,
) -> Result<RefineOutput> {
    cfg_opt.validate()?;
    let prob = Problem::new(flows_init, y, coils, mask, cfg_recon, x_u, x_ref)?;
    let mut rng = SeededRng::new(cfg_opt.seed);
    let mut flows = flows_init.clone();
    let mut trajectory = Vec::new();
    let mut step = cfg_opt.step_size;
    let min_step = cfg_opt.step_size * MIN_STEP_RATIO;
    let mut out = RefineOutput {
        flows: flows.clone(),
        trajectory: Vec::new(),
        status: RefineStatus::MaxIters,
        gradient_evals: 0,
        loss_evals: 0,
        fd_max_rel_err: None,
    };
    for _ in 0..cfg_opt.max_outer_iters {
        let (loss, grad) = prob.loss_and_grad(&flows)?;
        out.gradient_evals += 1;
        if trajectory.is_empty() {
            trajectory.push(loss);
        }
        if cfg_opt.grad_mode == GradMode::FiniteDifferenceCheck {
            let err = fd_probe(&prob, &flows, &grad, &mut rng)?;
            out.loss_evals += 2 * FD_PROBES;
            out.fd_max_rel_err = Some(out.fd_max_rel_err.map_or(err, |e: f64| e.max(err)));
        }
        let gmax = grad.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax == 0.0 {
            out.status = RefineStatus::Converged;
            break;
        }
        let accepted = loop {
            let scale = step / gmax;
            let data = flows.data().iter().zip(grad.data()).map(|(f, g)| f - scale * g).collect();
            let cand = flows.with_data(data);
            let l = prob.loss_only(&cand)?;
            out.loss_evals += 1;
            if l < loss {
                step *= cfg_opt.step_grow;
                break Some((cand, l));
            }
            step *= cfg_opt.step_shrink;
            if step < min_step {
                break None;
            }
        };
        match accepted {
            Some((cand, l)) => {
                flows = cand;
                trajectory.push(l);
            }
            None => {
                out.status = RefineStatus::StepTooSmall;
                break;
            }
        }
        let t = trajectory.len();
        if t > STALL_WINDOW {
            let old = trajectory[t - 1 - STALL_WINDOW];
            if (old - trajectory[t - 1]) / old < STALL_TOL {
                out.status = RefineStatus::Converged;
                break;
            }
        }
    }
    out.flows = flows;
    out.trajectory = trajectory;
    Ok(out)
}

fn fd_probe(prob: &Problem<'_>, flows: &FlowSet, grad: &FlowSet, rng: &mut SeededRng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..FD_PROBES {
        let i = (rng.uniform() * flows.data().len() as f64) as usize % flows.data().len();
        let mut plus = flows.clone();
        plus.data_mut()[i] += FD_H;
        let mut minus = flows.clone();
        minus.data_mut()[i] -= FD_H;
        let fd = (prob.loss_only(&plus)? - prob.loss_only(&minus)?) / (2.0 * FD_H);
        let g = grad.data()[i];
        let denom = fd.abs().max(g.abs()).max(1e-300);
        worst = worst.max((fd - g).abs() / denom);
    }
    Ok(worst)
}

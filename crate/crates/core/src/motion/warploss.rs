//! Warping similarity between a frame and its window neighbors.

use crate::error::{Error, Result};
use crate::operators::{FlowSet, WarpPlan};
use crate::recon::{neighbor_window, CineSequence};

/// Warp a real image with backward bilinear sampling.
pub(crate) fn warp_real(plan: &WarpPlan, src: &[f64]) -> Vec<f64> {
    let c: Vec<_> = src.iter().map(|&v| num_complex::Complex64::new(v, 0.0)).collect();
    let mut out = vec![num_complex::Complex64::default(); c.len()];
    plan.apply(&c, &mut out);
    out.into_iter().map(|v| v.re).collect()
}

/// Mean over off-center slots of the per-pixel squared magnitude difference
/// for target frame `n`.
pub(crate) fn frame_warping_loss(x: &CineSequence, flows: &FlowSet, n: usize) -> Result<f64> {
    let (nx, ny) = x.grid();
    let k_half = flows.k() / 2;
    let window = neighbor_window(n, k_half, x.n_frames())?;
    if flows.k() == 1 {
        return Ok(0.0);
    }
    let mag: Vec<f64> = x.frame(n).iter().map(|v| v.norm()).collect();
    let mut total = 0.0;
    for (j, &w) in window.iter().enumerate() {
        if j == k_half {
            continue;
        }
        let warped = warp_real(&WarpPlan::new(flows.pair(n, j), nx, ny), &mag);
        let err: f64 = warped
            .iter()
            .zip(x.frame(w))
            .map(|(a, b)| (a - b.norm()).powi(2))
            .sum();
        total += err / (nx * ny) as f64;
    }
    Ok(total / (flows.k() - 1) as f64)
}

/// Warping loss averaged over every (frame, neighbor) pair.
pub fn warping_loss(x: &CineSequence, flows: &FlowSet) -> Result<f64> {
    if flows.n_frames() != x.n_frames() || flows.grid() != x.grid() {
        return Err(Error::DimMismatch("flows do not match the sequence".into()));
    }
    let mut total = 0.0;
    for n in 0..x.n_frames() {
        total += frame_warping_loss(x, flows, n)?;
    }
    Ok(total / x.n_frames() as f64)
}

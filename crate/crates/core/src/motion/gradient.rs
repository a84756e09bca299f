//! Reconstruction loss and its exact gradient with respect to the flows,
//! obtained by reverse-mode differentiation through the unrolled CG solve.
//!
//! Frames are independent systems, so the loss and gradient split per frame.
//! Cotangents of complex vectors follow `dL = Re<x_bar, dx>`.

use num_complex::Complex64;

use super::warploss::frame_warping_loss;
use crate::error::{Error, Result};
use crate::exec::map_indices;
use crate::linalg::{dot_re, norm_sq};
use crate::operators::{CoilMaps, FlowSet, MaskStack};
use crate::recon::cg::{cg_solve_recorded, CgTape};
use crate::recon::mc::{check_mc, zero_filled, FrameSystem, FrameWork, ReconConfig};
use crate::recon::{CineSequence, KSpaceStack};

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean squared complex error of the reconstruction against the reference.
    pub l_r: f64,
    /// Warping loss of the flows on the initialization (or the reconstruction when absent).
    pub l_w: f64,
    pub per_frame_l_r: Vec<f64>,
    pub per_frame_l_w: Vec<f64>,
}

pub(crate) struct Problem<'a> {
    pub coils: &'a CoilMaps,
    pub mask: &'a MaskStack,
    pub cfg: &'a ReconConfig,
    pub x_u: Option<&'a CineSequence>,
    pub x_ref: &'a CineSequence,
    pub adj_y: CineSequence,
}

impl<'a> Problem<'a> {
    pub fn new(
        flows: &FlowSet,
        y: &'a KSpaceStack,
        coils: &'a CoilMaps,
        mask: &'a MaskStack,
        cfg: &'a ReconConfig,
        x_u: Option<&'a CineSequence>,
        x_ref: &'a CineSequence,
    ) -> Result<Self> {
        check_mc(y, flows, coils, mask, cfg, x_u)?;
        if x_ref.n_frames() != y.n_frames() || x_ref.grid() != flows.grid() {
            return Err(Error::DimMismatch("reference does not match the k-space".into()));
        }
        if !flows.is_finite() {
            return Err(Error::NonFinite("flows".into()));
        }
        let adj_y = zero_filled(y, coils, mask)?;
        Ok(Self {
            coils,
            mask,
            cfg,
            x_u,
            x_ref,
            adj_y,
        })
    }

    fn scale(&self) -> f64 {
        1.0 / (self.x_ref.n_frames() * self.x_ref.pixels()) as f64
    }

    /// Forward pass of one frame, the same CG run as the reconstruction.
    fn solve_frame<'s>(
        &'s self,
        n: usize,
        flows: &FlowSet,
    ) -> Result<(FrameSystem<'s>, Vec<Complex64>, CgTape)> {
        let sys = FrameSystem::new(n, flows, self.coils, self.mask, self.cfg.lambda)?;
        let b = sys.rhs(&self.adj_y, self.x_u.map(|x| x.frame(n)));
        let mut work = FrameWork::default();
        let (out, tape) = cg_solve_recorded(|p, q| sys.apply(p, q, &mut work), &b, self.cfg.cg_iters, self.cfg.cg_tol)?;
        Ok((sys, out.x, tape))
    }

    fn frame_error(&self, n: usize, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().zip(self.x_ref.frame(n)).map(|(a, b)| a - b).collect()
    }

    pub fn loss_only(&self, flows: &FlowSet) -> Result<f64> {
        let per = map_indices(flows.n_frames(), |n| -> Result<f64> {
            let (_, x, _) = self.solve_frame(n, flows)?;
            Ok(norm_sq(&self.frame_error(n, &x)))
        });
        let mut total = 0.0;
        for v in per {
            total += v?;
        }
        let l = total * self.scale();
        if !l.is_finite() {
            return Err(Error::NonFinite("reconstruction loss".into()));
        }
        Ok(l)
    }

    /// Per-frame losses (unscaled sums) and the reconstruction.
    fn per_frame(&self, flows: &FlowSet) -> Result<(Vec<f64>, CineSequence)> {
        let (nx, ny) = flows.grid();
        let outs = map_indices(flows.n_frames(), |n| -> Result<(f64, Vec<Complex64>)> {
            let (_, x, _) = self.solve_frame(n, flows)?;
            Ok((norm_sq(&self.frame_error(n, &x)), x))
        });
        let mut losses = Vec::with_capacity(outs.len());
        let mut frames = Vec::with_capacity(outs.len());
        for o in outs {
            let (l, x) = o?;
            losses.push(l);
            frames.push(x);
        }
        Ok((losses, CineSequence::from_frames(frames, nx, ny)?))
    }

    pub fn loss_and_grad(&self, flows: &FlowSet) -> Result<(f64, FlowSet)> {
        let scale = self.scale();
        let outs = map_indices(flows.n_frames(), |n| -> Result<(f64, Vec<f64>)> {
            let (sys, x, tape) = self.solve_frame(n, flows)?;
            let err = self.frame_error(n, &x);
            let x_bar: Vec<Complex64> = err.iter().map(|e| e * (2.0 * scale)).collect();
            let mut g = vec![0.0; flows.frame(n).len()];
            backprop_frame(&sys, &tape, &self.adj_y, &x_bar, &mut g);
            Ok((norm_sq(&err), g))
        });
        let mut total = 0.0;
        let mut data = Vec::with_capacity(flows.data().len());
        for o in outs {
            let (l, g) = o?;
            total += l;
            data.extend(g);
        }
        let grad = flows.with_data(data);
        let l = total * scale;
        if !l.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite("reconstruction gradient".into()));
        }
        Ok((l, grad))
    }
}

/// Adds `V^T` applied to `q_bar` into `p_bar` and the flow terms of
/// `Re<q_bar, V p>` into `grad`.
fn normal_vjp(
    sys: &FrameSystem<'_>,
    p: &[Complex64],
    q_bar: &[Complex64],
    p_bar: &mut [Complex64],
    grad: &mut [f64],
    work: &mut Work,
) {
    let m = sys.pixels();
    for (j, (plan, row)) in sys.plans.iter().zip(&sys.rows).enumerate() {
        let g = &mut grad[j * 2 * m..(j + 1) * 2 * m];
        plan.apply(q_bar, &mut work.a);
        sys.enc.gram(&work.a, row, &mut work.ga, &mut work.scratch);
        plan.adjoint_add(&work.ga, p_bar);
        plan.flow_vjp_add(p, &work.ga, g);
        plan.apply(p, &mut work.a);
        sys.enc.gram(&work.a, row, &mut work.ga, &mut work.scratch);
        plan.flow_vjp_add(q_bar, &work.ga, g);
    }
    if sys.lambda != 0.0 {
        for (o, v) in p_bar.iter_mut().zip(q_bar) {
            *o += v * sys.lambda;
        }
    }
}

struct Work {
    a: Vec<Complex64>,
    ga: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// Reverse sweep over a recorded CG run ending at `x_I` with cotangent `x_bar`.
fn backprop_frame(
    sys: &FrameSystem<'_>,
    tape: &CgTape,
    adj_y: &CineSequence,
    x_bar: &[Complex64],
    grad: &mut [f64],
) {
    let m = sys.pixels();
    let zero = Complex64::default();
    let mut work = Work {
        a: vec![zero; m],
        ga: vec![zero; m],
        scratch: Vec::new(),
    };
    let iters = tape.iterations();
    // Cotangents of r_{i+1}, p_{i+1} and rho_{i+1} while sweeping i downwards.
    let mut r_bar = vec![zero; m];
    let mut p_bar = vec![zero; m];
    let mut rho_bar = 0.0;
    let mut q_bar = vec![zero; m];
    let mut p_bar_i = vec![zero; m];
    for i in (0..iters).rev() {
        let (p, q, r_next) = (&tape.p[i], &tape.q[i], &tape.r[i + 1]);
        let (rho, rho_next, sigma, alpha) = (tape.rho[i], tape.rho[i + 1], tape.sigma[i], tape.alpha[i]);
        let mut rho_bar_i = 0.0;
        p_bar_i.fill(zero);
        // p_{i+1} = r_{i+1} + beta_i p_i, only when iteration i + 1 ran.
        if i + 1 < iters {
            let beta = tape.beta[i];
            let beta_bar = dot_re(&p_bar, p);
            for ((rb, pbi), pb) in r_bar.iter_mut().zip(p_bar_i.iter_mut()).zip(&p_bar) {
                *rb += pb;
                *pbi += pb * beta;
            }
            rho_bar += beta_bar / rho;
            rho_bar_i -= beta_bar * rho_next / (rho * rho);
        }
        // rho_{i+1} = ||r_{i+1}||^2
        for (rb, rv) in r_bar.iter_mut().zip(r_next) {
            *rb += rv * (2.0 * rho_bar);
        }
        // r_{i+1} = r_i - alpha q_i ; x_{i+1} = x_i + alpha p_i
        let alpha_bar = dot_re(x_bar, p) - dot_re(&r_bar, q);
        for (((qb, rb), pbi), xb) in q_bar.iter_mut().zip(&r_bar).zip(p_bar_i.iter_mut()).zip(x_bar) {
            *qb = -rb * alpha;
            *pbi += xb * alpha;
        }
        // alpha = rho_i / sigma ; sigma = Re<p, q>
        rho_bar_i += alpha_bar / sigma;
        let sigma_bar = -alpha_bar * rho / (sigma * sigma);
        for (((pbi, qb), qv), pv) in p_bar_i.iter_mut().zip(q_bar.iter_mut()).zip(q).zip(p) {
            *pbi += qv * sigma_bar;
            *qb += pv * sigma_bar;
        }
        // q = V p
        normal_vjp(sys, p, &q_bar, &mut p_bar_i, grad, &mut work);
        std::mem::swap(&mut p_bar, &mut p_bar_i);
        rho_bar = rho_bar_i;
    }
    // p_0 = r_0 = b ; rho_0 = ||r_0||^2
    let r0 = &tape.r[0];
    let b_bar: Vec<Complex64> = if iters == 0 {
        vec![zero; m]
    } else {
        r_bar
            .iter()
            .zip(&p_bar)
            .zip(r0)
            .map(|((rb, pb), rv)| rb + pb + rv * (2.0 * rho_bar))
            .collect()
    };
    // b = sum_j U_j^T (A^H y)_{w_j} + lambda x_u
    for (j, (plan, &w)) in sys.plans.iter().zip(&sys.window).enumerate() {
        plan.flow_vjp_add(&b_bar, adj_y.frame(w), &mut grad[j * 2 * m..(j + 1) * 2 * m]);
    }
}

/// Reconstruct with the given flows and score against `x_ref`.
#[allow(clippy::too_many_arguments)]
pub fn recon_loss(
    flows: &FlowSet,
    y: &KSpaceStack,
    coils: &CoilMaps,
    mask: &MaskStack,
    cfg: &ReconConfig,
    x_u: Option<&CineSequence>,
    x_ref: &CineSequence,
) -> Result<LossReport> {
    let prob = Problem::new(flows, y, coils, mask, cfg, x_u, x_ref)?;
    let (per, recon) = prob.per_frame(flows)?;
    let pixels = x_ref.pixels() as f64;
    let per_frame_l_r: Vec<f64> = per.iter().map(|v| v / pixels).collect();
    let images = x_u.unwrap_or(&recon);
    let per_frame_l_w = (0..flows.n_frames())
        .map(|n| frame_warping_loss(images, flows, n))
        .collect::<Result<Vec<_>>>()?;
    let nf = flows.n_frames() as f64;
    let report = LossReport {
        l_r: per_frame_l_r.iter().sum::<f64>() / nf,
        l_w: per_frame_l_w.iter().sum::<f64>() / nf,
        per_frame_l_r,
        per_frame_l_w,
    };
    if !(report.l_r.is_finite() && report.l_w.is_finite()) {
        return Err(Error::NonFinite("loss report".into()));
    }
    Ok(report)
}

/// Gradient of [`recon_loss`]'s `l_r` with respect to every flow component.
#[allow(clippy::too_many_arguments)]
pub fn grad_recon_loss(
    flows: &FlowSet,
    y: &KSpaceStack,
    coils: &CoilMaps,
    mask: &MaskStack,
    cfg: &ReconConfig,
    x_u: Option<&CineSequence>,
    x_ref: &CineSequence,
) -> Result<FlowSet> {
    let prob = Problem::new(flows, y, coils, mask, cfg, x_u, x_ref)?;
    Ok(prob.loss_and_grad(flows)?.1)
}

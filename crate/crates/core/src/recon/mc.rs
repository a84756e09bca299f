//! CG-SENSE initialization and K-neighbor motion-compensated reconstruction.

use num_complex::Complex64;

use super::cg::{cg_solve, CgOutput};
use super::types::{CineSequence, KSpaceStack};
use super::window::neighbor_window;
use crate::error::{Error, Result};
use crate::exec::map_indices;
use crate::operators::{CoilMaps, Encoder, FlowSet, MaskStack, WarpPlan};
use crate::tensor::ComplexTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    /// Neighbors on each side; the window holds `K = 2 k_half + 1` frames.
    pub k_half: usize,
    pub lambda: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub init_iters: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            k_half: 4,
            lambda: 0.0,
            cg_iters: 10,
            cg_tol: 1e-10,
            init_iters: 10,
        }
    }
}

impl ReconConfig {
    pub fn window_len(&self) -> usize {
        2 * self.k_half + 1
    }
}

/// Reconstruction plus per-frame CG residual histories.
#[derive(Debug, Clone)]
pub struct ReconOutput {
    pub sequence: CineSequence,
    pub residuals: Vec<Vec<f64>>,
}

pub(crate) fn check_problem(y: &KSpaceStack, coils: &CoilMaps, mask: &MaskStack) -> Result<()> {
    let (n, s, nx, ny) = y.shape();
    if coils.shape() != (s, nx, ny) {
        return Err(Error::DimMismatch(format!(
            "k-space [{n}, {s}, {nx}, {ny}] vs coil maps {:?}",
            coils.shape()
        )));
    }
    if mask.n_frames() != n || mask.n_pe() != ny {
        return Err(Error::DimMismatch(format!(
            "mask [{}, {}] vs k-space [{n}, {s}, {nx}, {ny}]",
            mask.n_frames(),
            mask.n_pe()
        )));
    }
    Ok(())
}

/// `A_n^H y_n` for every frame (the zero-filled reconstruction).
pub fn zero_filled(y: &KSpaceStack, coils: &CoilMaps, mask: &MaskStack) -> Result<CineSequence> {
    check_problem(y, coils, mask)?;
    let enc = Encoder::new(coils);
    let (nx, ny) = enc.grid();
    let frames = map_indices(y.n_frames(), |n| {
        let mut x = vec![Complex64::default(); enc.pixels()];
        enc.adjoint(y.frame(n), mask.row(n), &mut x);
        x
    });
    CineSequence::from_frames(frames, nx, ny)
}

fn collect(outs: Vec<Result<CgOutput>>, nx: usize, ny: usize) -> Result<ReconOutput> {
    let mut frames = Vec::with_capacity(outs.len());
    let mut residuals = Vec::with_capacity(outs.len());
    for o in outs {
        let o = o?;
        frames.push(o.x);
        residuals.push(o.residuals);
    }
    Ok(ReconOutput {
        sequence: CineSequence::from_frames(frames, nx, ny)?,
        residuals,
    })
}

/// Frame-by-frame CG-SENSE: `A_n^H A_n x = A_n^H y_n`, capped at `init_iters`.
/// With `init_iters = 0` the zero-filled reconstruction is returned.
pub fn cgsense_init(
    y: &KSpaceStack,
    coils: &CoilMaps,
    mask: &MaskStack,
    init_iters: usize,
    tol: f64,
) -> Result<ReconOutput> {
    let adj = zero_filled(y, coils, mask)?;
    let (nx, ny) = adj.grid();
    if init_iters == 0 {
        let n = adj.n_frames();
        return Ok(ReconOutput {
            sequence: adj,
            residuals: vec![vec![1.0]; n],
        });
    }
    let enc = Encoder::new(coils);
    let outs = map_indices(y.n_frames(), |n| {
        let row = mask.row(n);
        let mut scratch = Vec::new();
        cg_solve(
            |p, q| enc.gram(p, row, q, &mut scratch),
            adj.frame(n),
            init_iters,
            tol,
        )
    });
    collect(outs, nx, ny)
}

/// The normal operator `sum_j U_j^T A_j^H A_j U_j + lambda I` of one target frame.
pub struct FrameSystem<'a> {
    pub(crate) enc: Encoder<'a>,
    pub(crate) plans: Vec<WarpPlan>,
    pub(crate) rows: Vec<&'a [bool]>,
    /// Absolute frame index of each window slot.
    pub(crate) window: Vec<usize>,
    pub(crate) lambda: f64,
}

impl<'a> FrameSystem<'a> {
    pub fn new(
        n: usize,
        flows: &FlowSet,
        coils: &'a CoilMaps,
        mask: &'a MaskStack,
        lambda: f64,
    ) -> Result<Self> {
        let k = flows.k();
        if k.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("window size K = {k} must be odd")));
        }
        let window = neighbor_window(n, k / 2, flows.n_frames())?;
        let enc = Encoder::new(coils);
        let (nx, ny) = enc.grid();
        if flows.grid() != (nx, ny) {
            return Err(Error::DimMismatch(format!(
                "flow grid {:?} vs image grid ({nx}, {ny})",
                flows.grid()
            )));
        }
        let plans = (0..k)
            .map(|j| WarpPlan::new(flows.pair(n, j), nx, ny))
            .collect();
        let rows = window.iter().map(|&m| mask.row(m)).collect();
        Ok(Self {
            enc,
            plans,
            rows,
            window,
            lambda,
        })
    }

    pub fn pixels(&self) -> usize {
        self.enc.pixels()
    }

    /// `out = V p`
    pub fn apply(&self, p: &[Complex64], out: &mut [Complex64], work: &mut FrameWork) {
        let m = self.pixels();
        work.ensure(m);
        out.fill(Complex64::default());
        for (plan, row) in self.plans.iter().zip(&self.rows) {
            plan.apply(p, &mut work.warped);
            self.enc.gram(&work.warped, row, &mut work.gram, &mut work.scratch);
            plan.adjoint_add(&work.gram, out);
        }
        if self.lambda != 0.0 {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v * self.lambda;
            }
        }
    }

    /// `b = sum_j U_j^T (A^H y)_{window[j]} + lambda x_u`
    pub fn rhs(&self, adj_y: &CineSequence, x_u: Option<&[Complex64]>) -> Vec<Complex64> {
        let mut b = vec![Complex64::default(); self.pixels()];
        for (plan, &m) in self.plans.iter().zip(&self.window) {
            plan.adjoint_add(adj_y.frame(m), &mut b);
        }
        if let (Some(xu), true) = (x_u, self.lambda != 0.0) {
            for (bi, v) in b.iter_mut().zip(xu) {
                *bi += v * self.lambda;
            }
        }
        b
    }
}

/// Reusable buffers for [`FrameSystem::apply`].
#[derive(Debug, Default)]
pub struct FrameWork {
    pub(crate) warped: Vec<Complex64>,
    pub(crate) gram: Vec<Complex64>,
    pub(crate) scratch: Vec<Complex64>,
}

impl FrameWork {
    fn ensure(&mut self, m: usize) {
        self.warped.resize(m, Complex64::default());
        self.gram.resize(m, Complex64::default());
    }
}

pub(crate) fn check_mc(
    y: &KSpaceStack,
    flows: &FlowSet,
    coils: &CoilMaps,
    mask: &MaskStack,
    cfg: &ReconConfig,
    x_u: Option<&CineSequence>,
) -> Result<()> {
    check_problem(y, coils, mask)?;
    if flows.k() != cfg.window_len() {
        return Err(Error::DimMismatch(format!(
            "flows carry K = {} but k_half = {} needs K = {}",
            flows.k(),
            cfg.k_half,
            cfg.window_len()
        )));
    }
    if flows.n_frames() != y.n_frames() {
        return Err(Error::DimMismatch(format!(
            "flows for {} frames vs k-space for {}",
            flows.n_frames(),
            y.n_frames()
        )));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    if cfg.cg_iters == 0 {
        return Err(Error::InvalidParameter("cg_iters must be >= 1".into()));
    }
    if cfg.lambda > 0.0 && x_u.is_none() {
        return Err(Error::InvalidParameter(
            "lambda > 0 requires the initialization x_u".into(),
        ));
    }
    if let Some(xu) = x_u {
        if xu.n_frames() != y.n_frames() || xu.grid() != flows.grid() {
            return Err(Error::DimMismatch("x_u does not match the k-space".into()));
        }
    }
    Ok(())
}

/// Solve `(U^H A^H A U + lambda I) x = U^H A^H y + lambda x_u` frame by frame.
pub fn mcmr_reconstruct(
    y: &KSpaceStack,
    flows: &FlowSet,
    coils: &CoilMaps,
    mask: &MaskStack,
    cfg: &ReconConfig,
    x_u: Option<&CineSequence>,
) -> Result<ReconOutput> {
    check_mc(y, flows, coils, mask, cfg, x_u)?;
    let adj_y = zero_filled(y, coils, mask)?;
    let (nx, ny) = adj_y.grid();
    let outs = map_indices(y.n_frames(), |n| {
        let sys = FrameSystem::new(n, flows, coils, mask, cfg.lambda)?;
        let b = sys.rhs(&adj_y, x_u.map(|x| x.frame(n)));
        let mut work = FrameWork::default();
        cg_solve(|p, q| sys.apply(p, q, &mut work), &b, cfg.cg_iters, cfg.cg_tol)
    });
    collect(outs, nx, ny)
}

/// Stacked motion-compensated encoding `A^(K) U^(n->K) x^(n)`, `[N, K, S, X, Y]`.
pub fn mc_forward(
    x: &CineSequence,
    flows: &FlowSet,
    coils: &CoilMaps,
    mask: &MaskStack,
) -> Result<ComplexTensor> {
    let (n_frames, k) = (x.n_frames(), flows.k());
    if flows.n_frames() != n_frames || flows.grid() != x.grid() {
        return Err(Error::DimMismatch("flows do not match the sequence".into()));
    }
    let enc = Encoder::new(coils);
    let (s, nx, ny) = coils.shape();
    let blocks = map_indices(n_frames, |n| -> Result<Vec<Complex64>> {
        let sys = FrameSystem::new(n, flows, coils, mask, 0.0)?;
        let mut out = vec![Complex64::default(); k * enc.kspace_len()];
        let mut warped = vec![Complex64::default(); enc.pixels()];
        for (j, chunk) in out.chunks_exact_mut(enc.kspace_len()).enumerate() {
            sys.plans[j].apply(x.frame(n), &mut warped);
            enc.forward(&warped, sys.rows[j], chunk);
        }
        Ok(out)
    });
    let mut data = Vec::with_capacity(n_frames * k * s * nx * ny);
    for b in blocks {
        data.extend(b?);
    }
    ComplexTensor::new(vec![n_frames, k, s, nx, ny], data)
}

/// Exact transpose of [`mc_forward`].
pub fn mc_adjoint(
    r: &ComplexTensor,
    flows: &FlowSet,
    coils: &CoilMaps,
    mask: &MaskStack,
) -> Result<CineSequence> {
    let (s, nx, ny) = coils.shape();
    let (n_frames, k) = (flows.n_frames(), flows.k());
    if r.dims() != [n_frames, k, s, nx, ny] {
        return Err(Error::DimMismatch(format!(
            "residual {:?} vs [{n_frames}, {k}, {s}, {nx}, {ny}]",
            r.dims()
        )));
    }
    let enc = Encoder::new(coils);
    let frames = map_indices(n_frames, |n| -> Result<Vec<Complex64>> {
        let sys = FrameSystem::new(n, flows, coils, mask, 0.0)?;
        let block = r.slab(n);
        let mut out = vec![Complex64::default(); enc.pixels()];
        let mut img = vec![Complex64::default(); enc.pixels()];
        for (j, chunk) in block.chunks_exact(enc.kspace_len()).enumerate() {
            enc.adjoint(chunk, sys.rows[j], &mut img);
            sys.plans[j].adjoint_add(&img, &mut out);
        }
        Ok(out)
    });
    CineSequence::from_frames(frames.into_iter().collect::<Result<Vec<_>>>()?, nx, ny)
}

//! Backward bilinear warping `U`, its exact adjoint, and its derivative with
//! respect to the displacement field.
//!
//! A flow field is a real `[2, X, Y]` array: channel 0 displaces along `X`,
//! channel 1 along `Y`. The warped image samples the source at `p + u(p)`.
//! Sample coordinates are clamped to the image, which keeps the map linear in
//! the source and makes the adjoint a plain scatter of bilinear weights.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: u32,
    i1: u32,
    j0: u32,
    j1: u32,
    tx: f64,
    ty: f64,
    /// Sample position left the image along X (flow derivative is zero).
    clamp_x: bool,
    clamp_y: bool,
}

fn axis_tap(coord: f64, n: usize) -> (u32, u32, f64, bool) {
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&coord);
    let c = coord.clamp(0.0, max);
    if n == 1 {
        return (0, 0, 0.0, true);
    }
    let i0 = (c.floor() as usize).min(n - 2);
    (i0 as u32, i0 as u32 + 1, c - i0 as f64, clamped)
}

/// Interpolation stencil for a fixed flow, reusable across many applications.
#[derive(Debug, Clone)]
pub struct WarpPlan {
    nx: usize,
    ny: usize,
    taps: Vec<Tap>,
}

impl WarpPlan {
    /// `flow` holds `2 * nx * ny` values laid out `[2, X, Y]`.
    pub fn new(flow: &[f64], nx: usize, ny: usize) -> Self {
        let m = nx * ny;
        assert_eq!(flow.len(), 2 * m, "flow must be [2, X, Y]");
        let mut taps = Vec::with_capacity(m);
        for x in 0..nx {
            for y in 0..ny {
                let p = x * ny + y;
                let (i0, i1, tx, clamp_x) = axis_tap(x as f64 + flow[p], nx);
                let (j0, j1, ty, clamp_y) = axis_tap(y as f64 + flow[m + p], ny);
                taps.push(Tap {
                    i0,
                    i1,
                    j0,
                    j1,
                    tx,
                    ty,
                    clamp_x,
                    clamp_y,
                });
            }
        }
        Self { nx, ny, taps }
    }

    pub fn identity(nx: usize, ny: usize) -> Self {
        Self::new(&vec![0.0; 2 * nx * ny], nx, ny)
    }

    pub fn pixels(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    fn corners(&self, t: &Tap) -> [usize; 4] {
        let ny = self.ny;
        [
            t.i0 as usize * ny + t.j0 as usize,
            t.i0 as usize * ny + t.j1 as usize,
            t.i1 as usize * ny + t.j0 as usize,
            t.i1 as usize * ny + t.j1 as usize,
        ]
    }

    /// `out(p) = src(p + u(p))`
    pub fn apply(&self, src: &[Complex64], out: &mut [Complex64]) {
        for (o, t) in out.iter_mut().zip(&self.taps) {
            let [a, b, c, d] = self.corners(t);
            let (tx, ty) = (t.tx, t.ty);
            *o = src[a] * ((1.0 - tx) * (1.0 - ty))
                + src[b] * ((1.0 - tx) * ty)
                + src[c] * (tx * (1.0 - ty))
                + src[d] * (tx * ty);
        }
    }

    /// Transpose of [`apply`](Self::apply): scatter-add of bilinear weights.
    pub fn adjoint(&self, cot: &[Complex64], out: &mut [Complex64]) {
        out.fill(Complex64::default());
        self.adjoint_add(cot, out);
    }

    /// `out += U^T cot`
    pub fn adjoint_add(&self, cot: &[Complex64], out: &mut [Complex64]) {
        for (g, t) in cot.iter().zip(&self.taps) {
            let [a, b, c, d] = self.corners(t);
            let (tx, ty) = (t.tx, t.ty);
            out[a] += g * ((1.0 - tx) * (1.0 - ty));
            out[b] += g * ((1.0 - tx) * ty);
            out[c] += g * (tx * (1.0 - ty));
            out[d] += g * (tx * ty);
        }
    }

    /// Accumulate `d/du Re<cot, U(u) src>` into `grad` (`[2, X, Y]`).
    ///
    /// Each output pixel depends only on its own displacement, so the
    /// derivative is pointwise. Components whose sample was clamped get zero.
    pub fn flow_vjp_add(&self, src: &[Complex64], cot: &[Complex64], grad: &mut [f64]) {
        let m = self.pixels();
        for (p, (g, t)) in cot.iter().zip(&self.taps).enumerate() {
            let [a, b, c, d] = self.corners(t);
            let (tx, ty) = (t.tx, t.ty);
            if !t.clamp_x {
                let dx = (src[c] - src[a]) * (1.0 - ty) + (src[d] - src[b]) * ty;
                grad[p] += g.re * dx.re + g.im * dx.im;
            }
            if !t.clamp_y {
                let dy = (src[b] - src[a]) * (1.0 - tx) + (src[d] - src[c]) * tx;
                grad[m + p] += g.re * dy.re + g.im * dy.im;
            }
        }
    }
}

/// Dense displacement fields for every `(frame, window slot)` pair, `[N, K, 2, X, Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet {
    n_frames: usize,
    k: usize,
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl FlowSet {
    pub fn zeros(n_frames: usize, k: usize, nx: usize, ny: usize) -> Self {
        Self {
            n_frames,
            k,
            nx,
            ny,
            data: vec![0.0; n_frames * k * 2 * nx * ny],
        }
    }

    /// Validates `K` odd and finite entries.
    pub fn new(n_frames: usize, k: usize, nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        Self::new_unchecked_parity(n_frames, k, nx, ny, data).and_then(|f| {
            if k.is_multiple_of(2) {
                Err(Error::InvalidParameter(format!("window size K = {k} must be odd")))
            } else {
                Ok(f)
            }
        })
    }

    /// Same as [`new`](Self::new) but allows even `K`, used for the all-pairs
    /// ground-truth layout where the second axis indexes absolute frames.
    pub fn new_unchecked_parity(
        n_frames: usize,
        k: usize,
        nx: usize,
        ny: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_frames * k * 2 * nx * ny || n_frames == 0 || k == 0 {
            return Err(Error::InvalidShape(format!(
                "{} flow values cannot be [{n_frames}, {k}, 2, {nx}, {ny}]",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(Self {
            n_frames,
            k,
            nx,
            ny,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Window size `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn pair_len(&self) -> usize {
        2 * self.nx * self.ny
    }

    pub fn pair(&self, n: usize, j: usize) -> &[f64] {
        let l = self.pair_len();
        let i = (n * self.k + j) * l;
        &self.data[i..i + l]
    }

    pub fn pair_mut(&mut self, n: usize, j: usize) -> &mut [f64] {
        let l = self.pair_len();
        let i = (n * self.k + j) * l;
        &mut self.data[i..i + l]
    }

    /// All slots of one target frame, `[K, 2, X, Y]`.
    pub fn frame(&self, n: usize) -> &[f64] {
        let l = self.pair_len() * self.k;
        &self.data[n * l..(n + 1) * l]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f64] {
        let l = self.pair_len() * self.k;
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same layout with `values` replaced.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn to_tensor(&self) -> ComplexTensor {
        ComplexTensor::from_real(
            vec![self.n_frames, self.k, 2, self.nx, self.ny],
            &self.data,
        )
        .expect("valid extents")
    }

    pub fn from_tensor(t: &ComplexTensor) -> Result<Self> {
        let d = t.dims();
        if d.len() != 5 || d[2] != 2 {
            return Err(Error::InvalidShape(format!(
                "flow tensor must be [N, K, 2, X, Y], got {d:?}"
            )));
        }
        if t.data().iter().any(|z| z.im != 0.0) {
            return Err(Error::InvalidParameter("flow tensor must be real".into()));
        }
        Self::new_unchecked_parity(d[0], d[1], d[3], d[4], t.real_parts())
    }

    /// Median displacement magnitude over all pairs.
    pub fn median_magnitude(&self) -> f64 {
        let m = self.nx * self.ny;
        let mut mags: Vec<f64> = self
            .data
            .chunks_exact(2 * m)
            .flat_map(|c| (0..m).map(move |p| c[p].hypot(c[m + p])))
            .collect();
        crate::stats::median(&mut mags)
    }
}

fn check_warp_args(img: &ComplexTensor, flow: &[f64]) -> Result<(usize, usize)> {
    let d = img.dims();
    if d.len() != 2 {
        return Err(Error::InvalidShape(format!("warp expects an [X, Y] image, got {d:?}")));
    }
    if flow.len() != 2 * d[0] * d[1] {
        return Err(Error::DimMismatch(format!(
            "flow of {} values vs image {d:?}",
            flow.len()
        )));
    }
    if flow.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("flow field".into()));
    }
    Ok((d[0], d[1]))
}

/// `out(p) = src(p + u(p))` by bilinear interpolation with edge clamping.
pub fn warp_bilinear(src: &ComplexTensor, flow: &[f64]) -> Result<ComplexTensor> {
    let (nx, ny) = check_warp_args(src, flow)?;
    let mut out = ComplexTensor::zeros(vec![nx, ny])?;
    WarpPlan::new(flow, nx, ny).apply(src.data(), out.data_mut());
    Ok(out)
}

/// Exact transpose of [`warp_bilinear`] for the same flow.
pub fn warp_adjoint(cot: &ComplexTensor, flow: &[f64]) -> Result<ComplexTensor> {
    let (nx, ny) = check_warp_args(cot, flow)?;
    let mut out = ComplexTensor::zeros(vec![nx, ny])?;
    WarpPlan::new(flow, nx, ny).adjoint(cot.data(), out.data_mut());
    Ok(out)
}

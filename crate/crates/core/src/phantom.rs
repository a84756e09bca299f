//! Dynamic cardiac-like phantom with exact ground-truth motion.
//!
//! A static template (elliptical body, a myocardium ring with intensity bumps
//! and a bright blood pool) is carried through a radial deformation centered
//! on the ring. Material radius `rho` moves to spatial radius
//! `rho * (1 - a_n * h(rho))` with `a_n = amp * sin^2(pi n / N)` and
//! `h(rho) = 1 / (1 + (rho / R_d)^8)`: the heart scales by `1 - a_n` while the
//! far field stays put. The map is strictly monotone in `rho` for `amp < 0.5`,
//! so both the frames and all pairwise flows are available in closed form
//! (up to a Newton inversion carried out to machine precision).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::map_indices as map_frames;
use crate::operators::fft::{fft2c_inplace, Direction};
use crate::operators::{CoilMaps, FlowSet, MaskStack};
use crate::recon::{neighbor_window, CineSequence, KSpaceStack};
use crate::rng::{Seed, SeededRng};
use crate::tensor::ComplexTensor;

/// Edge width (pixels) of the smooth step used for every tissue boundary.
const EDGE_WIDTH: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub n_frames: usize,
    pub n_coils: usize,
    pub ring_center: (f64, f64),
    pub r_outer: f64,
    pub r_inner: f64,
    pub contraction_amp: f64,
    pub n_features: usize,
    pub noise_sigma: f64,
    pub seed: Seed,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            nx: 128,
            ny: 128,
            n_frames: 16,
            n_coils: 4,
            ring_center: (62.0, 66.0),
            r_outer: 24.0,
            r_inner: 15.0,
            contraction_amp: 0.15,
            n_features: 6,
            noise_sigma: 0.01,
            seed: Seed(2024),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let half = self.nx.min(self.ny) as f64 / 2.0;
        if !(self.r_inner > 0.0 && self.r_inner < self.r_outer && self.r_outer < half) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < r_inner < r_outer < min(X, Y) / 2, got {} / {} / {half}",
                self.r_inner, self.r_outer
            )));
        }
        if self.n_frames < 3 {
            return Err(Error::InvalidParameter("phantom needs at least 3 frames".into()));
        }
        if self.n_coils == 0 {
            return Err(Error::InvalidParameter("phantom needs at least one coil".into()));
        }
        if !(0.0..0.5).contains(&self.contraction_amp) {
            return Err(Error::InvalidParameter(format!(
                "contraction_amp must lie in [0, 0.5), got {}",
                self.contraction_amp
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise_sigma must be >= 0".into()));
        }
        let (cx, cy) = self.ring_center;
        if cx - self.r_outer < 0.0
            || cy - self.r_outer < 0.0
            || cx + self.r_outer > (self.nx - 1) as f64
            || cy + self.r_outer > (self.ny - 1) as f64
        {
            return Err(Error::InvalidParameter("ring leaves the field of view".into()));
        }
        Ok(())
    }

    /// Deformation strength of frame `n`.
    pub fn contraction(&self, n: usize) -> f64 {
        self.contraction_amp * (PI * n as f64 / self.n_frames as f64).sin().powi(2)
    }

    fn deform(&self) -> Deformation {
        Deformation {
            decay_radius: 1.5 * self.r_outer,
        }
    }

    /// Weight in [0, 1] of where the phantom moves: 1 near the ring center,
    /// decaying past 1.5 outer radii.
    pub fn motion_support(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.ring_center;
        self.deform().h((x - cx).hypot(y - cy)).0
    }

    /// Myocardium area of frame `n` in the deformed (spatial) domain.
    pub fn ring_area(&self, n: usize) -> f64 {
        let d = self.deform();
        let a = self.contraction(n);
        let ro = d.forward(self.r_outer, a);
        let ri = d.forward(self.r_inner, a);
        PI * (ro * ro - ri * ri)
    }
}

#[derive(Debug, Clone, Copy)]
struct Deformation {
    decay_radius: f64,
}

impl Deformation {
    fn h(&self, rho: f64) -> (f64, f64) {
        let t = (rho / self.decay_radius).powi(8);
        let h = 1.0 / (1.0 + t);
        // rho * h'(rho)
        let rho_dh = -8.0 * t / (1.0 + t).powi(2);
        (h, rho_dh)
    }

    /// Spatial radius of material radius `rho`.
    fn forward(&self, rho: f64, a: f64) -> f64 {
        rho * (1.0 - a * self.h(rho).0)
    }

    /// Material radius at spatial radius `r`.
    fn inverse(&self, r: f64, a: f64) -> f64 {
        if a == 0.0 || r == 0.0 {
            return r;
        }
        // f(rho) lies in [rho (1 - a), rho], so the root is bracketed.
        let (mut lo, mut hi) = (r, r / (1.0 - a));
        let mut rho = r / (1.0 - a * self.h(r).0);
        for _ in 0..60 {
            let (h, rho_dh) = self.h(rho);
            let f = rho * (1.0 - a * h) - r;
            if f > 0.0 {
                hi = hi.min(rho);
            } else {
                lo = lo.max(rho);
            }
            let df = 1.0 - a * (h + rho_dh);
            let mut next = rho - f / df;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - rho).abs() <= 1e-14 * r.max(1.0) {
                return next;
            }
            rho = next;
        }
        rho
    }
}

#[derive(Debug, Clone)]
struct Feature {
    angle: f64,
    amplitude: f64,
}

/// Static template in material coordinates.
#[derive(Debug, Clone)]
struct Template {
    spec: PhantomSpec,
    features: Vec<Feature>,
}

fn smooth_step(d: f64) -> f64 {
    0.5 * (1.0 + (d / EDGE_WIDTH).tanh())
}

impl Template {
    fn new(spec: &PhantomSpec) -> Self {
        let mut rng = SeededRng::new(spec.seed.derive(0xFEA7));
        let phase0 = rng.uniform_in(0.0, 2.0 * PI);
        let features = (0..spec.n_features)
            .map(|f| Feature {
                angle: phase0 + 2.0 * PI * f as f64 / spec.n_features.max(1) as f64
                    + rng.uniform_in(-0.3, 0.3),
                amplitude: rng.uniform_in(0.15, 0.35),
            })
            .collect();
        Self {
            spec: spec.clone(),
            features,
        }
    }

    fn value(&self, qx: f64, qy: f64) -> Complex64 {
        let s = &self.spec;
        let (cx, cy) = s.ring_center;
        let (bx, by) = ((s.nx - 1) as f64 / 2.0, (s.ny - 1) as f64 / 2.0);
        let (ax, ay) = (0.44 * s.nx as f64, 0.40 * s.ny as f64);
        // Signed distance proxy for the ellipse, scaled to pixels.
        let e = (((qx - bx) / ax).powi(2) + ((qy - by) / ay).powi(2)).sqrt();
        let body = smooth_step((1.0 - e) * ax.min(ay));
        let (dx, dy) = (qx - cx, qy - cy);
        let rho = dx.hypot(dy);
        let outer = smooth_step(s.r_outer - rho);
        let inner = smooth_step(s.r_inner - rho);
        let (bg, myo, pool) = (0.25, 0.45, 0.9);
        let mut v = bg * body + (myo - bg * body) * outer + (pool - myo) * inner;
        let mid = 0.5 * (s.r_inner + s.r_outer);
        let width = (s.r_outer - s.r_inner) / 3.0;
        for f in &self.features {
            let (fx, fy) = (cx + mid * f.angle.cos(), cy + mid * f.angle.sin());
            let d2 = (qx - fx).powi(2) + (qy - fy).powi(2);
            v += f.amplitude * (-d2 / (2.0 * width * width)).exp();
        }
        let phase = 0.4 * (qx - bx) / s.nx as f64 - 0.3 * (qy - by) / s.ny as f64;
        Complex64::from_polar(v, phase)
    }
}

/// Ground-truth bundle produced by [`generate_phantom`].
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: PhantomSpec,
    pub sequence: CineSequence,
    /// All-pairs flows: `flows_gt.pair(n, m)` warps frame `n` onto frame `m`.
    pub flows_gt: FlowSet,
    pub coil_maps: CoilMaps,
    /// Fully sampled noisy k-space.
    pub kspace: KSpaceStack,
}

impl GroundTruth {
    /// Re-index the all-pairs flows into the cyclic window layout `[N, 2k+1, 2, X, Y]`.
    pub fn window_flows(&self, k_half: usize) -> Result<FlowSet> {
        window_from_pairwise(&self.flows_gt, k_half)
    }
}

/// Extract window-ordered flows from an all-pairs flow set.
pub fn window_from_pairwise(pairwise: &FlowSet, k_half: usize) -> Result<FlowSet> {
    let n = pairwise.n_frames();
    if pairwise.k() != n {
        return Err(Error::DimMismatch(format!(
            "all-pairs flows need K = N, got K = {} for N = {n}",
            pairwise.k()
        )));
    }
    let (nx, ny) = pairwise.grid();
    let k = 2 * k_half + 1;
    let mut out = FlowSet::zeros(n, neighbor_window(0, k_half, n)?.len(), nx, ny);
    for t in 0..n {
        for (j, m) in neighbor_window(t, k_half, n)?.into_iter().enumerate() {
            out.pair_mut(t, j).copy_from_slice(pairwise.pair(t, m));
        }
    }
    debug_assert_eq!(out.k(), k);
    Ok(out)
}

fn evaluate_frame(spec: &PhantomSpec, template: &Template, n: usize) -> Vec<Complex64> {
    let d = spec.deform();
    let a = spec.contraction(n);
    let (cx, cy) = spec.ring_center;
    let mut out = Vec::with_capacity(spec.nx * spec.ny);
    for x in 0..spec.nx {
        for y in 0..spec.ny {
            let (vx, vy) = (x as f64 - cx, y as f64 - cy);
            let r = vx.hypot(vy);
            let scale = if r > 0.0 { d.inverse(r, a) / r } else { 1.0 };
            out.push(template.value(cx + vx * scale, cy + vy * scale));
        }
    }
    out
}

/// Displacement that warps frame `n` onto frame `m`'s grid.
fn pair_flow(spec: &PhantomSpec, n: usize, m: usize) -> Vec<f64> {
    let mm = spec.nx * spec.ny;
    let mut flow = vec![0.0; 2 * mm];
    if n == m {
        return flow;
    }
    let d = spec.deform();
    let (an, am) = (spec.contraction(n), spec.contraction(m));
    if an == am {
        return flow;
    }
    let (cx, cy) = spec.ring_center;
    for x in 0..spec.nx {
        for y in 0..spec.ny {
            let p = x * spec.ny + y;
            let (vx, vy) = (x as f64 - cx, y as f64 - cy);
            let r = vx.hypot(vy);
            if r == 0.0 {
                continue;
            }
            let rz = d.forward(d.inverse(r, am), an);
            let g = rz / r - 1.0;
            flow[p] = vx * g;
            flow[mm + p] = vy * g;
        }
    }
    flow
}

/// Coil sensitivities: Gaussian lobes around the field of view with a
/// per-coil phase ramp, normalized per pixel.
pub fn synthesize_coil_maps(nx: usize, ny: usize, n_coils: usize) -> Result<CoilMaps> {
    let (bx, by) = ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0);
    let rad = 0.55 * nx.min(ny) as f64;
    let sigma = 0.45 * nx.min(ny) as f64;
    let mut data = Vec::with_capacity(n_coils * nx * ny);
    for c in 0..n_coils {
        let th = 2.0 * PI * c as f64 / n_coils as f64;
        let (px, py) = (bx + rad * th.cos(), by + rad * th.sin());
        for x in 0..nx {
            for y in 0..ny {
                let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp() + 1e-3;
                let phase = th + 1.5 * ((x as f64 - bx) * th.cos() + (y as f64 - by) * th.sin())
                    / nx.max(ny) as f64;
                data.push(Complex64::from_polar(mag, phase));
            }
        }
    }
    CoilMaps::normalized(ComplexTensor::new(vec![n_coils, nx, ny], data)?)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (nx, ny, n) = (spec.nx, spec.ny, spec.n_frames);
    let m = nx * ny;
    let template = Template::new(spec);
    let frames = map_frames(n, |t| evaluate_frame(spec, &template, t));
    let sequence = CineSequence::from_frames(frames, nx, ny)?;

    let pairs = map_frames(n * n, |i| pair_flow(spec, i / n, i % n));
    let flows_gt = FlowSet::new_unchecked_parity(n, n, nx, ny, pairs.into_iter().flatten().collect())?;

    let coil_maps = synthesize_coil_maps(nx, ny, spec.n_coils)?;
    let s = spec.n_coils;
    let noise_std = spec.noise_sigma * sequence.max_magnitude();
    let kspace_frames = map_frames(n, |t| {
        let mut k = vec![Complex64::default(); s * m];
        coil_maps.expand_into(sequence.frame(t), &mut k);
        fft2c_inplace(&mut k, nx, ny, Direction::Forward);
        if noise_std > 0.0 {
            let mut rng = SeededRng::new(spec.seed.derive(0x4E01_0000 + t as u64));
            for z in k.iter_mut() {
                *z += rng.complex_normal() * noise_std;
            }
        }
        k
    });
    let kspace = KSpaceStack::new(ComplexTensor::new(
        vec![n, s, nx, ny],
        kspace_frames.into_iter().flatten().collect(),
    )?)?;
    Ok(GroundTruth {
        spec: spec.clone(),
        sequence,
        flows_gt,
        coil_maps,
        kspace,
    })
}

/// Retrospective undersampling of the fully sampled k-space.
pub fn simulate_acquisition(gt: &GroundTruth, mask: &MaskStack) -> Result<KSpaceStack> {
    gt.kspace.masked(mask)
}

/// Ring bounding box `(x0, y0, width, height)` at end diastole, in pixels.
pub fn ring_bounding_box(spec: &PhantomSpec) -> (usize, usize, usize, usize) {
    let (cx, cy) = spec.ring_center;
    let r = spec.r_outer + 2.0 * EDGE_WIDTH;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(spec.nx - 1);
    let y1 = ((cy + r).ceil() as usize).min(spec.ny - 1);
    (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

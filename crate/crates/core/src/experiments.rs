//! Shared scenario setup for the pipeline, the ablation sweeps and the
//! acceptance harness.

use crate::error::{Error, Result};
use crate::metrics::{score_frames, sequence_psnr, FrameScore, Roi};
use crate::motion::estimate::box_blur;
use crate::operators::{FlowSet, MaskStack};
use crate::phantom::{generate_phantom, simulate_acquisition, window_from_pairwise, GroundTruth, PhantomSpec};
use crate::recon::{cgsense_init, mcmr_reconstruct, CineSequence, KSpaceStack, ReconConfig, ReconOutput};
use crate::rng::{Seed, SeededRng};
use crate::sampling::{generate_mask, MaskSpec};

/// One retrospectively undersampled phantom acquisition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub gt: GroundTruth,
    pub mask: MaskStack,
    pub y: KSpaceStack,
    pub x_u: CineSequence,
    pub roi: Roi,
}

impl Scenario {
    pub fn new(spec: &PhantomSpec, accel: f64, mask_seed: Seed, init_iters: usize) -> Result<Self> {
        let gt = generate_phantom(spec)?;
        let mask = generate_mask(&MaskSpec::new(spec.n_frames, spec.ny, accel, mask_seed))?;
        Self::from_parts(gt, mask, init_iters)
    }

    pub fn from_parts(gt: GroundTruth, mask: MaskStack, init_iters: usize) -> Result<Self> {
        let y = simulate_acquisition(&gt, &mask)?;
        let x_u = cgsense_init(&y, &gt.coil_maps, &mask, init_iters, 1e-10)?.sequence;
        let roi = Roi::from_phantom(&gt.spec);
        Ok(Self { gt, mask, y, x_u, roi })
    }

    pub fn reconstruct(&self, flows: &FlowSet, cfg: &ReconConfig) -> Result<ReconOutput> {
        let x_u = (cfg.lambda > 0.0).then_some(&self.x_u);
        mcmr_reconstruct(&self.y, flows, &self.gt.coil_maps, &self.mask, cfg, x_u)
    }

    /// ROI PSNR of a sequence against the ground truth.
    pub fn psnr(&self, x: &CineSequence) -> Result<f64> {
        sequence_psnr(&self.gt.sequence, x, Some(&self.roi))
    }

    pub fn frame_scores(&self, x: &CineSequence) -> Result<Vec<FrameScore>> {
        score_frames(&self.gt.sequence, x, Some(&self.roi))
    }
}

/// Imperfect "reference" motion: a systematic underestimate of the true
/// displacement plus smooth random error inside the moving region that grows
/// with the cyclic temporal distance between the two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPerturbation {
    /// Fraction of the true displacement that is lost.
    pub shrink: f64,
    /// Peak RMS of the random error per frame of temporal distance, in pixels.
    pub noise_per_frame: f64,
    /// Spatial correlation length of the random error, in pixels.
    pub smoothness: f64,
    pub seed: Seed,
}

impl Default for FlowPerturbation {
    fn default() -> Self {
        Self {
            shrink: 0.2,
            noise_per_frame: 0.45,
            smoothness: 6.0,
            seed: Seed(0x5EED),
        }
    }
}

/// Apply a [`FlowPerturbation`] to all-pairs flows. The error of pair
/// `(n, m)` does not depend on the window it is later extracted into.
pub fn perturb_pairwise(pairwise: &FlowSet, spec: &PhantomSpec, p: &FlowPerturbation) -> Result<FlowSet> {
    let n = pairwise.n_frames();
    if pairwise.k() != n {
        return Err(Error::DimMismatch("perturbation needs all-pairs flows".into()));
    }
    if !(p.shrink.is_finite() && p.noise_per_frame >= 0.0 && p.smoothness > 0.0) {
        return Err(Error::InvalidParameter("bad flow perturbation".into()));
    }
    let (nx, ny) = pairwise.grid();
    if (nx, ny) != (spec.nx, spec.ny) {
        return Err(Error::DimMismatch("flows do not match the phantom grid".into()));
    }
    let m = nx * ny;
    let support: Vec<f64> = (0..m)
        .map(|q| spec.motion_support((q / ny) as f64, (q % ny) as f64))
        .collect();
    let mut out = pairwise.clone();
    for a in 0..n {
        for b in 0..n {
            let d = a.abs_diff(b).min(n - a.abs_diff(b)) as f64;
            let pair = out.pair_mut(a, b);
            pair.iter_mut().for_each(|v| *v *= 1.0 - p.shrink);
            if d == 0.0 || p.noise_per_frame == 0.0 {
                continue;
            }
            let mut rng = SeededRng::new(p.seed.derive((a * n + b) as u64));
            for c in 0..2 {
                let white: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
                let smooth = box_blur(&white, nx, ny, p.smoothness);
                let rms = (smooth.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
                let gain = p.noise_per_frame * d / rms.max(f64::MIN_POSITIVE);
                for ((v, s), w) in pair[c * m..(c + 1) * m].iter_mut().zip(&smooth).zip(&support) {
                    *v += gain * w * s;
                }
            }
        }
    }
    Ok(out)
}

/// Window flows of the perturbed ground truth for one `k_half`.
pub fn perturbed_window_flows(gt: &GroundTruth, k_half: usize, p: &FlowPerturbation) -> Result<FlowSet> {
    window_from_pairwise(&perturb_pairwise(&gt.flows_gt, &gt.spec, p)?, k_half)
}

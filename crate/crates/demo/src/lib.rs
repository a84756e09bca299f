//! Browser demo: a small beating-ring phantom with three interactive views.
//!
//! * the spatio-temporal sampling mask at a chosen acceleration,
//! * CG-SENSE against motion-compensated reconstruction for a flow source,
//! * a ground-truth flow field and the neighbor frame warped onto a target.
//!
//! Images cross the boundary as row-major `f32` magnitudes, `X` rows by `Y`
//! columns.

use mcmr::experiments::{perturb_pairwise, FlowPerturbation, Scenario};
use mcmr::metrics::sequence_psnr;
use mcmr::motion::{estimate_flow_warploss, FlowOptConfig};
use mcmr::operators::{warp_bilinear, FlowSet};
use mcmr::phantom::{generate_phantom, window_from_pairwise, PhantomSpec};
use mcmr::recon::{CineSequence, ReconConfig};
use mcmr::sampling::{generate_mask, MaskSpec};
use mcmr::{Result, Seed};
use wasm_bindgen::prelude::*;

pub fn demo_spec() -> PhantomSpec {
    PhantomSpec {
        nx: 48,
        ny: 48,
        n_frames: 8,
        n_coils: 4,
        ring_center: (23.0, 25.0),
        r_outer: 10.0,
        r_inner: 6.0,
        contraction_amp: 0.2,
        n_features: 3,
        ..PhantomSpec::default()
    }
}

fn js(e: mcmr::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn magnitudes(x: &CineSequence) -> Vec<f32> {
    x.tensor().data().iter().map(|z| z.norm() as f32).collect()
}

/// Mask lines `[N, Y]` as 0/1 bytes.
#[wasm_bindgen]
pub fn mask_pattern(n_frames: usize, n_pe: usize, accel: f64, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    let m = generate_mask(&MaskSpec::new(n_frames, n_pe, accel, Seed(seed as u64))).map_err(js)?;
    Ok((0..n_frames).flat_map(|n| m.row(n).iter().map(|&b| b as u8).collect::<Vec<_>>()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSource {
    Zero,
    Truth,
    Perturbed,
    Estimated,
}

impl FlowSource {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "zero" => Self::Zero,
            "truth" => Self::Truth,
            "perturbed" => Self::Perturbed,
            "estimated" => Self::Estimated,
            _ => return None,
        })
    }
}

/// One reconstruction: the image stack and its PSNR against the truth.
#[wasm_bindgen]
pub struct Recon {
    frames: Vec<f32>,
    psnr: f64,
}

#[wasm_bindgen]
impl Recon {
    pub fn frames(&self) -> Vec<f32> {
        self.frames.clone()
    }

    pub fn psnr(&self) -> f64 {
        self.psnr
    }
}

#[wasm_bindgen]
pub struct Demo {
    sc: Scenario,
}

impl Demo {
    pub fn build(accel: f64, seed: u64) -> Result<Self> {
        let spec = demo_spec();
        let gt = generate_phantom(&spec)?;
        let mask = generate_mask(&MaskSpec::new(spec.n_frames, spec.ny, accel, Seed(seed)))?;
        Ok(Self {
            sc: Scenario::from_parts(gt, mask, 10)?,
        })
    }

    pub fn flows(&self, source: FlowSource, k_half: usize) -> Result<FlowSet> {
        let spec = &self.sc.gt.spec;
        match source {
            FlowSource::Zero => Ok(FlowSet::zeros(spec.n_frames, 2 * k_half + 1, spec.nx, spec.ny)),
            FlowSource::Truth => window_from_pairwise(&self.sc.gt.flows_gt, k_half),
            FlowSource::Perturbed => {
                let pw = perturb_pairwise(&self.sc.gt.flows_gt, spec, &FlowPerturbation::default())?;
                window_from_pairwise(&pw, k_half)
            }
            FlowSource::Estimated => estimate_flow_warploss(&self.sc.x_u, k_half, &FlowOptConfig::default()),
        }
    }

    /// `k_half = None` returns the CG-SENSE initialization.
    pub fn run(&self, k_half: Option<usize>, lambda: f64, source: FlowSource) -> Result<(CineSequence, f64)> {
        let x = match k_half {
            None => self.sc.x_u.clone(),
            Some(kh) => {
                let cfg = ReconConfig {
                    k_half: kh,
                    lambda,
                    ..ReconConfig::default()
                };
                self.sc.reconstruct(&self.flows(source, kh)?, &cfg)?.sequence
            }
        };
        let p = sequence_psnr(&self.sc.gt.sequence, &x, None)?;
        Ok((x, p))
    }

    /// Ground-truth flow from `frame` towards `frame + offset` and the
    /// neighbor frame warped back onto `frame`'s grid.
    pub fn warp(&self, frame: usize, offset: isize) -> Result<(Vec<f64>, CineSequence)> {
        let n = self.sc.gt.spec.n_frames as isize;
        let j = (frame as isize + offset).rem_euclid(n) as usize;
        let flow = self.sc.gt.flows_gt.pair(frame, j).to_vec();
        let seq = &self.sc.gt.sequence;
        let (nx, ny) = seq.grid();
        let src = mcmr::ComplexTensor::new(vec![nx, ny], seq.frame(j).to_vec())?;
        let warped = warp_bilinear(&src, &flow)?;
        Ok((flow, CineSequence::new(warped.reshape(vec![1, nx, ny])?)?))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(accel: f64, seed: u32) -> std::result::Result<Demo, JsError> {
        Self::build(accel, seed as u64).map_err(js)
    }

    pub fn nx(&self) -> usize {
        self.sc.gt.spec.nx
    }

    pub fn ny(&self) -> usize {
        self.sc.gt.spec.ny
    }

    pub fn n_frames(&self) -> usize {
        self.sc.gt.spec.n_frames
    }

    pub fn truth(&self) -> Vec<f32> {
        magnitudes(&self.sc.gt.sequence)
    }

    pub fn mask(&self) -> Vec<u8> {
        let m = &self.sc.mask;
        (0..m.n_frames()).flat_map(|n| m.row(n).iter().map(|&b| b as u8).collect::<Vec<_>>()).collect()
    }

    pub fn cgsense(&self) -> std::result::Result<Recon, JsError> {
        let (x, psnr) = self.run(None, 0.0, FlowSource::Zero).map_err(js)?;
        Ok(Recon {
            frames: magnitudes(&x),
            psnr,
        })
    }

    /// `source` is one of "zero", "truth", "perturbed", "estimated".
    pub fn reconstruct(&self, k_half: usize, lambda: f64, source: &str) -> std::result::Result<Recon, JsError> {
        let src = FlowSource::parse(source).ok_or_else(|| JsError::new(&format!("unknown flow source '{source}'")))?;
        let (x, psnr) = self.run(Some(k_half), lambda, src).map_err(js)?;
        Ok(Recon {
            frames: magnitudes(&x),
            psnr,
        })
    }

    /// `[2, X, Y]` displacement followed by the `[X, Y]` warped magnitude.
    pub fn warp_view(&self, frame: usize, offset: i32) -> std::result::Result<Vec<f32>, JsError> {
        let (flow, warped) = self.warp(frame, offset as isize).map_err(js)?;
        let mut out: Vec<f32> = flow.iter().map(|&v| v as f32).collect();
        out.extend(magnitudes(&warped));
        Ok(out)
    }
}

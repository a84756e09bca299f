//! Plain-text experiment configuration: one `key = value` per line, `#`
//! starts a comment, unknown keys are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::FlowPerturbation;
use crate::motion::{FlowOptConfig, GradMode};
use crate::phantom::PhantomSpec;
use crate::recon::ReconConfig;
use crate::rng::Seed;
use crate::sampling::MaskSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub accel: f64,
    pub n_center: usize,
    pub mask_seed: Seed,
    pub recon: ReconConfig,
    pub opt: FlowOptConfig,
    pub perturb: FlowPerturbation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            accel: 8.0,
            n_center: 4,
            mask_seed: Seed(1),
            recon: ReconConfig::default(),
            opt: FlowOptConfig::default(),
            perturb: FlowPerturbation::default(),
        }
    }
}

/// Every accepted key, in the order [`ExperimentConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "nx",
    "ny",
    "n_frames",
    "n_coils",
    "ring_center_x",
    "ring_center_y",
    "r_outer",
    "r_inner",
    "contraction_amp",
    "n_features",
    "noise_sigma",
    "phantom_seed",
    "accel",
    "n_center",
    "mask_seed",
    "k_half",
    "lambda",
    "cg_iters",
    "cg_tol",
    "init_iters",
    "max_outer_iters",
    "step_size",
    "step_shrink",
    "step_grow",
    "grad_mode",
    "pyramid_levels",
    "pyramid_scale",
    "warp_iters_per_level",
    "opt_seed",
    "perturb_shrink",
    "perturb_noise",
    "perturb_smoothness",
    "perturb_seed",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for key '{key}'")))
}

impl ExperimentConfig {
    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec {
            n_frames: self.phantom.n_frames,
            n_pe: self.phantom.ny,
            accel: self.accel,
            n_center: self.n_center,
            seed: self.mask_seed,
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.phantom;
        match key {
            "nx" => p.nx = num(key, v)?,
            "ny" => p.ny = num(key, v)?,
            "n_frames" => p.n_frames = num(key, v)?,
            "n_coils" => p.n_coils = num(key, v)?,
            "ring_center_x" => p.ring_center.0 = num(key, v)?,
            "ring_center_y" => p.ring_center.1 = num(key, v)?,
            "r_outer" => p.r_outer = num(key, v)?,
            "r_inner" => p.r_inner = num(key, v)?,
            "contraction_amp" => p.contraction_amp = num(key, v)?,
            "n_features" => p.n_features = num(key, v)?,
            "noise_sigma" => p.noise_sigma = num(key, v)?,
            "phantom_seed" => p.seed = Seed(num(key, v)?),
            "accel" => self.accel = num(key, v)?,
            "n_center" => self.n_center = num(key, v)?,
            "mask_seed" => self.mask_seed = Seed(num(key, v)?),
            "k_half" => self.recon.k_half = num(key, v)?,
            "lambda" => self.recon.lambda = num(key, v)?,
            "cg_iters" => self.recon.cg_iters = num(key, v)?,
            "cg_tol" => self.recon.cg_tol = num(key, v)?,
            "init_iters" => self.recon.init_iters = num(key, v)?,
            "max_outer_iters" => self.opt.max_outer_iters = num(key, v)?,
            "step_size" => self.opt.step_size = num(key, v)?,
            "step_shrink" => self.opt.step_shrink = num(key, v)?,
            "step_grow" => self.opt.step_grow = num(key, v)?,
            "grad_mode" => self.opt.grad_mode = v.parse::<GradMode>()?,
            "pyramid_levels" => self.opt.pyramid_levels = num(key, v)?,
            "pyramid_scale" => self.opt.pyramid_scale = num(key, v)?,
            "warp_iters_per_level" => self.opt.warp_iters_per_level = num(key, v)?,
            "opt_seed" => self.opt.seed = Seed(num(key, v)?),
            "perturb_shrink" => self.perturb.shrink = num(key, v)?,
            "perturb_noise" => self.perturb.noise_per_frame = num(key, v)?,
            "perturb_smoothness" => self.perturb.smoothness = num(key, v)?,
            "perturb_seed" => self.perturb.seed = Seed(num(key, v)?),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.phantom;
        Some(match key {
            "nx" => p.nx.to_string(),
            "ny" => p.ny.to_string(),
            "n_frames" => p.n_frames.to_string(),
            "n_coils" => p.n_coils.to_string(),
            "ring_center_x" => p.ring_center.0.to_string(),
            "ring_center_y" => p.ring_center.1.to_string(),
            "r_outer" => p.r_outer.to_string(),
            "r_inner" => p.r_inner.to_string(),
            "contraction_amp" => p.contraction_amp.to_string(),
            "n_features" => p.n_features.to_string(),
            "noise_sigma" => p.noise_sigma.to_string(),
            "phantom_seed" => p.seed.0.to_string(),
            "accel" => self.accel.to_string(),
            "n_center" => self.n_center.to_string(),
            "mask_seed" => self.mask_seed.0.to_string(),
            "k_half" => self.recon.k_half.to_string(),
            "lambda" => self.recon.lambda.to_string(),
            "cg_iters" => self.recon.cg_iters.to_string(),
            "cg_tol" => self.recon.cg_tol.to_string(),
            "init_iters" => self.recon.init_iters.to_string(),
            "max_outer_iters" => self.opt.max_outer_iters.to_string(),
            "step_size" => self.opt.step_size.to_string(),
            "step_shrink" => self.opt.step_shrink.to_string(),
            "step_grow" => self.opt.step_grow.to_string(),
            "grad_mode" => match self.opt.grad_mode {
                GradMode::Unrolled => "unrolled".into(),
                GradMode::FiniteDifferenceCheck => "finite-difference-check".into(),
            },
            "pyramid_levels" => self.opt.pyramid_levels.to_string(),
            "pyramid_scale" => self.opt.pyramid_scale.to_string(),
            "warp_iters_per_level" => self.opt.warp_iters_per_level.to_string(),
            "opt_seed" => self.opt.seed.0.to_string(),
            "perturb_shrink" => self.perturb.shrink.to_string(),
            "perturb_noise" => self.perturb.noise_per_frame.to_string(),
            "perturb_smoothness" => self.perturb.smoothness.to_string(),
            "perturb_seed" => self.perturb.seed.0.to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.mask_spec().validate()?;
        self.opt.validate()?;
        if self.recon.cg_iters == 0 {
            return Err(Error::Config("cg_iters must be >= 1".into()));
        }
        if self.recon.lambda.is_nan() || self.recon.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if 2 * self.recon.k_half + 1 > self.phantom.n_frames {
            return Err(Error::Config(format!(
                "k_half = {} needs at least {} frames",
                self.recon.k_half,
                2 * self.recon.k_half + 1
            )));
        }
        Ok(())
    }

    /// All keys with their current values, parseable by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }
}

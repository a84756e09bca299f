//! Retrospective Cartesian spatio-temporal undersampling.
//!
//! Each frame keeps a fixed block of central lines and draws the rest from a
//! Gaussian variable-density profile over the phase-encode axis. Draws are
//! stratified in the cumulative density with a golden-ratio phase that
//! advances from frame to frame, and lines already used in the current
//! coverage cycle are withheld until every line has been visited once. The
//! union over frames therefore tiles k-space while each frame stays
//! center-weighted.

use crate::error::{Error, Result};
use crate::operators::MaskStack;
use crate::rng::{Seed, SeededRng};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub n_frames: usize,
    pub n_pe: usize,
    pub accel: f64,
    pub n_center: usize,
    pub seed: Seed,
}

impl MaskSpec {
    pub fn new(n_frames: usize, n_pe: usize, accel: f64, seed: Seed) -> Self {
        Self {
            n_frames,
            n_pe,
            accel,
            n_center: 4,
            seed,
        }
    }

    /// Lines sampled in every frame.
    pub fn lines_per_frame(&self) -> usize {
        let l = (self.n_pe as f64 / self.accel).round() as usize;
        l.max(self.n_center)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.n_pe == 0 {
            return Err(Error::InvalidParameter("mask needs at least one frame and line".into()));
        }
        if !(self.accel.is_finite() && self.accel >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "acceleration must be >= 1, got {}",
                self.accel
            )));
        }
        if self.n_center == 0 && self.lines_per_frame() == 0 {
            return Err(Error::InvalidParameter("mask would sample no lines".into()));
        }
        let l = (self.n_pe as f64 / self.accel).round() as usize;
        if l < self.n_center {
            return Err(Error::InvalidParameter(format!(
                "round(Y / R) = {l} is below n_center = {}",
                self.n_center
            )));
        }
        if self.n_center > self.n_pe {
            return Err(Error::InvalidParameter("n_center exceeds the line count".into()));
        }
        Ok(())
    }
}

/// First index of the always-sampled central block.
pub fn center_start(n_pe: usize, n_center: usize) -> usize {
    (n_pe / 2).saturating_sub(n_center / 2)
}

/// Stratified weighted draw of `count` distinct entries of `avail`.
fn stratified_pick(
    avail: &[usize],
    weights: &[f64],
    count: usize,
    phase: f64,
    rng: &mut SeededRng,
) -> Vec<usize> {
    if count >= avail.len() {
        return avail.to_vec();
    }
    let total: f64 = avail.iter().map(|&y| weights[y]).sum();
    let mut cdf = Vec::with_capacity(avail.len());
    let mut acc = 0.0;
    for &y in avail {
        acc += weights[y] / total;
        cdf.push(acc);
    }
    let mut taken = vec![false; avail.len()];
    let mut picks = Vec::with_capacity(count);
    for j in 0..count {
        let jitter = 0.25 * (rng.uniform() - 0.5);
        let pos = (j as f64 + (phase + jitter).rem_euclid(1.0)) / count as f64;
        let mut i = cdf.partition_point(|&c| c <= pos).min(avail.len() - 1);
        if taken[i] {
            // Nearest free neighbor in index order.
            let free = (1..avail.len()).find_map(|d| {
                [i + d, i.wrapping_sub(d)]
                    .into_iter()
                    .find(|&c| c < avail.len() && !taken[c])
            });
            i = free.expect("count < avail.len() leaves a free slot");
        }
        taken[i] = true;
        picks.push(avail[i]);
    }
    picks
}

pub fn generate_mask(spec: &MaskSpec) -> Result<MaskStack> {
    spec.validate()?;
    let (n, ny) = (spec.n_frames, spec.n_pe);
    let l = spec.lines_per_frame();
    if l >= ny {
        return Ok(MaskStack::full(n, ny));
    }
    let c0 = center_start(ny, spec.n_center);
    let is_center = |y: usize| y >= c0 && y < c0 + spec.n_center;
    let sigma = ny as f64 / 4.0;
    let mid = (ny / 2) as f64;
    let weights: Vec<f64> = (0..ny)
        .map(|y| (-((y as f64 - mid) / sigma).powi(2)).exp())
        .collect();
    let candidates: Vec<usize> = (0..ny).filter(|&y| !is_center(y)).collect();
    let n_random = l - spec.n_center;

    let phase0 = SeededRng::new(spec.seed.derive(u64::MAX)).uniform();
    let mut used = vec![false; ny];
    let mut lines = vec![false; n * ny];
    for t in 0..n {
        let mut rng = SeededRng::new(spec.seed.derive(t as u64));
        let phase = (phase0 + t as f64 * GOLDEN).rem_euclid(1.0);
        let row = &mut lines[t * ny..(t + 1) * ny];
        row[c0..c0 + spec.n_center].fill(true);
        let mut avail: Vec<usize> = candidates.iter().copied().filter(|&y| !used[y]).collect();
        let mut picks = Vec::with_capacity(n_random);
        if avail.len() <= n_random {
            // Finish the coverage cycle, then start a fresh one for the rest.
            picks.extend_from_slice(&avail);
            used.fill(false);
            avail = candidates
                .iter()
                .copied()
                .filter(|y| !picks.contains(y))
                .collect();
            let rest = n_random - picks.len();
            let more = stratified_pick(&avail, &weights, rest, phase, &mut rng);
            picks.extend(more);
        } else {
            picks = stratified_pick(&avail, &weights, n_random, phase, &mut rng);
        }
        for &y in &picks {
            row[y] = true;
            used[y] = true;
        }
        if candidates.iter().all(|&y| used[y]) {
            used.fill(false);
        }
    }
    MaskStack::new(n, ny, lines)
}

/// `N * Y / (total sampled lines)`
pub fn effective_accel(mask: &MaskStack) -> f64 {
    (mask.n_frames() * mask.n_pe()) as f64 / mask.total_sampled() as f64
}

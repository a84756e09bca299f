//! Cartesian line sampling `D`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Binary phase-encode sampling pattern, one row of `Y` flags per frame.
///
/// The frequency-encode axis `X` is always fully sampled, so the expanded
/// `[N, X, Y]` mask is each row broadcast along `X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskStack {
    n_frames: usize,
    n_pe: usize,
    lines: Vec<bool>,
}

impl MaskStack {
    pub fn new(n_frames: usize, n_pe: usize, lines: Vec<bool>) -> Result<Self> {
        if n_frames == 0 || n_pe == 0 || lines.len() != n_frames * n_pe {
            return Err(Error::InvalidShape(format!(
                "mask of {} flags cannot be [{n_frames}, {n_pe}]",
                lines.len()
            )));
        }
        let mask = Self {
            n_frames,
            n_pe,
            lines,
        };
        for n in 0..n_frames {
            if mask.sampled_count(n) == 0 {
                return Err(Error::InvalidParameter(format!(
                    "mask frame {n} samples no lines"
                )));
            }
        }
        Ok(mask)
    }

    pub fn full(n_frames: usize, n_pe: usize) -> Self {
        Self {
            n_frames,
            n_pe,
            lines: vec![true; n_frames * n_pe],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_pe(&self) -> usize {
        self.n_pe
    }

    pub fn row(&self, frame: usize) -> &[bool] {
        &self.lines[frame * self.n_pe..(frame + 1) * self.n_pe]
    }

    pub fn sampled_count(&self, frame: usize) -> usize {
        self.row(frame).iter().filter(|&&b| b).count()
    }

    pub fn total_sampled(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// Phase-encode indices sampled by at least one frame.
    pub fn union_count(&self) -> usize {
        (0..self.n_pe)
            .filter(|&y| (0..self.n_frames).any(|n| self.row(n)[y]))
            .count()
    }

    /// `[N, Y]` tensor of real 0/1 values.
    pub fn to_tensor(&self) -> ComplexTensor {
        let vals: Vec<f64> = self.lines.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ComplexTensor::from_real(vec![self.n_frames, self.n_pe], &vals).expect("valid extents")
    }

    pub fn from_tensor(t: &ComplexTensor) -> Result<Self> {
        if t.dims().len() != 2 {
            return Err(Error::InvalidShape(format!(
                "mask tensor must be [N, Y], got {:?}",
                t.dims()
            )));
        }
        let mut lines = Vec::with_capacity(t.len());
        for z in t.data() {
            if z.im != 0.0 || (z.re != 0.0 && z.re != 1.0) {
                return Err(Error::InvalidParameter(format!("mask entry {z} is not 0 or 1")));
            }
            lines.push(z.re == 1.0);
        }
        Self::new(t.dims()[0], t.dims()[1], lines)
    }
}

/// Zero every coil image column whose phase-encode line is unsampled.
/// Works on any batch of `[.., X, Y]` data stored contiguously.
pub fn mask_lines_inplace(data: &mut [Complex64], row: &[bool]) {
    for line in data.chunks_exact_mut(row.len()) {
        for (z, &keep) in line.iter_mut().zip(row) {
            if !keep {
                *z = Complex64::default();
            }
        }
    }
}

/// Apply one frame's line mask to k-space over the last axis.
pub fn apply_mask(ksp: &ComplexTensor, row: &[bool]) -> Result<ComplexTensor> {
    let ny = *ksp.dims().last().expect("non-empty dims");
    if ny != row.len() {
        return Err(Error::DimMismatch(format!(
            "mask row of {} lines vs k-space width {ny}",
            row.len()
        )));
    }
    let mut out = ksp.clone();
    mask_lines_inplace(out.data_mut(), row);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Seed, SeededRng};

    fn random_ksp(seed: u64) -> ComplexTensor {
        ComplexTensor::new(
            vec![2, 8, 192],
            SeededRng::new(Seed(seed)).complex_normal_vec(2 * 8 * 192),
        )
        .unwrap()
    }

    #[test]
    fn full_mask_is_identity() {
        let k = random_ksp(1);
        assert_eq!(apply_mask(&k, &[true; 192]).unwrap(), k);
    }

    #[test]
    fn idempotent_and_homogeneous() {
        let k = random_ksp(2);
        let row: Vec<bool> = (0..192).map(|y| y % 3 == 0).collect();
        let once = apply_mask(&k, &row).unwrap();
        assert_eq!(apply_mask(&once, &row).unwrap(), once);
        let mut scaled = k.clone();
        let a = Complex64::new(0.3, -2.0);
        scaled.data_mut().iter_mut().for_each(|z| *z *= a);
        let lhs = apply_mask(&scaled, &row).unwrap();
        for (l, r) in lhs.data().iter().zip(once.data()) {
            assert!((l - r * a).norm() < 1e-14);
        }
    }

    #[test]
    fn nonzero_count_follows_sampled_lines() {
        let k = random_ksp(3);
        let mut row = vec![false; 192];
        for y in (0..192).step_by(8) {
            row[y] = true;
        }
        assert_eq!(row.iter().filter(|&&b| b).count(), 24);
        let out = apply_mask(&k, &row).unwrap();
        let nonzero = out.data().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 24 * 8 * 2);
    }

    #[test]
    fn row_length_mismatch() {
        assert!(apply_mask(&random_ksp(4), &[true; 10]).is_err());
    }

    #[test]
    fn empty_frame_rejected_and_tensor_round_trip() {
        assert!(MaskStack::new(2, 3, vec![true, false, false, false, false, false]).is_err());
        let m = MaskStack::new(2, 3, vec![true, false, true, false, true, false]).unwrap();
        assert_eq!(MaskStack::from_tensor(&m.to_tensor()).unwrap(), m);
        assert_eq!(m.union_count(), 3);
    }
}

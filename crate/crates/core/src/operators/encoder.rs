//! Multi-coil Cartesian encoder `A = D F S` and its adjoint.

use num_complex::Complex64;

use super::coils::CoilMaps;
use super::fft::{fft2c_inplace, fft_rows_centered, Direction};
use super::mask::mask_lines_inplace;
use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Per-frame encoding bound to a set of coil maps.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    coils: &'a CoilMaps,
    nx: usize,
    ny: usize,
}

impl<'a> Encoder<'a> {
    pub fn new(coils: &'a CoilMaps) -> Self {
        let (_, nx, ny) = coils.shape();
        Self { coils, nx, ny }
    }

    pub fn coils(&self) -> &CoilMaps {
        self.coils
    }

    pub fn pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Length of one frame's multi-coil k-space.
    pub fn kspace_len(&self) -> usize {
        self.coils.n_coils() * self.pixels()
    }

    /// `out = D F S x`, with `out` laid out `[S, X, Y]`.
    pub fn forward(&self, x: &[Complex64], row: &[bool], out: &mut [Complex64]) {
        self.coils.expand_into(x, out);
        fft2c_inplace(out, self.nx, self.ny, Direction::Forward);
        mask_lines_inplace(out, row);
    }

    /// `out = S^H F^H D y`.
    pub fn adjoint(&self, y: &[Complex64], row: &[bool], out: &mut [Complex64]) {
        let mut buf = y.to_vec();
        mask_lines_inplace(&mut buf, row);
        fft2c_inplace(&mut buf, self.nx, self.ny, Direction::Inverse);
        self.coils.combine_into(&buf, out);
    }

    /// `out = A^H A x`.
    ///
    /// The mask only acts along `Y` and is constant along `X`, so the
    /// transform along `X` commutes with it and cancels against its inverse:
    /// `F^H D F = F_y^H D F_y`. Only the 1D transform along `Y` is evaluated.
    pub fn gram(&self, x: &[Complex64], row: &[bool], out: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        scratch.resize(self.kspace_len(), Complex64::default());
        self.coils.expand_into(x, scratch);
        fft_rows_centered(scratch, self.ny, Direction::Forward);
        mask_lines_inplace(scratch, row);
        fft_rows_centered(scratch, self.ny, Direction::Inverse);
        self.coils.combine_into(scratch, out);
    }
}

fn check_frame(x: &ComplexTensor, maps: &CoilMaps, row: &[bool]) -> Result<(usize, usize, usize)> {
    let (s, nx, ny) = maps.shape();
    if row.len() != ny {
        return Err(Error::DimMismatch(format!(
            "mask row of {} lines vs {ny} phase-encode lines",
            row.len()
        )));
    }
    let _ = x;
    Ok((s, nx, ny))
}

/// `D F S x` for one frame; returns `[S, X, Y]` k-space.
pub fn forward_a(x: &ComplexTensor, maps: &CoilMaps, row: &[bool]) -> Result<ComplexTensor> {
    let (s, nx, ny) = check_frame(x, maps, row)?;
    if x.dims() != [nx, ny] {
        return Err(Error::DimMismatch(format!(
            "image {:?} vs grid [{nx}, {ny}]",
            x.dims()
        )));
    }
    let mut out = ComplexTensor::zeros(vec![s, nx, ny])?;
    Encoder::new(maps).forward(x.data(), row, out.data_mut());
    Ok(out)
}

/// `S^H F^H D y` for one frame; returns an `[X, Y]` image.
pub fn adjoint_ah(y: &ComplexTensor, maps: &CoilMaps, row: &[bool]) -> Result<ComplexTensor> {
    let (s, nx, ny) = check_frame(y, maps, row)?;
    if y.dims() != [s, nx, ny] {
        return Err(Error::DimMismatch(format!(
            "k-space {:?} vs [{s}, {nx}, {ny}]",
            y.dims()
        )));
    }
    let mut out = ComplexTensor::zeros(vec![nx, ny])?;
    Encoder::new(maps).adjoint(y.data(), row, out.data_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, rel_err};
    use crate::operators::fft::fft2c;
    use crate::rng::{Seed, SeededRng};

    fn maps(s: usize, nx: usize, ny: usize) -> CoilMaps {
        let raw = ComplexTensor::new(
            vec![s, nx, ny],
            SeededRng::new(Seed(40)).complex_normal_vec(s * nx * ny),
        )
        .unwrap();
        CoilMaps::normalized(raw).unwrap()
    }

    fn image(nx: usize, ny: usize, seed: u64) -> ComplexTensor {
        ComplexTensor::new(
            vec![nx, ny],
            SeededRng::new(Seed(seed)).complex_normal_vec(nx * ny),
        )
        .unwrap()
    }

    #[test]
    fn full_mask_single_coil_is_fft() {
        let x = image(8, 6, 1);
        let k = forward_a(&x, &CoilMaps::uniform(8, 6), &[true; 6]).unwrap();
        let f = fft2c(&x).unwrap();
        assert!(rel_err(k.data(), f.data()) < 1e-14);
    }

    #[test]
    fn zero_image_gives_zero_kspace() {
        let m = maps(3, 8, 8);
        let k = forward_a(&ComplexTensor::zeros(vec![8, 8]).unwrap(), &m, &[true; 8]).unwrap();
        assert_eq!(norm(k.data()), 0.0);
        let x = adjoint_ah(&ComplexTensor::zeros(vec![3, 8, 8]).unwrap(), &m, &[true; 8]).unwrap();
        assert_eq!(norm(x.data()), 0.0);
    }

    #[test]
    fn gram_matches_adjoint_of_forward() {
        let m = maps(3, 10, 12);
        let row: Vec<bool> = (0..12).map(|y| y % 3 != 1).collect();
        let x = image(10, 12, 5);
        let enc = Encoder::new(&m);
        let mut k = vec![Complex64::default(); enc.kspace_len()];
        enc.forward(x.data(), &row, &mut k);
        let mut slow = vec![Complex64::default(); 120];
        enc.adjoint(&k, &row, &mut slow);
        let mut fast = vec![Complex64::default(); 120];
        enc.gram(x.data(), &row, &mut fast, &mut Vec::new());
        assert!(rel_err(&fast, &slow) < 1e-12);
    }

    #[test]
    fn full_sampling_gram_is_identity() {
        let m = maps(4, 8, 8);
        let x = image(8, 8, 9);
        let mut out = vec![Complex64::default(); 64];
        Encoder::new(&m).gram(x.data(), &[true; 8], &mut out, &mut Vec::new());
        assert!(rel_err(&out, x.data()) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let m = maps(2, 8, 8);
        assert!(forward_a(&image(8, 7, 1), &m, &[true; 8]).is_err());
        assert!(forward_a(&image(8, 8, 1), &m, &[true; 7]).is_err());
        assert!(adjoint_ah(&image(8, 8, 1), &m, &[true; 8]).is_err());
    }
}

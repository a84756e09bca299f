//! Centered, orthonormal 2D discrete Fourier transform.
//!
//! The DC coefficient sits at index `(nx / 2, ny / 2)`. Each 1D pass is
//! `fftshift(fft(ifftshift(row))) / sqrt(n)`, which makes the transform unitary.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn plan(n: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match dir {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    })
}

/// Centered orthonormal 1D transform over every contiguous run of `n` values.
pub fn fft_rows_centered(data: &mut [Complex64], n: usize, dir: Direction) {
    debug_assert_eq!(data.len() % n, 0);
    if n == 1 {
        return;
    }
    let fft = plan(n, dir);
    let half = n / 2;
    for row in data.chunks_exact_mut(n) {
        row.rotate_left(half);
    }
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    let scale = 1.0 / (n as f64).sqrt();
    for row in data.chunks_exact_mut(n) {
        row.rotate_right(half);
        for z in row.iter_mut() {
            *z *= scale;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// In-place centered 2D transform over the last two axes of a batch of
/// `nx * ny` images stored back to back.
pub fn fft2c_inplace(data: &mut [Complex64], nx: usize, ny: usize, dir: Direction) {
    let m = nx * ny;
    debug_assert_eq!(data.len() % m, 0);
    fft_rows_centered(data, ny, dir);
    if nx == 1 {
        return;
    }
    let mut tmp = vec![Complex64::default(); m];
    for img in data.chunks_exact_mut(m) {
        transpose(img, &mut tmp, nx, ny);
        fft_rows_centered(&mut tmp, nx, dir);
        transpose(&tmp, img, ny, nx);
    }
}

fn spatial_dims(t: &ComplexTensor) -> Result<(usize, usize)> {
    let d = t.dims();
    if d.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "2D transform needs at least two dims, got {d:?}"
        )));
    }
    Ok((d[d.len() - 2], d[d.len() - 1]))
}

/// Centered orthonormal forward 2D DFT over the last two dims.
pub fn fft2c(img: &ComplexTensor) -> Result<ComplexTensor> {
    let (nx, ny) = spatial_dims(img)?;
    let mut out = img.clone();
    fft2c_inplace(out.data_mut(), nx, ny, Direction::Forward);
    Ok(out)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(ksp: &ComplexTensor) -> Result<ComplexTensor> {
    let (nx, ny) = spatial_dims(ksp)?;
    let mut out = ksp.clone();
    fft2c_inplace(out.data_mut(), nx, ny, Direction::Inverse);
    Ok(out)
}

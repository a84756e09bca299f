//! Coil sensitivity expansion `S` and its adjoint.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Pointwise normalization tolerance on `sum_s |s|^2 = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-5;

/// Complex coil sensitivities, dims `[S, X, Y]`, normalized per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    maps: ComplexTensor,
}

impl CoilMaps {
    /// Wrap maps that already satisfy the normalization invariant.
    pub fn new(maps: ComplexTensor) -> Result<Self> {
        let coils = Self::check_shape(maps)?;
        let (s, nx, ny) = coils.shape();
        let m = nx * ny;
        for p in 0..m {
            let energy: f64 = (0..s).map(|c| coils.maps.data()[c * m + p].norm_sqr()).sum();
            if (energy - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidParameter(format!(
                    "coil maps not normalized at pixel {p}: sum |s|^2 = {energy}"
                )));
            }
        }
        Ok(coils)
    }

    /// Rescale raw sensitivities so every pixel has unit total energy.
    pub fn normalized(raw: ComplexTensor) -> Result<Self> {
        let mut coils = Self::check_shape(raw)?;
        let (s, nx, ny) = coils.shape();
        let m = nx * ny;
        let data = coils.maps.data_mut();
        for p in 0..m {
            let energy: f64 = (0..s).map(|c| data[c * m + p].norm_sqr()).sum();
            if energy <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "coil maps vanish at pixel {p}"
                )));
            }
            let scale = 1.0 / energy.sqrt();
            for c in 0..s {
                data[c * m + p] *= scale;
            }
        }
        Ok(coils)
    }

    fn check_shape(maps: ComplexTensor) -> Result<Self> {
        if maps.dims().len() != 3 {
            return Err(Error::InvalidShape(format!(
                "coil maps must be [S, X, Y], got {:?}",
                maps.dims()
            )));
        }
        if !maps.is_finite() {
            return Err(Error::NonFinite("coil maps".into()));
        }
        Ok(Self { maps })
    }

    /// Single coil with unit sensitivity.
    pub fn uniform(nx: usize, ny: usize) -> Self {
        let maps = ComplexTensor::new(vec![1, nx, ny], vec![Complex64::new(1.0, 0.0); nx * ny])
            .expect("positive extents");
        Self { maps }
    }

    /// `(coils, X, Y)`
    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.maps.dims();
        (d[0], d[1], d[2])
    }

    pub fn n_coils(&self) -> usize {
        self.maps.dims()[0]
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        self.maps.slab(c)
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.maps
    }

    /// Reorder coils; `order[i]` is the source coil for output coil `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let (_, nx, ny) = self.shape();
        let data = order.iter().flat_map(|&c| self.coil(c).iter().copied()).collect();
        Self {
            maps: ComplexTensor::new(vec![order.len(), nx, ny], data).expect("same extents"),
        }
    }

    pub(crate) fn expand_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        let m = x.len();
        for (c, chunk) in out.chunks_exact_mut(m).enumerate() {
            for ((o, s), v) in chunk.iter_mut().zip(self.coil(c)).zip(x) {
                *o = s * v;
            }
        }
    }

    pub(crate) fn combine_into(&self, xs: &[Complex64], out: &mut [Complex64]) {
        let m = out.len();
        out.fill(Complex64::default());
        for (c, chunk) in xs.chunks_exact(m).enumerate() {
            for ((o, s), v) in out.iter_mut().zip(self.coil(c)).zip(chunk) {
                *o += s.conj() * v;
            }
        }
    }
}

/// `out[s] = maps[s] * x`
pub fn coil_expand(x: &ComplexTensor, maps: &CoilMaps) -> Result<ComplexTensor> {
    let (s, nx, ny) = maps.shape();
    if x.dims() != [nx, ny] {
        return Err(Error::DimMismatch(format!(
            "image {:?} vs coil grid [{nx}, {ny}]",
            x.dims()
        )));
    }
    let mut out = ComplexTensor::zeros(vec![s, nx, ny])?;
    maps.expand_into(x.data(), out.data_mut());
    Ok(out)
}

/// `out = sum_s conj(maps[s]) * xs[s]`
pub fn coil_combine(xs: &ComplexTensor, maps: &CoilMaps) -> Result<ComplexTensor> {
    let (s, nx, ny) = maps.shape();
    if xs.dims() != [s, nx, ny] {
        return Err(Error::DimMismatch(format!(
            "coil images {:?} vs maps [{s}, {nx}, {ny}]",
            xs.dims()
        )));
    }
    let mut out = ComplexTensor::zeros(vec![nx, ny])?;
    maps.combine_into(xs.data(), out.data_mut());
    Ok(out)
}

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::MaskStack;
use crate::tensor::ComplexTensor;

/// Dynamic image series, `[N, X, Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CineSequence {
    frames: ComplexTensor,
}

impl CineSequence {
    pub fn new(frames: ComplexTensor) -> Result<Self> {
        if frames.dims().len() != 3 {
            return Err(Error::InvalidShape(format!(
                "cine sequence must be [N, X, Y], got {:?}",
                frames.dims()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("cine sequence".into()));
        }
        Ok(Self { frames })
    }

    pub fn zeros(n: usize, nx: usize, ny: usize) -> Self {
        Self {
            frames: ComplexTensor::zeros(vec![n, nx, ny]).expect("positive extents"),
        }
    }

    pub fn from_frames(frames: Vec<Vec<Complex64>>, nx: usize, ny: usize) -> Result<Self> {
        let n = frames.len();
        let data: Vec<Complex64> = frames.into_iter().flatten().collect();
        Self::new(ComplexTensor::new(vec![n, nx, ny], data)?)
    }

    pub fn n_frames(&self) -> usize {
        self.frames.dims()[0]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.frames.dims()[1], self.frames.dims()[2])
    }

    pub fn pixels(&self) -> usize {
        let (nx, ny) = self.grid();
        nx * ny
    }

    pub fn frame(&self, n: usize) -> &[Complex64] {
        self.frames.slab(n)
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [Complex64] {
        let m = self.pixels();
        &mut self.frames.data_mut()[n * m..(n + 1) * m]
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.frames
    }

    pub fn into_tensor(self) -> ComplexTensor {
        self.frames
    }

    /// `|x|` per frame.
    pub fn magnitude_frames(&self) -> Vec<Vec<f64>> {
        (0..self.n_frames())
            .map(|n| self.frame(n).iter().map(|z| z.norm()).collect())
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.frames.data().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Multi-coil k-space, `[N, S, X, Y]`, zero wherever the mask did not sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceStack {
    data: ComplexTensor,
}

impl KSpaceStack {
    pub fn new(data: ComplexTensor) -> Result<Self> {
        if data.dims().len() != 4 {
            return Err(Error::InvalidShape(format!(
                "k-space must be [N, S, X, Y], got {:?}",
                data.dims()
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("k-space".into()));
        }
        Ok(Self { data })
    }

    /// `(N, S, X, Y)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dims();
        (d[0], d[1], d[2], d[3])
    }

    pub fn n_frames(&self) -> usize {
        self.data.dims()[0]
    }

    /// One frame's `[S, X, Y]` block.
    pub fn frame(&self, n: usize) -> &[Complex64] {
        self.data.slab(n)
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.data
    }

    pub fn into_tensor(self) -> ComplexTensor {
        self.data
    }

    /// Zero every unsampled line of every frame.
    pub fn masked(&self, mask: &MaskStack) -> Result<Self> {
        let (n, _, _, ny) = self.shape();
        if mask.n_frames() != n || mask.n_pe() != ny {
            return Err(Error::DimMismatch(format!(
                "mask [{}, {}] vs k-space {:?}",
                mask.n_frames(),
                mask.n_pe(),
                self.data.dims()
            )));
        }
        let mut out = self.data.clone();
        let stride = out.len() / n;
        for (f, chunk) in out.data_mut().chunks_exact_mut(stride).enumerate() {
            crate::operators::mask::mask_lines_inplace(chunk, mask.row(f));
        }
        Ok(Self { data: out })
    }

    /// Coil order permuted consistently in every frame.
    pub fn permuted_coils(&self, order: &[usize]) -> Self {
        let (n, s, nx, ny) = self.shape();
        let m = nx * ny;
        let mut data = Vec::with_capacity(self.data.len());
        for f in 0..n {
            let frame = self.frame(f);
            for &c in order {
                data.extend_from_slice(&frame[c * m..(c + 1) * m]);
            }
        }
        let _ = s;
        Self {
            data: ComplexTensor::new(vec![n, order.len(), nx, ny], data).expect("same extents"),
        }
    }
}

//! Complex tensor container and the `MCMR` binary file format.
//!
//! Layout of a tensor file (all integers and floats little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | magic `MCMR`                              |
//! | 4            | format version, `u32 = 1`                 |
//! | 4            | dtype code, `u32` (0 = complex64, 1 = complex128) |
//! | 4            | number of dims, `u32`                     |
//! | 8 * ndim     | extents, `u64` each, slowest first        |
//! | payload      | interleaved `(re, im)` floats, row-major  |
//!
//! Values are always held in memory as `Complex<f64>`; the dtype only governs
//! the on-disk precision.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCMR";
pub const FORMAT_VERSION: u32 = 1;

/// On-disk precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    Complex64,
    Complex128,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::Complex64 => 0,
            Dtype::Complex128 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::Complex64),
            1 => Ok(Dtype::Complex128),
            c => Err(Error::UnsupportedDtype(c)),
        }
    }

    /// Bytes per complex element.
    pub fn element_size(self) -> usize {
        match self {
            Dtype::Complex64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

/// Row-major complex array, slowest dimension first.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    dims: Vec<usize>,
    data: Vec<Complex64>,
    dtype: Dtype,
}

impl ComplexTensor {
    pub fn new(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape(format!(
                "dims {:?} hold {} elements but data has {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            dtype: Dtype::default(),
        })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); len],
            dtype: Dtype::default(),
        })
    }

    /// Real-valued tensor (imaginary parts zero).
    pub fn from_real(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Real parts as a flat vector.
    pub fn real_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    /// Contiguous block for a given index along the slowest dimension.
    pub fn slab(&self, index: usize) -> &[Complex64] {
        let stride = self.len() / self.dims[0];
        &self.data[index * stride..(index + 1) * stride]
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Header size in bytes for this tensor's rank.
    pub fn header_len(&self) -> usize {
        16 + 8 * self.dims.len()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidShape("dims must be non-empty".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
    }
    Ok(())
}

/// Serialize a tensor in the `MCMR` format.
pub fn encode_tensor(t: &ComplexTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(t.header_len() + t.len() * t.dtype.element_size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&t.dtype.code().to_le_bytes());
    buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.dtype {
        Dtype::Complex64 => {
            for z in &t.data {
                buf.extend_from_slice(&(z.re as f32).to_le_bytes());
                buf.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        Dtype::Complex128 => {
            for z in &t.data {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    buf
}

#[derive(Debug)]
pub enum DecodeError {
    BadMagic,
    Version(u32),
    Dtype(u32),
    Shape(String),
    Truncated { expected: u64, found: u64 },
}

/// Parse bytes in the `MCMR` format.
pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<ComplexTensor, DecodeError> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> std::result::Result<&[u8], DecodeError> {
        if cursor.len() < n {
            return Err(DecodeError::Truncated {
                expected: n as u64,
                found: cursor.len() as u64,
            });
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(4).map_err(|_| DecodeError::BadMagic)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION {
        return Err(DecodeError::Version(version));
    }
    let dtype = Dtype::from_code(u32_at(take(4)?)).map_err(|e| match e {
        Error::UnsupportedDtype(c) => DecodeError::Dtype(c),
        _ => unreachable!(),
    })?;
    let ndim = u32_at(take(4)?) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| DecodeError::Shape(format!("extent {d}")))?);
    }
    check_dims(&dims).map_err(|e| DecodeError::Shape(e.to_string()))?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| DecodeError::Shape(format!("extents {dims:?} overflow")))?;
    let expected = count
        .checked_mul(dtype.element_size() as u64)
        .ok_or_else(|| DecodeError::Shape(format!("extents {dims:?} overflow")))?;
    if (cursor.len() as u64) < expected {
        return Err(DecodeError::Truncated {
            expected,
            found: cursor.len() as u64,
        });
    }
    let payload = &cursor[..expected as usize];
    let data: Vec<Complex64> = match dtype {
        Dtype::Complex64 => payload
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                Complex64::new(re as f64, im as f64)
            })
            .collect(),
        Dtype::Complex128 => payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect(),
    };
    Ok(ComplexTensor { dims, data, dtype })
}

/// Write a tensor file. The bytes go to a sibling temporary file that is
/// renamed into place, so a failed write never leaves a partial file behind.
pub fn save_tensor(path: impl AsRef<Path>, t: &ComplexTensor) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&encode_tensor(t))?;
        let f = w.into_inner().map_err(|e| e.into_error())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ComplexTensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        DecodeError::BadMagic => Error::BadMagic(path.to_path_buf()),
        DecodeError::Version(v) => Error::UnsupportedVersion(v),
        DecodeError::Dtype(c) => Error::UnsupportedDtype(c),
        DecodeError::Shape(s) => Error::InvalidShape(s),
        DecodeError::Truncated { expected, found } => Error::Truncated { expected, found },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Seed, SeededRng};
    use tempfile::tempdir;

    fn random_tensor(dims: Vec<usize>, dtype: Dtype, seed: u64) -> ComplexTensor {
        let mut rng = SeededRng::new(Seed(seed));
        let len = dims.iter().product();
        let mut data = rng.complex_normal_vec(len);
        if dtype == Dtype::Complex64 {
            for z in &mut data {
                *z = Complex64::new(z.re as f32 as f64, z.im as f32 as f64);
            }
        }
        ComplexTensor::new(dims, data).unwrap().with_dtype(dtype)
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ComplexTensor::zeros(vec![]).is_err());
        assert!(ComplexTensor::zeros(vec![3, 0]).is_err());
        assert!(ComplexTensor::new(vec![2, 2], vec![Complex64::default(); 3]).is_err());
    }

    #[test]
    fn scalar_file_is_forty_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.mcmr");
        save_tensor(&path, &ComplexTensor::zeros(vec![1, 1]).unwrap()).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 40);
    }

    #[test]
    fn payload_size_matches_extent_product() {
        let t = ComplexTensor::zeros(vec![25, 192, 156]).unwrap();
        let bytes = encode_tensor(&t);
        let expected_payload = 25 * 192 * 156 * 8;
        assert_eq!(bytes.len() - t.header_len(), expected_payload);
        assert_eq!(t.header_len(), 16 + 3 * 8);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        for (i, dtype) in [Dtype::Complex64, Dtype::Complex128].into_iter().enumerate() {
            let t = random_tensor(vec![3, 4, 5], dtype, 11 + i as u64);
            let path = dir.path().join(format!("t{i}.mcmr"));
            save_tensor(&path, &t).unwrap();
            let back = load_tensor(&path).unwrap();
            assert_eq!(back.dims(), t.dims());
            assert_eq!(back.dtype(), dtype);
            for (a, b) in back.data().iter().zip(t.data()) {
                assert_eq!(a.re.to_bits(), b.re.to_bits());
                assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.mcmr");
        let mut bytes = encode_tensor(&ComplexTensor::zeros(vec![2]).unwrap());
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.mcmr");
        let t = ComplexTensor::zeros(vec![4, 4]).unwrap();
        let mut bytes = encode_tensor(&t);
        // Declare more rows than the payload carries.
        bytes[16..24].copy_from_slice(&5u64.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_tensor(&path) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 5 * 4 * 8);
                assert_eq!(found, 4 * 4 * 8);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_and_dtype() {
        let mut bytes = encode_tensor(&ComplexTensor::zeros(vec![1]).unwrap());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(DecodeError::Version(2))));
        let mut bytes = encode_tensor(&ComplexTensor::zeros(vec![1]).unwrap());
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(DecodeError::Dtype(9))));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("missing").join("t.mcmr");
        let err = save_tensor(&path, &ComplexTensor::zeros(vec![1]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(!path.exists());
    }

    proptest::proptest! {
        #[test]
        fn decode_inverts_encode(dims in proptest::collection::vec(1usize..5, 1..4), seed in 0u64..1000) {
            let t = random_tensor(dims, Dtype::Complex128, seed);
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            proptest::prop_assert_eq!(back, t);
        }
    }
}

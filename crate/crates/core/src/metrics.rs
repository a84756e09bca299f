//! Image quality metrics on magnitude images: PSNR, SSIM, ROI cropping, and
//! end-systolic / end-diastolic frame selection.

use crate::error::{Error, Result};
use crate::phantom::{ring_bounding_box, GroundTruth, PhantomSpec};
use crate::recon::CineSequence;

/// PSNR reported for identical inputs.
pub const PSNR_PERFECT: f64 = f64::INFINITY;

/// Axis-aligned region of interest, grown by `offset` pixels on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub offset: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
            offset: 10,
        }
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: nx,
            height: ny,
            offset: 0,
        }
    }

    /// Ring bounding box of the phantom plus the default offset.
    pub fn from_phantom(spec: &PhantomSpec) -> Self {
        let (x0, y0, w, h) = ring_bounding_box(spec);
        Self::new(x0, y0, w, h)
    }

    /// Half-open pixel bounds `(x0, x1, y0, y1)` after applying the offset
    /// and clamping to the image.
    pub fn bounds(&self, nx: usize, ny: usize) -> Result<(usize, usize, usize, usize)> {
        if self.width == 0 || self.height == 0 || self.x0 >= nx || self.y0 >= ny {
            return Err(Error::InvalidParameter(format!(
                "ROI {self:?} does not intersect a {nx} x {ny} image"
            )));
        }
        let x0 = self.x0.saturating_sub(self.offset);
        let y0 = self.y0.saturating_sub(self.offset);
        let x1 = (self.x0 + self.width + self.offset).min(nx);
        let y1 = (self.y0 + self.height + self.offset).min(ny);
        Ok((x0, x1, y0, y1))
    }

    /// Crop an `[X, Y]` image; returns the cropped data and its extents.
    pub fn crop(&self, img: &[f64], nx: usize, ny: usize) -> Result<(Vec<f64>, usize, usize)> {
        let (x0, x1, y0, y1) = self.bounds(nx, ny)?;
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for x in x0..x1 {
            out.extend_from_slice(&img[x * ny + y0..x * ny + y1]);
        }
        Ok((out, x1 - x0, y1 - y0))
    }
}

/// `20 log10(peak) - 10 log10(MSE)`; [`PSNR_PERFECT`] when the inputs agree.
pub fn psnr(reference: &[f64], estimate: &[f64], peak: f64) -> f64 {
    assert_eq!(reference.len(), estimate.len());
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return PSNR_PERFECT;
    }
    20.0 * peak.log10() - 10.0 * mse.log10()
}

/// Peak of the reference magnitudes.
pub fn peak(reference: &[f64]) -> f64 {
    reference.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean local SSIM over every fully contained `window x window` patch.
pub fn ssim(
    reference: &[f64],
    estimate: &[f64],
    nx: usize,
    ny: usize,
    dynamic_range: f64,
    params: SsimParams,
) -> Result<f64> {
    let w = params.window;
    if reference.len() != nx * ny || estimate.len() != nx * ny {
        return Err(Error::DimMismatch("SSIM inputs must be X * Y".into()));
    }
    if nx < w || ny < w {
        return Err(Error::InvalidParameter(format!(
            "image {nx} x {ny} smaller than the {w} x {w} SSIM window"
        )));
    }
    let c1 = (params.k1 * dynamic_range).powi(2);
    let c2 = (params.k2 * dynamic_range).powi(2);
    // Summed-area tables for a, b, a^2, b^2, ab.
    let sat = |f: &dyn Fn(usize) -> f64| {
        let mut t = vec![0.0; (nx + 1) * (ny + 1)];
        for x in 0..nx {
            let mut row = 0.0;
            for y in 0..ny {
                row += f(x * ny + y);
                t[(x + 1) * (ny + 1) + y + 1] = t[x * (ny + 1) + y + 1] + row;
            }
        }
        t
    };
    let sa = sat(&|i| reference[i]);
    let sb = sat(&|i| estimate[i]);
    let saa = sat(&|i| reference[i] * reference[i]);
    let sbb = sat(&|i| estimate[i] * estimate[i]);
    let sab = sat(&|i| reference[i] * estimate[i]);
    let boxsum = |t: &[f64], x: usize, y: usize| {
        let s = ny + 1;
        t[(x + w) * s + y + w] - t[x * s + y + w] - t[(x + w) * s + y] + t[x * s + y]
    };
    let area = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..=(nx - w) {
        for y in 0..=(ny - w) {
            let ma = boxsum(&sa, x, y) / area;
            let mb = boxsum(&sb, x, y) / area;
            let va = (boxsum(&saa, x, y) / area - ma * ma).max(0.0);
            let vb = (boxsum(&sbb, x, y) / area - mb * mb).max(0.0);
            let cov = boxsum(&sab, x, y) / area - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// PSNR and SSIM of one pair of frames, optionally restricted to a ROI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub psnr: f64,
    pub ssim: f64,
}

/// Score every frame of `estimate` against `reference` on magnitudes. The
/// peak is the reference maximum over the whole sequence (inside the ROI).
pub fn score_frames(
    reference: &CineSequence,
    estimate: &CineSequence,
    roi: Option<&Roi>,
) -> Result<Vec<FrameScore>> {
    if reference.tensor().dims() != estimate.tensor().dims() {
        return Err(Error::DimMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.tensor().dims(),
            estimate.tensor().dims()
        )));
    }
    let (nx, ny) = reference.grid();
    let full = Roi::full(nx, ny);
    let roi = roi.unwrap_or(&full);
    let refs = reference.magnitude_frames();
    let ests = estimate.magnitude_frames();
    let mut crops = Vec::with_capacity(refs.len());
    for (r, e) in refs.iter().zip(&ests) {
        let (rc, cx, cy) = roi.crop(r, nx, ny)?;
        let (ec, _, _) = roi.crop(e, nx, ny)?;
        crops.push((rc, ec, cx, cy));
    }
    let pk = crops.iter().map(|(r, ..)| peak(r)).fold(0.0, f64::max);
    crops
        .iter()
        .map(|(r, e, cx, cy)| {
            Ok(FrameScore {
                psnr: psnr(r, e, pk),
                ssim: ssim(r, e, *cx, *cy, pk, SsimParams::default())?,
            })
        })
        .collect()
}

/// PSNR over the whole sequence (all frames pooled into one MSE).
pub fn sequence_psnr(reference: &CineSequence, estimate: &CineSequence, roi: Option<&Roi>) -> Result<f64> {
    if reference.tensor().dims() != estimate.tensor().dims() {
        return Err(Error::DimMismatch("sequence shapes differ".into()));
    }
    let (nx, ny) = reference.grid();
    let full = Roi::full(nx, ny);
    let roi = roi.unwrap_or(&full);
    let mut r_all = Vec::new();
    let mut e_all = Vec::new();
    for (r, e) in reference.magnitude_frames().iter().zip(estimate.magnitude_frames().iter()) {
        r_all.extend(roi.crop(r, nx, ny)?.0);
        e_all.extend(roi.crop(e, nx, ny)?.0);
    }
    Ok(psnr(&r_all, &e_all, peak(&r_all)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EsEd {
    pub es: usize,
    pub ed: usize,
    /// No contraction: ES is undefined and both indices are 0.
    pub degenerate: bool,
}

/// End-diastole = largest ring area, end-systole = smallest.
pub fn es_ed_frames(gt: &GroundTruth) -> EsEd {
    es_ed_from_spec(&gt.spec)
}

pub fn es_ed_from_spec(spec: &PhantomSpec) -> EsEd {
    if spec.contraction_amp == 0.0 {
        return EsEd {
            es: 0,
            ed: 0,
            degenerate: true,
        };
    }
    let areas: Vec<f64> = (0..spec.n_frames).map(|n| spec.ring_area(n)).collect();
    let argbest = |better: fn(f64, f64) -> bool| {
        (0..areas.len()).fold(0, |best, i| if better(areas[i], areas[best]) { i } else { best })
    };
    EsEd {
        es: argbest(|a, b| a < b),
        ed: argbest(|a, b| a > b),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_are_perfect() {
        let a = vec![0.3, 0.7, 1.0];
        assert_eq!(psnr(&a, &a, 1.0), PSNR_PERFECT);
    }

    #[test]
    fn constant_offset_closed_form() {
        let a = vec![0.5; 64];
        let b = vec![0.6; 64];
        assert!((psnr(&a, &b, 1.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_asymmetric_through_peak() {
        let a = vec![1.0, 0.0, 0.0, 0.0];
        let b = vec![0.5, 0.0, 0.0, 0.0];
        let ab = psnr(&a, &b, peak(&a));
        let ba = psnr(&b, &a, peak(&b));
        assert!((ab - ba - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    /// Independent MSE route: mean over per-row means.
    fn mse_by_rows(a: &[f64], b: &[f64], ny: usize) -> f64 {
        let rows: Vec<f64> = a
            .chunks(ny)
            .zip(b.chunks(ny))
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ny as f64)
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    }

    #[test]
    fn psnr_matches_second_mse_route() {
        let mut rng = crate::rng::SeededRng::new(crate::rng::Seed(4));
        let a: Vec<f64> = (0..400).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.05 * rng.normal()).collect();
        let expect = 20.0 * peak(&a).log10() - 10.0 * mse_by_rows(&a, &b, 20).log10();
        assert!((psnr(&a, &b, peak(&a)) - expect).abs() < 1e-9);
    }

    fn checker(n: usize) -> Vec<f64> {
        (0..n * n).map(|i| (((i / n) / 2 + (i % n) / 2) % 2) as f64).collect()
    }

    #[test]
    fn ssim_properties() {
        let a = checker(16);
        let p = SsimParams::default();
        assert!((ssim(&a, &a, 16, 16, 1.0, p).unwrap() - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&a, &inv, 16, 16, 1.0, p).unwrap() < 0.2);
        let mut rng = crate::rng::SeededRng::new(crate::rng::Seed(8));
        let b: Vec<f64> = a.iter().map(|v| v + 0.1 * rng.normal()).collect();
        let s1 = ssim(&a, &b, 16, 16, 1.0, p).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let s2 = ssim(&a2, &b2, 16, 16, 2.0, p).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        let s3 = ssim(&b, &a, 16, 16, 1.0, p).unwrap();
        assert!((s1 - s3).abs() < 1e-12);
        assert!(ssim(&a, &a, 4, 4, 1.0, p).is_err());
    }

    #[test]
    fn full_roi_equals_full_image() {
        let mut rng = crate::rng::SeededRng::new(crate::rng::Seed(9));
        let frames: Vec<Vec<num_complex::Complex64>> = (0..2)
            .map(|_| rng.complex_normal_vec(20 * 18))
            .collect();
        let a = CineSequence::from_frames(frames.clone(), 20, 18).unwrap();
        let noisy: Vec<Vec<_>> = frames
            .iter()
            .map(|f| f.iter().map(|z| z * 1.1).collect())
            .collect();
        let b = CineSequence::from_frames(noisy, 20, 18).unwrap();
        let full = score_frames(&a, &b, None).unwrap();
        let roi = score_frames(&a, &b, Some(&Roi::full(20, 18))).unwrap();
        assert_eq!(full, roi);
        let big = Roi::new(0, 0, 20, 18);
        assert_eq!(score_frames(&a, &b, Some(&big)).unwrap(), full);
    }

    #[test]
    fn roi_offset_is_clamped() {
        let r = Roi::new(5, 2, 4, 4);
        assert_eq!(r.bounds(12, 30).unwrap(), (0, 12, 0, 16));
        assert!(Roi::new(40, 0, 2, 2).bounds(12, 12).is_err());
    }

    #[test]
    fn es_ed_selection() {
        let spec = PhantomSpec::default();
        assert_eq!(
            es_ed_from_spec(&spec),
            EsEd { es: 8, ed: 0, degenerate: false }
        );
        let spec = PhantomSpec {
            contraction_amp: 0.3,
            n_frames: 20,
            ..PhantomSpec::default()
        };
        assert_eq!(es_ed_from_spec(&spec), EsEd { es: 10, ed: 0, degenerate: false });
        let spec = PhantomSpec {
            contraction_amp: 0.0,
            ..PhantomSpec::default()
        };
        assert!(es_ed_from_spec(&spec).degenerate);
    }
}

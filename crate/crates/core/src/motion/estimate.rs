//! Coarse-to-fine Gauss-Newton flow estimation on magnitude images.

use super::warploss::warp_real;
use super::FlowOptConfig;
use crate::error::{Error, Result};
use crate::exec::map_indices;
use crate::operators::{FlowSet, WarpPlan};
use crate::recon::{neighbor_window, CineSequence};

/// Damping added to the 2x2 normal matrix at every pixel.
pub const NORMAL_DAMPING: f64 = 1e-3;
/// Gaussian aggregation window (pixels of each level) for the brightness-constancy terms.
pub const WINDOW_SIGMA: f64 = 16.0;
/// Largest per-update displacement, in pixels of the current level.
const MAX_UPDATE: f64 = 1.0;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
fn blur(img: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; img.len()];
    for x in 0..nx {
        for y in 0..ny {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let yy = (y as isize + t as isize - r).clamp(0, ny as isize - 1) as usize;
                acc += w * img[x * ny + yy];
            }
            tmp[x * ny + y] = acc;
        }
    }
    let mut out = vec![0.0; img.len()];
    for x in 0..nx {
        for y in 0..ny {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let xx = (x as isize + t as isize - r).clamp(0, nx as isize - 1) as usize;
                acc += w * tmp[xx * ny + y];
            }
            out[x * ny + y] = acc;
        }
    }
    out
}

/// Widths of three successive box filters approximating a Gaussian.
fn box_widths(sigma: f64) -> [usize; 3] {
    let n = 3.0;
    let ideal = (12.0 * sigma * sigma / n + 1.0).sqrt();
    let mut wl = ideal.floor() as i64;
    if wl % 2 == 0 {
        wl -= 1;
    }
    let wl = wl.max(1);
    let wlf = wl as f64;
    let m = ((12.0 * sigma * sigma - n * wlf * wlf - 4.0 * n * wlf - 3.0 * n) / (-4.0 * wlf - 4.0)).round() as i64;
    std::array::from_fn(|i| if (i as i64) < m { wl as usize } else { wl as usize + 2 })
}

/// Running-sum box filter of odd width along one line, edge values replicated.
fn box_line(line: &[f64], width: usize, out: &mut [f64]) {
    let n = line.len() as isize;
    let r = (width / 2) as isize;
    let at = |i: isize| line[i.clamp(0, n - 1) as usize];
    let mut acc: f64 = (-r..=r).map(at).sum();
    let inv = 1.0 / width as f64;
    for i in 0..n {
        out[i as usize] = acc * inv;
        acc += at(i + r + 1) - at(i - r);
    }
}

/// Gaussian blur approximated by three box passes per axis.
pub(crate) fn box_blur(img: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    let mut a = img.to_vec();
    let mut line = vec![0.0; nx.max(ny)];
    let mut out = vec![0.0; nx.max(ny)];
    for w in box_widths(sigma) {
        for x in 0..nx {
            let row = &mut a[x * ny..(x + 1) * ny];
            line[..ny].copy_from_slice(row);
            box_line(&line[..ny], w, &mut out[..ny]);
            row.copy_from_slice(&out[..ny]);
        }
        for y in 0..ny {
            for x in 0..nx {
                line[x] = a[x * ny + y];
            }
            box_line(&line[..nx], w, &mut out[..nx]);
            for x in 0..nx {
                a[x * ny + y] = out[x];
            }
        }
    }
    a
}

/// Bilinear resampling between grids with aligned pixel centers.
fn resample(img: &[f64], nx: usize, ny: usize, mx: usize, my: usize) -> Vec<f64> {
    let (sx, sy) = (nx as f64 / mx as f64, ny as f64 / my as f64);
    let mut out = vec![0.0; mx * my];
    for i in 0..mx {
        let cx = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, (nx - 1) as f64);
        let x0 = (cx.floor() as usize).min(nx.saturating_sub(2));
        let tx = if nx > 1 { cx - x0 as f64 } else { 0.0 };
        let x1 = (x0 + 1).min(nx - 1);
        for j in 0..my {
            let cy = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, (ny - 1) as f64);
            let y0 = (cy.floor() as usize).min(ny.saturating_sub(2));
            let ty = if ny > 1 { cy - y0 as f64 } else { 0.0 };
            let y1 = (y0 + 1).min(ny - 1);
            out[i * my + j] = img[x0 * ny + y0] * (1.0 - tx) * (1.0 - ty)
                + img[x0 * ny + y1] * (1.0 - tx) * ty
                + img[x1 * ny + y0] * tx * (1.0 - ty)
                + img[x1 * ny + y1] * tx * ty;
        }
    }
    out
}

/// Central differences with one-sided stencils at the border.
fn gradients(img: &[f64], nx: usize, ny: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; img.len()];
    let mut gy = vec![0.0; img.len()];
    for x in 0..nx {
        for y in 0..ny {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(nx - 1));
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(ny - 1));
            if xp > xm {
                gx[x * ny + y] = (img[xp * ny + y] - img[xm * ny + y]) / (xp - xm) as f64;
            }
            if yp > ym {
                gy[x * ny + y] = (img[x * ny + yp] - img[x * ny + ym]) / (yp - ym) as f64;
            }
        }
    }
    (gx, gy)
}

struct Level {
    nx: usize,
    ny: usize,
    src: Vec<f64>,
    tgt: Vec<f64>,
}

fn pyramid(src: &[f64], tgt: &[f64], nx: usize, ny: usize, cfg: &FlowOptConfig) -> Vec<Level> {
    let mut levels = vec![Level {
        nx,
        ny,
        src: src.to_vec(),
        tgt: tgt.to_vec(),
    }];
    let sigma = 0.5 / cfg.pyramid_scale;
    for _ in 1..cfg.pyramid_levels {
        let last = levels.last().unwrap();
        let mx = ((last.nx as f64 * cfg.pyramid_scale).round() as usize).max(4);
        let my = ((last.ny as f64 * cfg.pyramid_scale).round() as usize).max(4);
        if mx >= last.nx && my >= last.ny {
            break;
        }
        let down = |img: &[f64]| resample(&blur(img, last.nx, last.ny, sigma), last.nx, last.ny, mx, my);
        let next = Level {
            nx: mx,
            ny: my,
            src: down(&last.src),
            tgt: down(&last.tgt),
        };
        levels.push(next);
    }
    levels
}

/// Flow `[2, X, Y]` such that `src(p + u(p)) ~ tgt(p)`.
pub(crate) fn estimate_pair(src: &[f64], tgt: &[f64], nx: usize, ny: usize, cfg: &FlowOptConfig) -> Vec<f64> {
    let levels = pyramid(src, tgt, nx, ny, cfg);
    let coarse = levels.last().unwrap();
    let mut flow = vec![0.0; 2 * coarse.nx * coarse.ny];
    for (li, lv) in levels.iter().enumerate().rev() {
        let m = lv.nx * lv.ny;
        let (gx, gy) = gradients(&lv.src, lv.nx, lv.ny);
        for _ in 0..cfg.warp_iters_per_level {
            let plan = WarpPlan::new(&flow, lv.nx, lv.ny);
            let ws = warp_real(&plan, &lv.src);
            let wx = warp_real(&plan, &gx);
            let wy = warp_real(&plan, &gy);
            let mut terms: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; m]);
            for p in 0..m {
                let e = ws[p] - lv.tgt[p];
                terms[0][p] = wx[p] * wx[p];
                terms[1][p] = wx[p] * wy[p];
                terms[2][p] = wy[p] * wy[p];
                terms[3][p] = wx[p] * e;
                terms[4][p] = wy[p] * e;
            }
            let [jxx, jxy, jyy, bx, by] = terms.map(|t| box_blur(&t, lv.nx, lv.ny, WINDOW_SIGMA));
            for p in 0..m {
                let (a, b, d) = (jxx[p] + NORMAL_DAMPING, jxy[p], jyy[p] + NORMAL_DAMPING);
                let det = a * d - b * b;
                let dx = -(d * bx[p] - b * by[p]) / det;
                let dy = -(a * by[p] - b * bx[p]) / det;
                let len = dx.hypot(dy);
                let s = if len > MAX_UPDATE { MAX_UPDATE / len } else { 1.0 };
                flow[p] += dx * s;
                flow[m + p] += dy * s;
            }
        }
        if li > 0 {
            let fine = &levels[li - 1];
            let (rx, ry) = (fine.nx as f64 / lv.nx as f64, fine.ny as f64 / lv.ny as f64);
            let mut up = resample(&flow[..m], lv.nx, lv.ny, fine.nx, fine.ny);
            up.iter_mut().for_each(|v| *v *= rx);
            let mut uy = resample(&flow[m..], lv.nx, lv.ny, fine.nx, fine.ny);
            uy.iter_mut().for_each(|v| *v *= ry);
            up.extend(uy);
            flow = up;
        }
    }
    flow
}

/// Estimate window flows for every frame by minimizing the warping loss.
pub fn estimate_flow_warploss(x: &CineSequence, k_half: usize, cfg: &FlowOptConfig) -> Result<FlowSet> {
    cfg.validate()?;
    if !x.tensor().is_finite() {
        return Err(Error::NonFinite("input sequence".into()));
    }
    let (n_frames, (nx, ny)) = (x.n_frames(), x.grid());
    let k = 2 * k_half + 1;
    if k > n_frames {
        return Err(Error::InvalidParameter(format!("K = {k} exceeds {n_frames} frames")));
    }
    let peak = x.max_magnitude();
    let mut flows = FlowSet::zeros(n_frames, k, nx, ny);
    if peak == 0.0 {
        return Ok(flows);
    }
    let mags: Vec<Vec<f64>> = x
        .magnitude_frames()
        .into_iter()
        .map(|f| f.into_iter().map(|v| v / peak).collect())
        .collect();
    let blocks = map_indices(n_frames, |n| -> Result<Vec<f64>> {
        let window = neighbor_window(n, k_half, n_frames)?;
        let mut block = vec![0.0; k * 2 * nx * ny];
        for (j, &w) in window.iter().enumerate() {
            if j != k_half {
                let f = estimate_pair(&mags[n], &mags[w], nx, ny, cfg);
                block[j * 2 * nx * ny..(j + 1) * 2 * nx * ny].copy_from_slice(&f);
            }
        }
        Ok(block)
    });
    for (n, b) in blocks.into_iter().enumerate() {
        flows.frame_mut(n).copy_from_slice(&b?);
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_identity_grid() {
        let img: Vec<f64> = (0..20).map(|v| v as f64).collect();
        assert_eq!(resample(&img, 4, 5, 4, 5), img);
    }

    #[test]
    fn box_blur_approximates_gaussian() {
        let (nx, ny) = (61, 61);
        let mut img = vec![0.0; nx * ny];
        img[30 * ny + 30] = 1.0;
        for sigma in [1.5, 4.0, 9.0] {
            let a = box_blur(&img, nx, ny, sigma);
            let b = blur(&img, nx, ny, sigma);
            let peak = b.iter().cloned().fold(0.0, f64::max);
            let worst = a.iter().zip(&b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
            assert!(worst < 0.1 * peak, "sigma {sigma}: {worst} vs peak {peak}");
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = vec![3.0; 30];
        assert!(blur(&img, 5, 6, 1.5).iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn gradients_of_a_ramp() {
        let img: Vec<f64> = (0..6).flat_map(|x| (0..5).map(move |y| 2.0 * x as f64 - y as f64)).collect();
        let (gx, gy) = gradients(&img, 6, 5);
        assert!(gx.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(gy.iter().all(|v| (v + 1.0).abs() < 1e-12));
    }
}

//! Conjugate gradient for Hermitian positive semi-definite systems.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot_re, norm_sq};

#[derive(Debug, Clone)]
pub struct CgOutput {
    pub x: Vec<Complex64>,
    /// `||r_i|| / ||b||` for `i = 0..=iterations`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Every intermediate quantity of a CG run, kept for reverse-mode
/// differentiation through the iteration.
#[derive(Debug, Clone, Default)]
pub struct CgTape {
    /// Search directions `p_0 .. p_{I-1}`.
    pub p: Vec<Vec<Complex64>>,
    /// `q_i = V p_i`.
    pub q: Vec<Vec<Complex64>>,
    /// Residuals `r_0 .. r_I` (`r_0 = b`).
    pub r: Vec<Vec<Complex64>>,
    /// `rho_i = ||r_i||^2` for `i = 0..=I`.
    pub rho: Vec<f64>,
    /// `sigma_i = Re <p_i, q_i>`.
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `beta_i = rho_{i+1} / rho_i`, recorded only when `p_{i+1}` was formed.
    pub beta: Vec<f64>,
}

impl CgTape {
    pub fn iterations(&self) -> usize {
        self.alpha.len()
    }
}

/// Solve `V x = b` from `x_0 = 0` for at most `iters` steps, stopping early
/// once `||r|| / ||b|| < tol` or the recurrence breaks down.
pub fn cg_solve<F>(apply_normal: F, rhs: &[Complex64], iters: usize, tol: f64) -> Result<CgOutput>
where
    F: FnMut(&[Complex64], &mut [Complex64]),
{
    run(apply_normal, rhs, iters, tol, None)
}

/// [`cg_solve`] that also records the tape.
pub fn cg_solve_recorded<F>(
    apply_normal: F,
    rhs: &[Complex64],
    iters: usize,
    tol: f64,
) -> Result<(CgOutput, CgTape)>
where
    F: FnMut(&[Complex64], &mut [Complex64]),
{
    let mut tape = CgTape::default();
    let out = run(apply_normal, rhs, iters, tol, Some(&mut tape))?;
    Ok((out, tape))
}

fn run<F>(
    mut apply_normal: F,
    rhs: &[Complex64],
    iters: usize,
    tol: f64,
    mut tape: Option<&mut CgTape>,
) -> Result<CgOutput>
where
    F: FnMut(&[Complex64], &mut [Complex64]),
{
    let n = rhs.len();
    let mut x = vec![Complex64::default(); n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut q = vec![Complex64::default(); n];
    let mut rho = norm_sq(&r);
    if !rho.is_finite() {
        return Err(Error::NonFinite("CG right-hand side".into()));
    }
    let b_norm = rho.sqrt();
    let mut residuals = vec![if b_norm > 0.0 { 1.0 } else { 0.0 }];
    if let Some(t) = tape.as_deref_mut() {
        t.r.push(r.clone());
        t.rho.push(rho);
    }
    let mut done = 0;
    while done < iters && rho > 0.0 && residuals[done] >= tol {
        apply_normal(&p, &mut q);
        let sigma = dot_re(&p, &q);
        if !sigma.is_finite() || !all_finite(&q) {
            return Err(Error::NonFinite(format!("CG operator output at iteration {done}")));
        }
        if sigma <= f64::EPSILON * rho * 1e-6 {
            // Direction in the (numerical) null space: nothing left to gain.
            break;
        }
        let alpha = rho / sigma;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let rho_next = norm_sq(&r);
        if !rho_next.is_finite() || !all_finite(&x) {
            return Err(Error::NonFinite(format!("CG iterate at iteration {done}")));
        }
        if let Some(t) = tape.as_deref_mut() {
            t.p.push(p.clone());
            t.q.push(q.clone());
            t.sigma.push(sigma);
            t.alpha.push(alpha);
            t.r.push(r.clone());
            t.rho.push(rho_next);
        }
        done += 1;
        residuals.push(rho_next.sqrt() / b_norm);
        if done < iters && rho_next > 0.0 && residuals[done] >= tol {
            let beta = rho_next / rho;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + *pi * beta;
            }
            if let Some(t) = tape.as_deref_mut() {
                t.beta.push(beta);
            }
        }
        rho = rho_next;
    }
    Ok(CgOutput {
        x,
        residuals,
        iterations: done,
    })
}

/// Whether each entry is no larger than its predecessor (with a relative slack).
pub fn is_non_increasing(history: &[f64], slack: f64) -> bool {
    history.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_err;
    use crate::rng::{Seed, SeededRng};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn identity_converges_in_one_step() {
        let b = SeededRng::new(Seed(1)).complex_normal_vec(10);
        let out = cg_solve(|p, q| q.copy_from_slice(p), &b, 5, 1e-12).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(rel_err(&out.x, &b) < 1e-15);
    }

    #[test]
    fn diagonal_two_by_two() {
        let diag = [2.0, 3.0];
        let b = [c(2.0), c(3.0)];
        let out = cg_solve(
            |p, q| {
                for i in 0..2 {
                    q[i] = p[i] * diag[i];
                }
            },
            &b,
            2,
            0.0,
        )
        .unwrap();
        assert!(out.iterations <= 2);
        assert!((out.x[0] - c(1.0)).norm() < 1e-10);
        assert!((out.x[1] - c(1.0)).norm() < 1e-10);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let out = cg_solve(|p, q| q.copy_from_slice(p), &[Complex64::default(); 4], 3, 0.0).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.x.iter().all(|z| *z == Complex64::default()));
    }

    #[test]
    fn nan_operator_aborts() {
        let b = vec![c(1.0); 3];
        let err = cg_solve(|_, q| q.fill(c(f64::NAN)), &b, 3, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn tape_matches_plain_run() {
        let b = SeededRng::new(Seed(3)).complex_normal_vec(5);
        let diag = [1.0, 2.0, 3.0, 4.0, 5.0];
        let op = |p: &[Complex64], q: &mut [Complex64]| {
            for i in 0..5 {
                q[i] = p[i] * diag[i];
            }
        };
        let plain = cg_solve(op, &b, 4, 0.0).unwrap();
        let (rec, tape) = cg_solve_recorded(op, &b, 4, 0.0).unwrap();
        assert_eq!(plain.x, rec.x);
        assert_eq!(tape.iterations(), 4);
        assert_eq!(tape.beta.len(), 3);
        assert_eq!(tape.r.len(), 5);
    }
}

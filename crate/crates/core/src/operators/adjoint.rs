//! Generic linear operator pairs and the stochastic dot-product test.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::{Seed, SeededRng};
use crate::tensor::ComplexTensor;

type OpFn<'a> = Box<dyn Fn(&ComplexTensor) -> Result<ComplexTensor> + 'a>;

/// A linear map together with its claimed adjoint.
pub struct LinearOperatorPair<'a> {
    pub name: String,
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    forward: OpFn<'a>,
    adjoint: OpFn<'a>,
}

impl<'a> LinearOperatorPair<'a> {
    pub fn new(
        name: impl Into<String>,
        in_dims: Vec<usize>,
        out_dims: Vec<usize>,
        forward: impl Fn(&ComplexTensor) -> Result<ComplexTensor> + 'a,
        adjoint: impl Fn(&ComplexTensor) -> Result<ComplexTensor> + 'a,
    ) -> Self {
        Self {
            name: name.into(),
            in_dims,
            out_dims,
            forward: Box::new(forward),
            adjoint: Box::new(adjoint),
        }
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        check(&self.in_dims, x, "forward input")?;
        let y = (self.forward)(x)?;
        check(&self.out_dims, &y, "forward output")?;
        Ok(y)
    }

    pub fn adjoint(&self, y: &ComplexTensor) -> Result<ComplexTensor> {
        check(&self.out_dims, y, "adjoint input")?;
        let x = (self.adjoint)(y)?;
        check(&self.in_dims, &x, "adjoint output")?;
        Ok(x)
    }
}

fn check(expected: &[usize], t: &ComplexTensor, what: &str) -> Result<()> {
    if t.dims() != expected {
        return Err(Error::DimMismatch(format!(
            "{what}: expected {expected:?}, got {:?}",
            t.dims()
        )));
    }
    Ok(())
}

/// Largest `|<Fx, y> - <x, F^H y>| / (||Fx|| ||y||)` over random complex
/// Gaussian trials.
pub fn adjoint_check(pair: &LinearOperatorPair<'_>, trials: usize, seed: Seed) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let n_in = pair.in_dims.iter().product();
    let n_out = pair.out_dims.iter().product();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = ComplexTensor::new(pair.in_dims.clone(), rng.complex_normal_vec(n_in))?;
        let y = ComplexTensor::new(pair.out_dims.clone(), rng.complex_normal_vec(n_out))?;
        let fx = pair.forward(&x)?;
        let fhy = pair.adjoint(&y)?;
        let lhs = dot(fx.data(), y.data());
        let rhs = dot(x.data(), fhy.data());
        let scale = norm(fx.data()) * norm(y.data());
        let err = if scale > 0.0 {
            (lhs - rhs).norm() / scale
        } else {
            (lhs - rhs).norm()
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pair_is_exact() {
        let id = LinearOperatorPair::new(
            "identity",
            vec![4, 3],
            vec![4, 3],
            |x| Ok(x.clone()),
            |y| Ok(y.clone()),
        );
        assert_eq!(adjoint_check(&id, 10, Seed(1)).unwrap(), 0.0);
    }

    #[test]
    fn wrong_adjoint_is_detected() {
        let shift = |x: &ComplexTensor| {
            let mut d = x.data().to_vec();
            d.rotate_right(1);
            ComplexTensor::new(x.dims().to_vec(), d)
        };
        let bad = LinearOperatorPair::new("shift", vec![16], vec![16], shift, |y| Ok(y.clone()));
        assert!(adjoint_check(&bad, 5, Seed(2)).unwrap() > 0.1);
    }

    #[test]
    fn shape_violations_are_errors() {
        let id = LinearOperatorPair::new("id", vec![2], vec![3], |x| Ok(x.clone()), |y| Ok(y.clone()));
        assert!(adjoint_check(&id, 1, Seed(0)).is_err());
    }
}

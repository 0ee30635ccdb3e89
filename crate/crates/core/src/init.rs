//! Weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn uniform<T: Scalar, R: Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        T::from_f64_lossy(rng.random_range(-limit..limit))
    })
}

/// He-uniform: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// Glorot-uniform: `U(−√(6/(fan_in+fan_out)), …)`.
pub fn glorot_uniform<T: Scalar, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// `rows × cols` matrix whose shorter side is orthonormal, built by
/// Gram–Schmidt on Gaussian vectors.
pub fn orthogonal<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let (count, len) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Tensor::from_fn(&[rows, cols], |i| {
        let (r, c) = (i / cols, i % cols);
        let v = if rows <= cols {
            basis[r][c]
        } else {
            basis[c][r]
        };
        T::from_f64_lossy(v)
    })
}

//! Categorical cross entropy and the combined frame/clip objective.

use num_traits::Num;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to at least this value before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on `Σp = 1` accepted by [`categorical_cross_entropy`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_LAMBDA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneHotTarget {
    index: usize,
    len: usize,
}

impl OneHotTarget {
    pub fn new(index: usize, len: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::InvalidArgument(format!(
                "class {index} out of range for {len} categories"
            )));
        }
        Ok(Self { index, len })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        (0..self.len)
            .map(|i| if i == self.index { T::one() } else { T::zero() })
            .collect()
    }
}

/// `−Σ gᵢ ln pᵢ` for a one-hot `g`, i.e. `−ln max(p_target, floor)`.
pub fn categorical_cross_entropy<T: Scalar>(target: &OneHotTarget, p: &[T]) -> Result<T> {
    if p.len() != target.len {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target has {}",
            p.len(),
            target.len
        )));
    }
    crate::graph::check_distribution(p)?;
    let floor = T::from_f64_lossy(PROBABILITY_FLOOR);
    Ok(-p[target.index].max(floor).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub frame_losses: Vec<T>,
    pub final_loss: T,
    pub lambda_weight: T,
    pub total: T,
}

/// `Σₜ frame_losses[t] + λ·final_loss`, summed left to right from zero.
///
/// Generic over any number type so the arithmetic can be checked exactly
/// with rationals.
pub fn total_loss<T>(
    frame_losses: &[T],
    final_loss: T,
    lambda_weight: T,
) -> Result<LossBreakdown<T>>
where
    T: Copy + Num + PartialOrd + std::fmt::Debug,
{
    // `x - x == 0` fails for ±∞ and NaN and holds for every finite value.
    let valid = |x: T| x >= T::zero() && x - x == T::zero();
    if let Some(bad) = frame_losses
        .iter()
        .copied()
        .chain([final_loss, lambda_weight])
        .find(|&x| !valid(x))
    {
        return Err(Error::InvalidArgument(format!(
            "loss components must be finite and non-negative, got {bad:?}"
        )));
    }
    let sum = frame_losses.iter().fold(T::zero(), |acc, &l| acc + l);
    Ok(LossBreakdown {
        frame_losses: frame_losses.to_vec(),
        final_loss,
        lambda_weight,
        total: sum + lambda_weight * final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn cross_entropy_examples() {
        let t = OneHotTarget::new(1, 3).unwrap();
        assert_eq!(
            categorical_cross_entropy(&t, &[0.0, 1.0, 0.0]).unwrap(),
            0.0
        );
        let half = categorical_cross_entropy(&t, &[0.25, 0.5, 0.25]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let t11 = OneHotTarget::new(4, 11).unwrap();
        let uniform = vec![1.0 / 11.0; 11];
        let ce = categorical_cross_entropy(&t11, &uniform).unwrap();
        assert!((ce - 11f64.ln()).abs() < 1e-12);
        assert!((ce - 2.397895).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let t = OneHotTarget::new(0, 2).unwrap();
        let ce = categorical_cross_entropy(&t, &[0.0, 1.0]).unwrap();
        assert!((ce - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_inputs() {
        let t = OneHotTarget::new(0, 2).unwrap();
        assert!(categorical_cross_entropy(&t, &[0.5, 0.6]).is_err());
        assert!(categorical_cross_entropy(&t, &[1.0]).is_err());
        assert!(OneHotTarget::new(2, 2).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let b = total_loss(&[0.1, 0.2, 0.3], 0.5, 2.0).unwrap();
        assert_eq!(b.total, 1.6);
        assert_eq!(total_loss(&[0.0; 4], 0.0, 2.0).unwrap().total, 0.0);
        let l0 = total_loss(&[0.1, 0.2, 0.3], 0.5, 0.0).unwrap();
        assert_eq!(l0.total, 0.1 + 0.2 + 0.3);
    }

    #[test]
    fn total_loss_is_exact_in_rationals() {
        let r = |n: i64, d: i64| Ratio::new(n, d);
        let b = total_loss(&[r(1, 10), r(2, 10), r(3, 10)], r(1, 2), r(2, 1)).unwrap();
        assert_eq!(b.total, r(8, 5));
    }

    #[test]
    fn total_loss_rejects_invalid_components() {
        assert!(total_loss(&[-0.1], 0.5, 2.0).is_err());
        assert!(total_loss(&[0.1], f64::NAN, 2.0).is_err());
        assert!(total_loss(&[f64::INFINITY], 0.5, 2.0).is_err());
        assert!(total_loss(&[0.1], 0.5, -1.0).is_err());
    }
}

//! Simplex operations under the Aitchison geometry.
//!
//! A [`Composition`] is a vector of `D >= 2` strictly positive parts that sum
//! to a fixed total `κ` (for example 1440 minutes in a day). All geometry is
//! invariant to `κ`, so the total is carried as metadata and re-applied every
//! time a result is closed. Zeros are rejected outright; there is no
//! imputation here.

use crate::error::{CodaError, Result};
use crate::scalar::Scalar;

/// A strictly positive `D`-part vector closed to a total `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition<T: Scalar> {
    parts: Vec<T>,
    total: T,
}

fn check_total<T: Scalar>(total: T) -> Result<()> {
    if !(total.is_finite() && total > T::zero()) {
        return Err(CodaError::InvalidValue(format!(
            "total must be finite and > 0, got {total}"
        )));
    }
    Ok(())
}

fn check_parts<T: Scalar>(raw: &[T]) -> Result<()> {
    if raw.is_empty() {
        return Err(CodaError::Shape("composition has no parts".into()));
    }
    for (index, &value) in raw.iter().enumerate() {
        if !(value.is_finite() && value > T::zero()) {
            return Err(CodaError::NonPositivePart {
                index,
                value: value.to_f64_lossy(),
            });
        }
    }
    if raw.len() < 2 {
        return Err(CodaError::Shape(format!(
            "a composition needs at least 2 parts, got {}",
            raw.len()
        )));
    }
    Ok(())
}

/// Closes a vector of log-parts: `κ · exp(l) / Σ exp(l)`, shifted by the
/// maximum so that large exponents cannot overflow.
fn close_logs<T: Scalar>(logs: &[T], total: T) -> Result<Composition<T>> {
    let max = logs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return Err(CodaError::InvalidValue("non-finite log-parts".into()));
    }
    let raw: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
    closure(&raw, total)
}

/// Rescales positive `raw` values so they sum to `total`.
pub fn closure<T: Scalar>(raw: &[T], total: T) -> Result<Composition<T>> {
    check_parts(raw)?;
    check_total(total)?;
    let sum = raw.iter().fold(T::zero(), |acc, &v| acc + v);
    if !sum.is_finite() {
        return Err(CodaError::InvalidValue("sum of parts overflows".into()));
    }
    let parts = if sum == total {
        raw.to_vec()
    } else {
        let scale = total / sum;
        raw.iter().map(|&v| v * scale).collect()
    };
    for (index, &value) in parts.iter().enumerate() {
        if !(value > T::zero()) {
            return Err(CodaError::NonPositivePart {
                index,
                value: value.to_f64_lossy(),
            });
        }
    }
    Ok(Composition { parts, total })
}

impl<T: Scalar> Composition<T> {
    /// Wraps parts that already sum to `total` (relative tolerance
    /// [`Scalar::sum_tolerance`]). Use [`closure`] to rescale arbitrary input.
    pub fn new(parts: Vec<T>, total: T) -> Result<Self> {
        check_parts(&parts)?;
        check_total(total)?;
        let sum = parts.iter().fold(T::zero(), |acc, &v| acc + v);
        if ((sum - total) / total).abs() > T::sum_tolerance() {
            return Err(CodaError::TotalMismatch(
                sum.to_f64_lossy(),
                total.to_f64_lossy(),
            ));
        }
        Ok(Composition { parts, total })
    }

    /// The neutral element `(κ/D, …, κ/D)`.
    pub fn neutral(dim: usize, total: T) -> Result<Self> {
        if dim < 2 {
            return Err(CodaError::Shape(format!(
                "a composition needs at least 2 parts, got {dim}"
            )));
        }
        check_total(total)?;
        let value = total / T::from_count(dim);
        Ok(Composition {
            parts: vec![value; dim],
            total,
        })
    }

    pub fn parts(&self) -> &[T] {
        &self.parts
    }

    pub fn total(&self) -> T {
        self.total
    }

    pub fn dim(&self) -> usize {
        self.parts.len()
    }

    pub fn into_parts(self) -> Vec<T> {
        self.parts
    }

    pub(crate) fn log_parts(&self) -> Vec<T> {
        self.parts.iter().map(|v| v.ln()).collect()
    }

    /// Centred log-ratio vector; internal helper for the inner product.
    pub(crate) fn clr(&self) -> Vec<T> {
        let logs = self.log_parts();
        let mean = logs.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(logs.len());
        logs.into_iter().map(|l| l - mean).collect()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(CodaError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let (a, b) = (self.total, other.total);
        if ((a - b) / a).abs() > T::sum_tolerance() {
            return Err(CodaError::TotalMismatch(a.to_f64_lossy(), b.to_f64_lossy()));
        }
        Ok(())
    }

    /// Perturbation `x ⊕ y`: the closed element-wise product.
    pub fn perturb(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let logs: Vec<T> = self
            .parts
            .iter()
            .zip(&other.parts)
            .map(|(&a, &b)| a.ln() + b.ln())
            .collect();
        close_logs(&logs, self.total)
    }

    /// Powering `α ⊙ x`: the closed element-wise power.
    pub fn power(&self, alpha: T) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(CodaError::InvalidValue(format!(
                "power exponent must be finite, got {alpha}"
            )));
        }
        let logs: Vec<T> = self.parts.iter().map(|&v| alpha * v.ln()).collect();
        close_logs(&logs, self.total)
    }

    /// Opposite element `⊖x = C(1/x_1, …, 1/x_D)`.
    pub fn opposite(&self) -> Self {
        let raw: Vec<T> = self.parts.iter().map(|&v| v.recip()).collect();
        closure(&raw, self.total).expect("reciprocals of positive parts are positive")
    }

    /// Aitchison inner product, computed through centred log-ratios.
    pub fn inner_product(&self, other: &Self) -> Result<T> {
        self.check_compatible(other)?;
        Ok(self
            .clr()
            .iter()
            .zip(other.clr())
            .fold(T::zero(), |acc, (&a, b)| acc + a * b))
    }

    /// Aitchison norm `sqrt(⟨x, x⟩_a)`.
    pub fn norm(&self) -> T {
        self.clr().iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }
}

/// Compositional mean: closed per-part geometric mean of `xs`.
pub fn geometric_mean_composition<T: Scalar>(xs: &[Composition<T>]) -> Result<Composition<T>> {
    let first = xs
        .first()
        .ok_or_else(|| CodaError::Shape("geometric mean of an empty set".into()))?;
    if xs.len() == 1 {
        return Ok(first.clone());
    }
    let dim = first.dim();
    let mut log_sums = vec![T::zero(); dim];
    for x in xs {
        first.check_compatible(x)?;
        for (acc, v) in log_sums.iter_mut().zip(&x.parts) {
            *acc = *acc + v.ln();
        }
    }
    let n = T::from_count(xs.len());
    let logs: Vec<T> = log_sums.into_iter().map(|s| s / n).collect();
    close_logs(&logs, first.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn comp(parts: &[f64], total: f64) -> Composition<f64> {
        closure(parts, total).unwrap()
    }

    #[test]
    fn closure_rescales_proportionally() {
        let x = comp(&[1.0, 1.0, 2.0], 1.0);
        assert_eq!(x.parts(), &[0.25, 0.25, 0.5]);
        let again = closure(x.parts(), 1.0).unwrap();
        assert_eq!(again, x);
        let day = [480.0, 60.0, 30.0, 210.0, 660.0];
        assert_eq!(comp(&day, 1440.0).parts(), &day);
    }

    #[test]
    fn closure_rejects_zero_negative_and_nan() {
        assert!(matches!(
            closure(&[1.0, 0.0, 2.0], 1.0),
            Err(CodaError::NonPositivePart { index: 1, .. })
        ));
        assert!(matches!(
            closure(&[1.0, -3.0], 1.0),
            Err(CodaError::NonPositivePart { index: 1, .. })
        ));
        assert!(closure(&[f64::NAN, 1.0], 1.0).is_err());
        assert!(matches!(closure::<f64>(&[], 1.0), Err(CodaError::Shape(_))));
        assert!(matches!(closure(&[2.0], 1.0), Err(CodaError::Shape(_))));
        assert!(closure(&[1.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn new_enforces_sum_to_total() {
        assert!(Composition::new(vec![0.5, 0.5], 1.0).is_ok());
        assert!(matches!(
            Composition::new(vec![0.5, 0.6], 1.0),
            Err(CodaError::TotalMismatch(..))
        ));
    }

    #[test]
    fn perturbation_neutral_and_opposite() {
        let x = comp(&[0.2, 0.8], 1.0);
        let half = comp(&[0.5, 0.5], 1.0);
        let y = x.perturb(&half).unwrap();
        assert_relative_eq!(y.parts()[0], 0.2, max_relative = 1e-12);
        assert_relative_eq!(y.parts()[1], 0.8, max_relative = 1e-12);

        let x = comp(&[480.0, 60.0, 30.0, 210.0, 660.0], 1440.0);
        let neutral = Composition::neutral(5, 1440.0).unwrap();
        let back = x.perturb(&x.opposite()).unwrap();
        for (a, b) in back.parts().iter().zip(neutral.parts()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn perturb_rejects_mismatched_inputs() {
        let a = comp(&[1.0, 2.0], 1.0);
        let b = comp(&[1.0, 2.0, 3.0], 1.0);
        assert!(matches!(a.perturb(&b), Err(CodaError::DimensionMismatch { .. })));
        let c = comp(&[1.0, 2.0], 24.0);
        assert!(matches!(a.perturb(&c), Err(CodaError::TotalMismatch(..))));
    }

    #[test]
    fn powering_special_exponents() {
        let x = comp(&[3.0, 5.0, 7.0, 9.0], 24.0);
        let one = x.power(1.0).unwrap();
        let zero = x.power(0.0).unwrap();
        let minus = x.power(-1.0).unwrap();
        let opp = x.opposite();
        for d in 0..4 {
            assert_relative_eq!(one.parts()[d], x.parts()[d], max_relative = 1e-12);
            assert_relative_eq!(zero.parts()[d], 6.0, max_relative = 1e-12);
            assert_relative_eq!(minus.parts()[d], opp.parts()[d], max_relative = 1e-12);
        }
        assert!(x.power(f64::INFINITY).is_err());
        // large exponents stay representable
        assert!(x.power(400.0).is_ok());
    }

    #[test]
    fn inner_product_values() {
        let x = comp(&[2.0, 3.0, 5.0], 1.0);
        let n = Composition::neutral(3, 1.0).unwrap();
        assert!(x.inner_product(&n).unwrap().abs() < 1e-15);
        assert!(x.inner_product(&x).unwrap() > 0.0);
        assert!(n.inner_product(&n).unwrap().abs() < 1e-30);
        // clr((e, 1)) = (0.5, -0.5), so <x, x> = 0.25 + 0.25.
        let e = comp(&[std::f64::consts::E, 1.0], 1.0);
        assert_relative_eq!(e.inner_product(&e).unwrap(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn geometric_mean_cases() {
        let x = comp(&[18.0, 6.0], 24.0);
        let y = comp(&[8.0, 16.0], 24.0);
        assert_eq!(geometric_mean_composition(&[x.clone()]).unwrap(), x);
        let triple = geometric_mean_composition(&[x.clone(), x.clone(), x.clone()]).unwrap();
        for d in 0..2 {
            assert_relative_eq!(triple.parts()[d], x.parts()[d], max_relative = 1e-12);
        }
        // closure(sqrt(18*8), sqrt(6*16)) = closure(12, 9.797958971132712)
        let g = geometric_mean_composition(&[x, y]).unwrap();
        let g2 = 96f64.sqrt();
        let expected = [24.0 * 12.0 / (12.0 + g2), 24.0 * g2 / (12.0 + g2)];
        assert_relative_eq!(g.parts()[0], expected[0], max_relative = 1e-12);
        assert_relative_eq!(g.parts()[1], expected[1], max_relative = 1e-12);
        assert!(geometric_mean_composition::<f64>(&[]).is_err());
        let z = comp(&[1.0, 1.0, 1.0], 24.0);
        assert!(geometric_mean_composition(&[g, z]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let x = closure(&[1.0f32, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(x.parts(), &[0.25f32, 0.25, 0.5]);
        let y = x.power(2.0).unwrap();
        assert!((y.parts()[2] - 4.0 / 6.0).abs() < 1e-6);
    }
}

//! Prior families for the random-intercept model.

use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};

/// Consistency constant turning a median absolute deviation into a standard
/// deviation estimate under normality.
const MAD_SCALE: f64 = 1.4826;

/// Student-t prior on the population intercept (or a flat one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InterceptPrior {
    StudentT { df: f64, location: f64, scale: f64 },
    Flat,
}

/// Prior on the ilr and covariate coefficients.
///
/// Only zero-centred normals are offered besides the flat prior, so that the
/// prior is invariant to the choice of ilr basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientPrior {
    Flat,
    Normal { scale: f64 },
}

/// Half student-t prior on a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfStudentT {
    pub df: f64,
    pub scale: f64,
}

/// Full prior specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub intercept: InterceptPrior,
    pub coefficients: CoefficientPrior,
    pub sd_intercept: HalfStudentT,
    pub sd_residual: HalfStudentT,
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CodaError::InvalidValue(format!("{what} must be > 0, got {v}")))
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if let InterceptPrior::StudentT {
            df,
            location,
            scale,
        } = self.intercept
        {
            check_positive("intercept prior df", df)?;
            check_positive("intercept prior scale", scale)?;
            if !location.is_finite() {
                return Err(CodaError::InvalidValue(
                    "intercept prior location must be finite".into(),
                ));
            }
        }
        if let CoefficientPrior::Normal { scale } = self.coefficients {
            check_positive("coefficient prior scale", scale)?;
        }
        for (name, p) in [
            ("sd_intercept", self.sd_intercept),
            ("sd_residual", self.sd_residual),
        ] {
            check_positive(&format!("{name} prior df"), p.df)?;
            check_positive(&format!("{name} prior scale"), p.scale)?;
        }
        Ok(())
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Weakly informative defaults derived from the outcome:
/// intercept `student_t(3, median(y), s)`, flat coefficients and
/// `half-student_t(3, 0, s)` on both standard deviations, with
/// `s = max(2.5, round1(1.4826 · MAD(y)))`.
pub fn default_priors(outcome: &[f64]) -> Result<PriorSpec> {
    if outcome.len() < 2 {
        return Err(CodaError::ZeroScale(format!(
            "need at least 2 outcome values, got {}",
            outcome.len()
        )));
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(CodaError::InvalidValue("outcome contains non-finite values".into()));
    }
    if outcome.iter().all(|&v| v == outcome[0]) {
        return Err(CodaError::ZeroScale("outcome is constant".into()));
    }
    let location = median(outcome);
    let deviations: Vec<f64> = outcome.iter().map(|v| (v - location).abs()).collect();
    let mad = MAD_SCALE * median(&deviations);
    let scale = ((mad * 10.0).round() / 10.0).max(2.5);
    Ok(PriorSpec {
        intercept: InterceptPrior::StudentT {
            df: 3.0,
            location,
            scale,
        },
        coefficients: CoefficientPrior::Flat,
        sd_intercept: HalfStudentT { df: 3.0, scale },
        sd_residual: HalfStudentT { df: 3.0, scale },
    })
}

/// Unnormalized student-t log density and its derivative in `x`.
pub(crate) fn student_t_lpdf(x: f64, df: f64, location: f64, scale: f64) -> (f64, f64) {
    let z = (x - location) / scale;
    let lp = -0.5 * (df + 1.0) * (z * z / df).ln_1p();
    let grad = -(df + 1.0) * (x - location) / (df * scale * scale + (x - location).powi(2));
    (lp, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_outcome_scale() {
        let y = [1.5, 1.7, 1.9, 1.6, 1.8];
        let p = default_priors(&y).unwrap();
        assert_eq!(
            p.intercept,
            InterceptPrior::StudentT {
                df: 3.0,
                location: 1.7,
                scale: 2.5
            }
        );
        assert_eq!(p.coefficients, CoefficientPrior::Flat);
        assert_eq!(p.sd_residual, HalfStudentT { df: 3.0, scale: 2.5 });

        // wide outcome: MAD-based scale takes over, rounded to one decimal
        let wide: Vec<f64> = (0..11).map(|i| 10.0 * i as f64).collect();
        let p = default_priors(&wide).unwrap();
        // median 50, MAD 30 -> 44.478 -> 44.5
        assert_eq!(p.sd_intercept.scale, 44.5);
    }

    #[test]
    fn symmetric_outcome_centres_intercept_at_zero() {
        let p = default_priors(&[-2.0, -1.0, 1.0, 2.0]).unwrap();
        match p.intercept {
            InterceptPrior::StudentT { location, .. } => assert_eq!(location, 0.0),
            _ => panic!(),
        }
    }

    #[test]
    fn constant_outcome_is_rejected() {
        assert!(matches!(
            default_priors(&[0.0, 0.0, 0.0]),
            Err(CodaError::ZeroScale(_))
        ));
        assert!(default_priors(&[1.0]).is_err());
    }

    #[test]
    fn student_t_gradient_matches_finite_difference() {
        let (x, h) = (0.7, 1e-6);
        let (_, g) = student_t_lpdf(x, 3.0, 0.2, 1.3);
        let fd = (student_t_lpdf(x + h, 3.0, 0.2, 1.3).0 - student_t_lpdf(x - h, 3.0, 0.2, 1.3).0)
            / (2.0 * h);
        assert!((g - fd).abs() < 1e-7);
    }

    #[test]
    fn validation() {
        let mut p = default_priors(&[1.0, 2.0]).unwrap();
        assert!(p.validate().is_ok());
        p.sd_residual.scale = 0.0;
        assert!(p.validate().is_err());
    }
}

//! Scalar transforms applied to likelihood ratios `x_i / pi_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing `s : (0, inf) -> R` with positive continuous derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MonotoneTransform {
    /// `log t`
    Log,
    /// `-1/t`
    NegReciprocal,
    /// `-t^(-1/beta)`
    NegPower { beta: f64 },
    /// `t`
    Identity,
}

impl MonotoneTransform {
    pub fn validate(&self) -> Result<()> {
        match self {
            MonotoneTransform::NegPower { beta } if !(beta.is_finite() && *beta > 0.0) => Err(
                Error::InvalidParameter(format!("neg-power exponent must be positive, got {beta}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            MonotoneTransform::Log => t.ln(),
            MonotoneTransform::NegReciprocal => -1.0 / t,
            MonotoneTransform::NegPower { beta } => -t.powf(-1.0 / beta),
            MonotoneTransform::Identity => t,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            MonotoneTransform::Log => 1.0 / t,
            MonotoneTransform::NegReciprocal => 1.0 / (t * t),
            MonotoneTransform::NegPower { beta } => t.powf(-1.0 / beta - 1.0) / beta,
            MonotoneTransform::Identity => 1.0,
        }
    }

    /// True when `t` must be strictly positive.
    pub fn needs_positive(&self) -> bool {
        !matches!(self, MonotoneTransform::Identity)
    }
}

/// Convex `S` used in `H^S_pi(x) = sum_i pi_i S(x_i / pi_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexFunction {
    /// `t log t` (0 at t = 0)
    EntropyTLogT,
    /// `(t - 1)^2`
    Quadratic,
    /// `-log t`
    NegLog,
}

impl ConvexFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ConvexFunction::EntropyTLogT => {
                if t == 0.0 {
                    0.0
                } else {
                    t * t.ln()
                }
            }
            ConvexFunction::Quadratic => (t - 1.0).powi(2),
            ConvexFunction::NegLog => -t.ln(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            ConvexFunction::EntropyTLogT => t.ln() + 1.0,
            ConvexFunction::Quadratic => 2.0 * (t - 1.0),
            ConvexFunction::NegLog => -1.0 / t,
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match self {
            ConvexFunction::EntropyTLogT => 1.0 / t,
            ConvexFunction::Quadratic => 2.0,
            ConvexFunction::NegLog => 1.0 / (t * t),
        }
    }

    /// True when `S(0)` is undefined.
    pub fn needs_positive(&self) -> bool {
        matches!(self, ConvexFunction::NegLog)
    }
}

/// `C^inf` step: 0 for `t <= 0`, 1 for `t >= 1`, built from `exp(-1/t)`.
/// Its derivative peaks at 2 when `t = 1/2`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let transforms = [
            MonotoneTransform::Log,
            MonotoneTransform::NegReciprocal,
            MonotoneTransform::NegPower { beta: 2.5 },
            MonotoneTransform::Identity,
        ];
        for s in transforms {
            for &t in &[0.2, 0.9, 1.0, 3.7] {
                let h = 1e-6;
                let fd = (s.eval(t + h) - s.eval(t - h)) / (2.0 * h);
                assert!((fd - s.derivative(t)).abs() < 1e-6, "{s:?} at {t}");
                assert!(s.derivative(t) > 0.0);
            }
        }
        let convex = [
            ConvexFunction::EntropyTLogT,
            ConvexFunction::Quadratic,
            ConvexFunction::NegLog,
        ];
        for s in convex {
            assert!(s.eval(1.0).abs() < 1e-15);
            for &t in &[0.2, 0.9, 3.7] {
                let h = 1e-4;
                let fd = (s.eval(t + h) - 2.0 * s.eval(t) + s.eval(t - h)) / (h * h);
                assert!((fd - s.second_derivative(t)).abs() < 1e-4, "{s:?} at {t}");
            }
        }
    }

    #[test]
    fn neg_power_rejects_nonpositive_beta() {
        assert!(MonotoneTransform::NegPower { beta: 0.0 }.validate().is_err());
        assert!(MonotoneTransform::NegPower { beta: 1.0 }.validate().is_ok());
    }

    #[test]
    fn smooth_step_is_monotone_with_bounded_slope() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(1.5), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        let h = 1e-4;
        for k in 1..10_000 {
            let t = k as f64 * h;
            let v = smooth_step(t);
            assert!(v >= prev);
            assert!((v - prev) / h <= 2.0 + 1e-6);
            prev = v;
        }
    }
}

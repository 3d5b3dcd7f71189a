//! Aleatoric L1 regression loss and uncertainty-derived weights.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default ceiling applied to `1 / sigma`.
pub const DEFAULT_MAX_WEIGHT: f64 = 1e6;

/// A regressed value with its predicted noise scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainScalar<T> {
    pub value: T,
    pub sigma: T,
}

impl<T: Real> UncertainScalar<T> {
    pub fn new(value: T, sigma: T) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { value, sigma })
    }
}

fn check_sigma<T: Real>(sigma: T) -> Result<()> {
    if sigma.is_finite() && sigma > T::zero() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sigma must be positive and finite, got {sigma}"
        )))
    }
}

/// Loss value with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AleatoricLoss<T> {
    pub value: T,
    /// d loss / d prediction. Zero where prediction equals target.
    pub d_prediction: T,
    pub d_sigma: T,
}

/// `sqrt(2) |y - y_hat| / sigma + ln(sigma)`.
pub fn aleatoric_l1_loss<T: Real>(target: T, prediction: T, sigma: T) -> Result<AleatoricLoss<T>> {
    check_sigma(sigma)?;
    let sqrt2 = T::SQRT_2();
    let diff = target - prediction;
    let abs = diff.abs();
    let sign = if diff > T::zero() {
        T::one()
    } else if diff < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    Ok(AleatoricLoss {
        value: sqrt2 * abs / sigma + sigma.ln(),
        d_prediction: -sqrt2 * sign / sigma,
        d_sigma: -sqrt2 * abs / (sigma * sigma) + T::one() / sigma,
    })
}

/// The sigma minimizing the loss for a fixed absolute error `d`: `sqrt(2) d`.
pub fn optimal_sigma<T: Real>(abs_error: T) -> T {
    T::SQRT_2() * abs_error.abs()
}

/// `1 / sigma`, clamped to `max_weight`.
pub fn weight_from_sigma<T: Real>(sigma: T, max_weight: T) -> Result<T> {
    check_sigma(sigma)?;
    Ok((T::one() / sigma).min(max_weight))
}

/// How a predicted uncertainty turns into a least-squares weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightRule {
    /// `1 / sigma`.
    #[default]
    InverseSigma,
    /// `1 / sigma^2`, the Gaussian maximum-likelihood weight.
    InverseVariance,
}

impl WeightRule {
    /// Weight for `sigma`, clamped to `max_weight`.
    pub fn weight<T: Real>(self, sigma: T, max_weight: T) -> Result<T> {
        let w = weight_from_sigma(sigma, max_weight)?;
        Ok(match self {
            WeightRule::InverseSigma => w,
            WeightRule::InverseVariance => (w * w).min(max_weight),
        })
    }
}

impl std::str::FromStr for WeightRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse_sigma" => Ok(WeightRule::InverseSigma),
            "inverse_variance" => Ok(WeightRule::InverseVariance),
            _ => Err(Error::invalid(format!(
                "weight rule must be inverse_sigma or inverse_variance, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for WeightRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightRule::InverseSigma => "inverse_sigma",
            WeightRule::InverseVariance => "inverse_variance",
        })
    }
}

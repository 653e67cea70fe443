//! Penalized-complexity priors on standard deviations and on the spatial
//! range, plus independent Gaussian priors on fixed effects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianDist;
use crate::inference::ModelKind;

/// Rate of the exponential prior on a standard deviation with `P(sigma > u) = alpha`.
pub fn pc_sd_rate(u: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::invalid(format!("upper bound U must be positive, got {u}")));
    }
    Ok(-alpha.ln() / u)
}

/// `log(lambda) - lambda sigma`.
pub fn pc_sd_logpdf(sigma: f64, lambda: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("standard deviation must be non-negative, got {sigma}")));
    }
    check_rate(lambda)?;
    Ok(lambda.ln() - lambda * sigma)
}

/// Rate of the range prior `lambda phi^-2 exp(-lambda / phi)` with `P(phi < phi0) = alpha`.
pub fn pc_range_rate(phi0: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(phi0 > 0.0) || !phi0.is_finite() {
        return Err(Error::invalid(format!("reference range must be positive, got {phi0}")));
    }
    Ok(-phi0 * alpha.ln())
}

/// `log(lambda) - 2 log(phi) - lambda / phi`.
pub fn pc_range_logpdf(phi: f64, lambda: f64) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::invalid(format!("range must be positive, got {phi}")));
    }
    check_rate(lambda)?;
    Ok(lambda.ln() - 2.0 * phi.ln() - lambda / phi)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("tail probability must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("rate must be positive, got {lambda}")));
    }
    Ok(())
}

/// Common independent normal prior for every fixed-effect coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectPrior {
    pub mean: f64,
    pub variance: f64,
}

impl FixedEffectPrior {
    pub fn to_gaussian(&self, dim: usize) -> GaussianDist {
        GaussianDist::isotropic(dim, self.mean, self.variance)
    }
}

/// Exponential rates for the standard deviations. `sigma_w` also serves the
/// cluster-level residual of the cluster-means model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdRates {
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub fixed_effects: FixedEffectPrior,
    pub sd_rates: SdRates,
    pub range_rate: f64,
}

impl PriorSpec {
    /// Weakly informative defaults: N(0, 1000) fixed effects, `P(sigma_w > 10) = 0.1`,
    /// `P(sigma_b > 3) = P(tau > 3) = 0.1`, `P(phi < 7) = 0.5`.
    pub fn standard() -> Self {
        let w = pc_sd_rate(10.0, 0.1).expect("valid constants");
        let b = pc_sd_rate(3.0, 0.1).expect("valid constants");
        PriorSpec {
            fixed_effects: FixedEffectPrior { mean: 0.0, variance: 1000.0 },
            sd_rates: SdRates { sigma_w: w, sigma_b: b, tau: b },
            range_rate: pc_range_rate(7.0, 0.5).expect("valid constants"),
        }
    }

    /// As [`PriorSpec::standard`] with N(0, 1) on every fixed effect.
    pub fn standard_fm() -> Self {
        PriorSpec {
            fixed_effects: FixedEffectPrior { mean: 0.0, variance: 1.0 },
            ..Self::standard()
        }
    }

    pub fn for_model(kind: ModelKind) -> Self {
        match kind {
            ModelKind::FM => Self::standard_fm(),
            _ => Self::standard(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.sd_rates.sigma_w)?;
        check_rate(self.sd_rates.sigma_b)?;
        check_rate(self.sd_rates.tau)?;
        check_rate(self.range_rate)?;
        if !(self.fixed_effects.variance > 0.0) || !self.fixed_effects.mean.is_finite() {
            return Err(Error::invalid("fixed-effect prior variance must be positive"));
        }
        Ok(())
    }
}

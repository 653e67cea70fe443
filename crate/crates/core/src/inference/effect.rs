//! Posterior of the marginal treatment effect as a univariate Gaussian mixture.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::grid::HyperGrid;
use super::model::{build_design, effect_weights};
use super::ModelKind;
use crate::datagen::TrialData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPosterior {
    pub components: Vec<MixtureComponent>,
}

/// `P(Z > z)` for standard normal `Z`, accurate in both tails.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

impl EffectPosterior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if components.iter().any(|c| !(c.sd > 0.0) || !(c.weight >= 0.0) || !c.mean.is_finite()) {
            return Err(Error::invalid("mixture components need sd > 0, weight >= 0, finite mean"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("mixture weights sum to zero"));
        }
        let components = components
            .into_iter()
            .map(|c| MixtureComponent { weight: c.weight / total, ..c })
            .collect();
        Ok(EffectPosterior { components })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent { weight: 1.0, mean, sd }])
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    /// Law of total variance over components.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.sd * c.sd + (c.mean - m).powi(2)))
            .sum()
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        prob_below(self, x)
    }

    /// Mixture quantile by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        let lo0 = self.components.iter().map(|c| c.mean - 40.0 * c.sd).fold(f64::INFINITY, f64::min);
        let hi0 = self.components.iter().map(|c| c.mean + 40.0 * c.sd).fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo0, hi0);
        let tol = 1e-13 * (hi0 - lo0).max(1e-300);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn shifted(&self, by: f64) -> Self {
        EffectPosterior {
            components: self.components.iter().map(|c| MixtureComponent { mean: c.mean + by, ..*c }).collect(),
        }
    }
}

/// Maps each grid point's fixed-effect posterior through
/// `theta = beta + xbar1' delta + (xbar1 - xbar0)' gamma`, using the observed
/// arm-wise covariate means. Cluster dummies do not enter.
pub fn marginal_effect(grid: &HyperGrid, data: &TrialData, kind: ModelKind) -> Result<EffectPosterior> {
    let design = build_design(data, kind)?;
    let a = effect_weights(data, &design)?;
    let mut comps = Vec::with_capacity(grid.points.len());
    for p in &grid.points {
        let cond = &p.conditional;
        if cond.mean.len() != a.len() {
            return Err(Error::invalid("grid point does not match the model's design"));
        }
        let mean = a.dot(&cond.mean);
        let var = (a.transpose() * &cond.covariance * &a)[(0, 0)];
        comps.push(MixtureComponent {
            weight: p.log_weight.exp(),
            mean,
            sd: var.max(0.0).sqrt(),
        });
    }
    EffectPosterior::new(comps)
}

/// `P(theta > delta)`, closed form over components.
pub fn prob_exceeds(post: &EffectPosterior, delta: f64) -> f64 {
    post.components
        .iter()
        .map(|c| c.weight * upper_tail((delta - c.mean) / c.sd))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// `P(theta <= delta)`.
pub fn prob_below(post: &EffectPosterior, delta: f64) -> f64 {
    post.components
        .iter()
        .map(|c| c.weight * upper_tail((c.mean - delta) / c.sd))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Equal-tailed credible interval.
pub fn credible_interval(post: &EffectPosterior, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let tail = 0.5 * (1.0 - level);
    Ok((post.quantile(tail), post.quantile(1.0 - tail)))
}

//! Design arithmetic for two-arm cluster randomized trials with a spatial
//! variance component.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datagen::{GridSpec, Randomization, ScenarioConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;

/// Outcome variance split into within-cluster, between-cluster and spatial parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    pub tau2: f64,
}

impl VarianceComponents {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_w2 > 0.0
            && self.sigma_b2 >= 0.0
            && self.tau2 >= 0.0
            && self.sigma_w2.is_finite()
            && self.sigma_b2.is_finite()
            && self.tau2.is_finite();
        if !ok {
            return Err(Error::invalid(format!(
                "variance components need sigma_w2 > 0 and sigma_b2, tau2 >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.sigma_w2 + self.sigma_b2 + self.tau2
    }
}

/// Inputs to the sample-size calculation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignTarget {
    pub theta: f64,
    pub power: f64,
    /// Two-sided type I error rate.
    pub alpha: f64,
    pub m: usize,
    pub icc: f64,
}

impl DesignTarget {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power < 1.0) {
            return Err(Error::invalid(format!("power must lie in (0, 1), got {}", self.power)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.theta == 0.0 || !self.theta.is_finite() {
            return Err(Error::invalid("theta must be finite and non-zero for sizing"));
        }
        if self.m == 0 {
            return Err(Error::invalid("cluster size m must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.icc) {
            return Err(Error::invalid(format!("icc must lie in [0, 1), got {}", self.icc)));
        }
        Ok(())
    }
}

/// `sigma_b2 / (sigma_b2 + tau2 + sigma_w2)`.
pub fn icc_from_components(vc: &VarianceComponents) -> Result<f64> {
    let total = vc.total();
    if !(total > 0.0) {
        return Err(Error::invalid("variance components are all zero"));
    }
    if vc.sigma_w2 < 0.0 || vc.sigma_b2 < 0.0 || vc.tau2 < 0.0 {
        return Err(Error::invalid(format!("negative variance component in {vc:?}")));
    }
    Ok(vc.sigma_b2 / total)
}

/// Splits the non-individual variance so that the ICC equals `icc` and a
/// share `f` of it is cluster-level, the rest spatial.
pub fn variance_partition(icc: f64, f: f64, sigma_w2: f64) -> Result<VarianceComponents> {
    if !(sigma_w2 > 0.0) || !sigma_w2.is_finite() {
        return Err(Error::invalid(format!("sigma_w2 must be positive, got {sigma_w2}")));
    }
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid(format!("f must lie in (0, 1], got {f}")));
    }
    if !(0.0..1.0).contains(&icc) {
        return Err(Error::invalid(format!("icc must lie in [0, 1), got {icc}")));
    }
    if icc == 0.0 {
        return Ok(VarianceComponents {
            sigma_w2,
            sigma_b2: 0.0,
            tau2: 0.0,
        });
    }
    let denom = 1.0 / icc - 1.0 / f;
    if !(denom > 0.0) {
        return Err(Error::invalid(format!(
            "constraint 1/icc > 1/f violated (icc = {icc}, f = {f}); sigma_b2 would not be positive"
        )));
    }
    let sigma_b2 = sigma_w2 / denom;
    Ok(VarianceComponents {
        sigma_w2,
        sigma_b2,
        tau2: (1.0 - f) * sigma_b2 / f,
    })
}

/// `1 + (m - 1) icc`.
pub fn design_effect(m: usize, icc: f64) -> f64 {
    1.0 + (m.saturating_sub(1)) as f64 * icc
}

/// Total cluster count across both arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCount {
    /// `ceil(2 n_per_arm / m)`.
    pub raw: usize,
    /// `raw` rounded up to an even number for 1:1 allocation.
    pub even: usize,
}

/// Per-arm individual sample size inflated by the design effect.
pub fn per_arm_sample_size(target: &DesignTarget, sigma_w2: f64) -> Result<f64> {
    target.validate()?;
    if !(sigma_w2 > 0.0) {
        return Err(Error::invalid(format!("sigma_w2 must be positive, got {sigma_w2}")));
    }
    let z = Normal::standard();
    let z_power = z.inverse_cdf(target.power);
    let z_alpha = z.inverse_cdf(1.0 - target.alpha / 2.0);
    let base = 2.0 * sigma_w2 * (z_power + z_alpha).powi(2) / (target.theta * target.theta);
    Ok(base * design_effect(target.m, target.icc))
}

pub fn required_clusters(target: &DesignTarget, sigma_w2: f64) -> Result<ClusterCount> {
    let n = per_arm_sample_size(target, sigma_w2)?;
    let raw = (2.0 * n / target.m as f64).ceil().max(1.0) as usize;
    Ok(ClusterCount {
        raw,
        even: raw + raw % 2,
    })
}

/// True-effect grid `0, 0.1, ..., 1.4`.
pub fn theta_grid() -> Vec<f64> {
    (0..=14).map(|k| k as f64 / 10.0).collect()
}

pub const SCENARIO_LABELS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// The six simulation scenarios: ICC in {0.05, 0.15, 0.25} crossed with
/// range in {1.5, 3.5}, on a 4 x 4 grid of 40-member clusters.
pub fn scenario_table() -> Vec<ScenarioConfig> {
    let iccs = [0.05, 0.15, 0.25];
    let phis = [1.5, 3.5];
    let mut out = Vec::with_capacity(6);
    for (i, &icc) in iccs.iter().enumerate() {
        for (j, &phi) in phis.iter().enumerate() {
            out.push(ScenarioConfig {
                label: SCENARIO_LABELS[2 * i + j].to_string(),
                icc,
                f: 0.5,
                sigma_w2: 2.25,
                phi,
                kernel: KernelFamily::Exponential,
                nu: 0.5,
                grid: GridSpec {
                    rows: 4,
                    cols: 4,
                    cell_size: 1.0,
                },
                m: 40,
                theta: 0.0,
                gamma: 0.1,
                delta: 0.1,
                randomization: Randomization::SimpleOneToOne,
                seed: 0,
            });
        }
    }
    out
}

/// Looks up a scenario by label (case-insensitive).
pub fn scenario(label: &str) -> Result<ScenarioConfig> {
    scenario_table()
        .into_iter()
        .find(|s| s.label.eq_ignore_ascii_case(label))
        .ok_or_else(|| Error::invalid(format!("unknown scenario {label:?}; expected one of A-F")))
}

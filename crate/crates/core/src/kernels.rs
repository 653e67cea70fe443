//! Stationary isotropic correlation functions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::special::bessel_k;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Exponential,
    Matern,
}

/// Correlation function with range `phi` (distance units). `nu` is the
/// Matérn smoothness and is ignored by the exponential family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub phi: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_nu() -> f64 {
    0.5
}

impl KernelSpec {
    pub fn exponential(phi: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Exponential,
            phi,
            nu: 0.5,
        }
    }

    pub fn matern(phi: f64, nu: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Matern,
            phi,
            nu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_phi(self.phi)?;
        if self.family == KernelFamily::Matern {
            check_nu(self.nu)?;
        }
        Ok(())
    }

    /// Correlation at distance `d`; parameters are assumed validated.
    pub fn corr(&self, d: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => (-d / self.phi).exp(),
            KernelFamily::Matern => matern_unchecked(d / self.phi, self.nu),
        }
    }

    /// `out[i] = corr(distances[i])`. The exponential family takes a
    /// branch-free path the compiler can vectorize.
    pub(crate) fn corr_into(&self, distances: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self.family {
            KernelFamily::Exponential => {
                let inv = 1.0 / self.phi;
                out.extend(distances.iter().map(|&d| exp_nonpositive(-d * inv)));
            }
            KernelFamily::Matern => out.extend(distances.iter().map(|&d| self.corr(d))),
        }
    }
}

/// exp(x) for x <= 0, within a few ulp of `f64::exp`. Arguments below -708
/// are clamped, so the result never underflows to a subnormal.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5 * 2^52 rounds to the nearest integer in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    const POW52: f64 = 4_503_599_627_370_496.0;
    let x = x.max(-708.0);
    let k = (x * LOG2E + SHIFTER) - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor to degree 13 on |r| <= ln2/2; truncation error below 2e-16
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // k + 1023 lies in [1, 1023]; its bits sit in the low mantissa of k + 1023 + 2^52
    let biased = (k + 1023.0 + POW52).to_bits() << 52;
    p * f64::from_bits(biased)
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::invalid(format!("range phi must be positive, got {phi}")));
    }
    Ok(())
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("smoothness nu must be positive, got {nu}")));
    }
    Ok(())
}

fn check_distance(d: f64) -> Result<()> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("distance must be non-negative, got {d}")));
    }
    Ok(())
}

/// `exp(-d / phi)`.
pub fn exponential_corr(d: f64, phi: f64) -> Result<f64> {
    check_distance(d)?;
    check_phi(phi)?;
    Ok((-d / phi).exp())
}

/// Matérn correlation `(r^nu K_nu(r)) / (2^(nu-1) Gamma(nu))` with `r = d / phi`,
/// equal to 1 at `d = 0`.
pub fn matern_corr(d: f64, phi: f64, nu: f64) -> Result<f64> {
    check_distance(d)?;
    check_phi(phi)?;
    check_nu(nu)?;
    Ok(matern_unchecked(d / phi, nu))
}

fn matern_unchecked(r: f64, nu: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    // closed forms for the common half-integer orders
    if nu == 0.5 {
        return (-r).exp();
    }
    if nu == 1.5 {
        return (1.0 + r) * (-r).exp();
    }
    if nu == 2.5 {
        return (1.0 + r + r * r / 3.0) * (-r).exp();
    }
    let k = bessel_k(nu, r);
    if k == 0.0 {
        return 0.0;
    }
    let log_c = nu * r.ln() + k.ln() - (nu - 1.0) * std::f64::consts::LN_2 - ln_gamma(nu);
    log_c.exp().min(1.0)
}

/// Dense correlation matrix over `locations`.
pub fn corr_matrix(locations: &[Point], kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    if locations.is_empty() {
        return Err(Error::invalid("correlation matrix needs at least one location"));
    }
    kernel.validate()?;
    let n = locations.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        h[(j, j)] = 1.0;
        for i in j + 1..n {
            let v = kernel.corr(locations[i].distance(&locations[j]));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Packed lower triangle (column-major, diagonal excluded) of pairwise distances.
#[derive(Debug, Clone)]
pub(crate) struct PackedDistances {
    pub n: usize,
    pub values: Vec<f64>,
}

impl PackedDistances {
    pub fn new(locations: &[Point]) -> Self {
        let n = locations.len();
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for j in 0..n {
            for i in j + 1..n {
                values.push(locations[i].distance(&locations[j]));
            }
        }
        PackedDistances { n, values }
    }
}

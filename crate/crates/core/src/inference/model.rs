//! Design matrices and covariance structures per model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::grid::FitSettings;
use super::ModelKind;
use crate::datagen::{aggregate_clusters, TrialData};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Response and design for one model. Columns are
/// `[intercept, z, x.., z:x..]`, followed by cluster dummies for the fixed
/// effects model. The `z:intercept` term would duplicate `z` and is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub labels: Vec<String>,
    /// Rows are cluster means rather than individuals.
    pub cluster_level: bool,
}

fn covariate_labels(k: usize) -> (Vec<String>, Vec<String>) {
    if k == 1 {
        return (vec!["x".into()], vec!["z:x".into()]);
    }
    let main = (1..=k).map(|j| format!("x{j}")).collect::<Vec<_>>();
    let inter = main.iter().map(|m| format!("z:{m}")).collect();
    (main, inter)
}

fn mean_structure(z: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let mut out = DMatrix::zeros(n, 2 + 2 * k);
    for i in 0..n {
        out[(i, 0)] = 1.0;
        out[(i, 1)] = z[i];
        for j in 0..k {
            out[(i, 2 + j)] = x[(i, j)];
            out[(i, 2 + k + j)] = z[i] * x[(i, j)];
        }
    }
    out
}

pub fn build_design(data: &TrialData, kind: ModelKind) -> Result<Design> {
    data.validate()?;
    let k = data.x.ncols();
    let (main, inter) = covariate_labels(k);
    let mut labels: Vec<String> = vec!["intercept".into(), "z".into()];
    labels.extend(main);
    labels.extend(inter);

    if kind == ModelKind::Cluster {
        let agg = aggregate_clusters(data);
        let z: Vec<f64> = agg.z.iter().map(|&t| f64::from(u8::from(t))).collect();
        return Ok(Design {
            x: mean_structure(&z, &agg.xbar),
            y: agg.ybar,
            labels,
            cluster_level: true,
        });
    }

    let z: Vec<f64> = (0..data.n()).map(|i| f64::from(u8::from(data.z(i)))).collect();
    let mut x = mean_structure(&z, &data.x);
    if kind == ModelKind::FM {
        let n_clusters = data.n_clusters();
        let base = x.ncols();
        x = x.resize_horizontally(base + n_clusters - 1, 0.0);
        for i in 0..data.n() {
            let c = data.cluster_of[i];
            if c > 0 {
                x[(i, base + c - 1)] = 1.0;
            }
        }
        labels.extend((2..=n_clusters).map(|c| format!("cluster{c}")));
    }
    Ok(Design {
        x,
        y: data.y.clone(),
        labels,
        cluster_level: false,
    })
}

/// Hyperparameters on log scale. Present fields must match the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// `log sigma_w`, or `log sigma_c` for the cluster-means model.
    pub log_sigma_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_sigma_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_phi: Option<f64>,
}

impl Hyper {
    pub fn validate_for(&self, kind: ModelKind) -> Result<()> {
        let want = (
            matches!(kind, ModelKind::SMM | ModelKind::MM),
            kind == ModelKind::SMM,
            kind == ModelKind::SMM,
        );
        let have = (self.log_sigma_b.is_some(), self.log_tau.is_some(), self.log_phi.is_some());
        if want != have {
            return Err(Error::invalid(format!(
                "hyperparameters {:?} do not match model {kind}",
                self
            )));
        }
        if !self.to_vec().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("hyperparameters must be finite"));
        }
        Ok(())
    }

    /// Values in [`ModelKind::hyper_names`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = vec![self.log_sigma_w];
        out.extend(self.log_sigma_b);
        out.extend(self.log_tau);
        out.extend(self.log_phi);
        out
    }

    pub fn from_vec(kind: ModelKind, v: &[f64]) -> Result<Self> {
        if v.len() != kind.n_hyper() {
            return Err(Error::invalid(format!(
                "model {kind} has {} hyperparameters, got {}",
                kind.n_hyper(),
                v.len()
            )));
        }
        Ok(match kind {
            ModelKind::SMM => Hyper {
                log_sigma_w: v[0],
                log_sigma_b: Some(v[1]),
                log_tau: Some(v[2]),
                log_phi: Some(v[3]),
            },
            ModelKind::MM => Hyper {
                log_sigma_w: v[0],
                log_sigma_b: Some(v[1]),
                log_tau: None,
                log_phi: None,
            },
            _ => Hyper {
                log_sigma_w: v[0],
                log_sigma_b: None,
                log_tau: None,
                log_phi: None,
            },
        })
    }

    /// Internal coordinates: `log sigma_w` followed by the log-ratios of the
    /// other standard deviations to `sigma_w`, then `log phi`.
    pub(crate) fn to_internal(self) -> (f64, Vec<f64>) {
        let l = self.log_sigma_w;
        let mut psi = Vec::new();
        psi.extend(self.log_sigma_b.map(|b| b - l));
        psi.extend(self.log_tau.map(|t| t - l));
        psi.extend(self.log_phi);
        (l, psi)
    }

    pub(crate) fn from_internal(kind: ModelKind, l: f64, psi: &[f64]) -> Self {
        match kind {
            ModelKind::SMM => Hyper {
                log_sigma_w: l,
                log_sigma_b: Some(l + psi[0]),
                log_tau: Some(l + psi[1]),
                log_phi: Some(psi[2]),
            },
            ModelKind::MM => Hyper {
                log_sigma_w: l,
                log_sigma_b: Some(l + psi[0]),
                log_tau: None,
                log_phi: None,
            },
            _ => Hyper {
                log_sigma_w: l,
                log_sigma_b: None,
                log_tau: None,
                log_phi: None,
            },
        }
    }
}

/// Dense marginal covariance of the model's response (fixed effects excluded):
/// `tau^2 H(phi) + sigma_b^2 C'C + sigma_w^2 I` for the spatial model, the
/// cluster and identity parts alone for the others, `sigma_c^2 I` over
/// cluster means.
pub fn build_covariance(
    kind: ModelKind,
    hyper: &Hyper,
    data: &TrialData,
    settings: &FitSettings,
) -> Result<DMatrix<f64>> {
    hyper.validate_for(kind)?;
    data.validate()?;
    let sw2 = (2.0 * hyper.log_sigma_w).exp();
    if kind == ModelKind::Cluster {
        let n = data.n_clusters();
        return Ok(DMatrix::from_diagonal_element(n, n, sw2));
    }
    let n = data.n();
    let mut sigma = DMatrix::from_diagonal_element(n, n, sw2);
    if let Some(lb) = hyper.log_sigma_b {
        let sb2 = (2.0 * lb).exp();
        for j in 0..n {
            for i in 0..n {
                if data.cluster_of[i] == data.cluster_of[j] {
                    sigma[(i, j)] += sb2;
                }
            }
        }
    }
    if let (Some(lt), Some(lp)) = (hyper.log_tau, hyper.log_phi) {
        let tau2 = (2.0 * lt).exp();
        let kernel = KernelSpec {
            family: settings.kernel,
            phi: lp.exp(),
            nu: settings.nu,
        };
        kernel.validate()?;
        for j in 0..n {
            for i in 0..n {
                let d = data.locations[i].distance(&data.locations[j]);
                sigma[(i, j)] += tau2 * kernel.corr(d);
            }
        }
    }
    Ok(sigma)
}

/// Observed covariate means per arm, `(treated, control)`.
pub(crate) fn arm_means(data: &TrialData) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = data.x.ncols();
    let mut sums = [DVector::zeros(k), DVector::zeros(k)];
    let mut counts = [0usize; 2];
    for i in 0..data.n() {
        let arm = usize::from(data.z(i));
        counts[arm] += 1;
        for j in 0..k {
            sums[arm][j] += data.x[(i, j)];
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::invalid("both arms need at least one cluster"));
    }
    let [s0, s1] = sums;
    Ok((s1 / counts[1] as f64, s0 / counts[0] as f64))
}

/// Coefficients `a` with `theta = a' b` for the design's fixed effects `b`:
/// `theta = beta + xbar1' delta + (xbar1 - xbar0)' gamma`.
pub(crate) fn effect_weights(data: &TrialData, design: &Design) -> Result<DVector<f64>> {
    let (x1, x0) = arm_means(data)?;
    let k = data.x.ncols();
    let mut a = DVector::zeros(design.x.ncols());
    a[1] = 1.0;
    for j in 0..k {
        a[2 + j] = x1[j] - x0[j];
        a[2 + k + j] = x1[j];
    }
    Ok(a)
}

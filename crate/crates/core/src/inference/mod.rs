//! The spatial mixed model and its four comparators.
//!
//! Every model has a Gaussian likelihood and Gaussian fixed effects, so the
//! fixed effects integrate out exactly at any hyperparameter value. Only the
//! low-dimensional hyperparameter posterior needs numerics: a mode search on
//! log scale, a curvature estimate, and a small weighted design of points
//! around the mode. Each point carries the exact conditional posterior of the
//! fixed effects, which makes the treatment-effect posterior a finite Gaussian
//! mixture.

mod effect;
mod grid;
mod model;
mod optim;
mod shape;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use effect::{
    credible_interval, marginal_effect, prob_below, prob_exceeds, EffectPosterior, MixtureComponent,
};
pub use grid::{fit, fit_at, fit_with, hyper_posterior, Fit, FitDiagnostics, FitSettings, HyperGrid, HyperPoint};
pub use model::{build_covariance, build_design, Design, Hyper};
pub use optim::{brent_maximize, nelder_mead, NelderMeadResult};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// Cluster effects plus a spatial Gaussian process over individual locations.
    #[serde(rename = "smm")]
    SMM,
    /// Independent individuals, no clustering.
    #[serde(rename = "fm_naive")]
    FMNaive,
    /// Cluster membership as fixed dummy effects with N(0, 1) priors.
    #[serde(rename = "fm")]
    FM,
    /// Exchangeable cluster random intercepts.
    #[serde(rename = "mm")]
    MM,
    /// Linear model on cluster means.
    #[serde(rename = "cluster")]
    Cluster,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::SMM,
        ModelKind::FMNaive,
        ModelKind::FM,
        ModelKind::MM,
        ModelKind::Cluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SMM => "smm",
            ModelKind::FMNaive => "fm_naive",
            ModelKind::FM => "fm",
            ModelKind::MM => "mm",
            ModelKind::Cluster => "cluster",
        }
    }

    /// Hyperparameters on log scale, in storage order.
    pub fn hyper_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::SMM => &["log_sigma_w", "log_sigma_b", "log_tau", "log_phi"],
            ModelKind::MM => &["log_sigma_w", "log_sigma_b"],
            ModelKind::FMNaive | ModelKind::FM => &["log_sigma_w"],
            ModelKind::Cluster => &["log_sigma_c"],
        }
    }

    pub fn n_hyper(self) -> usize {
        self.hyper_names().len()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let key = key.strip_prefix("crt").unwrap_or(&key);
        match key {
            "smm" => Ok(ModelKind::SMM),
            "fmnaive" => Ok(ModelKind::FMNaive),
            "fm" => Ok(ModelKind::FM),
            "mm" => Ok(ModelKind::MM),
            "cluster" => Ok(ModelKind::Cluster),
            _ => Err(Error::invalid(format!(
                "unknown model {s:?}; expected smm, fm_naive, fm, mm or cluster"
            ))),
        }
    }
}

/// Parses a comma-separated model list; `all` selects every model.
pub fn parse_models(list: &str) -> Result<Vec<ModelKind>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(ModelKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let kind: ModelKind = part.parse()?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("model list is empty"));
    }
    Ok(out)
}

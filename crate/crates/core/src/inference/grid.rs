//! Hyperparameter integration: mode search, curvature, and a weighted design
//! of points in the eigen-rotated log-hyperparameter space.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::effect::{marginal_effect, EffectPosterior, MixtureComponent};
use super::model::{build_design, Hyper};
use super::optim::nelder_mead;
use super::shape::Engine;
use super::ModelKind;
use crate::datagen::TrialData;
use crate::error::{Error, Result};
use crate::gaussian::GaussianDist;
use crate::kernels::KernelFamily;
use crate::priors::PriorSpec;

/// Numerical settings of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Correlation family of the spatial model.
    pub kernel: KernelFamily,
    pub nu: f64,
    /// Objective-spread tolerance of the mode search.
    pub ftol: f64,
    pub max_evaluations: usize,
    /// Finite-difference step (log scale) for the curvature.
    pub hessian_step: f64,
    /// Upper bound on the posterior-sd estimate along any principal axis.
    pub max_axis_sd: f64,
    /// Points below this fraction of the largest weight are dropped.
    pub prune_ratio: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            kernel: KernelFamily::Exponential,
            nu: 0.5,
            ftol: 1e-6,
            max_evaluations: 600,
            hessian_step: 0.05,
            max_axis_sd: 1.5,
            prune_ratio: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    #[serde(flatten)]
    pub hyper: Hyper,
    /// Normalized: `exp` of the log weights sums to one over the grid.
    pub log_weight: f64,
    pub log_marginal_likelihood: f64,
    pub log_posterior: f64,
    /// Fixed-effect posterior given this point.
    pub conditional: GaussianDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub kind: ModelKind,
    pub points: Vec<HyperPoint>,
    /// Posterior mode in [`ModelKind::hyper_names`] order.
    pub mode: Vec<f64>,
    pub log_marginal_likelihood_at_mode: f64,
    pub log_posterior_at_mode: f64,
    pub evaluations: usize,
}

impl HyperGrid {
    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.log_weight.exp()).collect()
    }

    pub fn mode_hyper(&self) -> Hyper {
        Hyper::from_vec(self.kind, &self.mode).expect("mode length matches model")
    }

    /// Posterior mean of a log-scale hyperparameter by name.
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        let idx = self.kind.hyper_names().iter().position(|n| *n == name)?;
        Some(self.points.iter().map(|p| p.log_weight.exp() * p.hyper.to_vec()[idx]).sum())
    }

    /// Weighted median of a log-scale hyperparameter by name.
    pub fn median_of(&self, name: &str) -> Option<f64> {
        let idx = self.kind.hyper_names().iter().position(|n| *n == name)?;
        let mut pairs: Vec<(f64, f64)> = self.points.iter().map(|p| (p.hyper.to_vec()[idx], p.log_weight.exp())).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        for (v, w) in &pairs {
            acc += w;
            if acc >= 0.5 {
                return Some(*v);
            }
        }
        pairs.last().map(|p| p.0)
    }
}

/// A fitted model: hyperparameter grid and treatment-effect posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub grid: HyperGrid,
    pub effect: EffectPosterior,
    pub labels: Vec<String>,
}

/// Summary of a fit for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub model: ModelKind,
    pub mode: BTreeMap<String, f64>,
    pub grid_size: usize,
    pub log_marginal_likelihood: f64,
    pub log_posterior: f64,
    pub evaluations: usize,
    pub effect_mean: f64,
    pub effect_sd: f64,
    pub components: Vec<MixtureComponent>,
}

impl Fit {
    pub fn diagnostics(&self) -> FitDiagnostics {
        let g = &self.grid;
        FitDiagnostics {
            model: g.kind,
            mode: g.kind.hyper_names().iter().map(|n| n.to_string()).zip(g.mode.iter().copied()).collect(),
            grid_size: g.points.len(),
            log_marginal_likelihood: g.log_marginal_likelihood_at_mode,
            log_posterior: g.log_posterior_at_mode,
            evaluations: g.evaluations,
            effect_mean: self.effect.mean(),
            effect_sd: self.effect.sd(),
            components: self.effect.components.clone(),
        }
    }
}

fn start_shape(kind: ModelKind, data: &TrialData) -> Vec<f64> {
    match kind {
        // equal variance shares: all log-ratios zero
        ModelKind::MM => vec![0.0],
        ModelKind::SMM => {
            let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for p in &data.locations {
                x0 = x0.min(p.x);
                x1 = x1.max(p.x);
                y0 = y0.min(p.y);
                y1 = y1.max(p.y);
            }
            let half_diag = 0.5 * (x1 - x0).hypot(y1 - y0);
            vec![0.0, 0.0, half_diag.max(1e-3).ln()]
        }
        _ => Vec::new(),
    }
}

fn split(omega: &[f64]) -> (f64, &[f64]) {
    (omega[0], &omega[1..])
}

/// Negative Hessian of the log posterior at `omega` by central differences.
fn neg_hessian(engine: &mut Engine, omega: &[f64], h: f64, f0: f64) -> Result<DMatrix<f64>> {
    let d = omega.len();
    let mut eval = |delta: &[(usize, f64)]| -> Result<f64> {
        let mut w = omega.to_vec();
        for &(i, s) in delta {
            w[i] += s;
        }
        let (l, psi) = split(&w);
        engine.log_post(l, psi)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = eval(&[(i, h)])?;
        let fm = eval(&[(i, -h)])?;
        hess[(i, i)] = -(fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let fpp = eval(&[(i, h), (j, h)])?;
            let fpm = eval(&[(i, h), (j, -h)])?;
            let fmp = eval(&[(i, -h), (j, h)])?;
            let fmm = eval(&[(i, -h), (j, -h)])?;
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Standardized design: full 5-point tensor grid up to two dimensions,
/// otherwise a central composite design (center, axial points at 1 and 2,
/// cube corners at 1).
fn design_points(d: usize) -> Vec<Vec<f64>> {
    let levels = [-2.0, -1.0, 0.0, 1.0, 2.0];
    match d {
        0 => vec![vec![]],
        1 => levels.iter().map(|&a| vec![a]).collect(),
        2 => levels.iter().flat_map(|&a| levels.iter().map(move |&b| vec![a, b])).collect(),
        _ => {
            let mut pts = vec![vec![0.0; d]];
            for i in 0..d {
                for &a in &[-2.0, -1.0, 1.0, 2.0] {
                    let mut p = vec![0.0; d];
                    p[i] = a;
                    pts.push(p);
                }
            }
            for mask in 0..(1usize << d) {
                pts.push((0..d).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect());
            }
            pts
        }
    }
}

struct Candidate {
    hyper: Hyper,
    log_ml: f64,
    log_post: f64,
    conditional: GaussianDist,
}

fn candidate(engine: &mut Engine, kind: ModelKind, omega: &[f64]) -> Result<Candidate> {
    let (l, psi) = split(omega);
    let shape = engine.shape(psi)?;
    let cond = engine.conditional(&shape, l)?;
    let log_post = cond.log_ml + engine.log_prior(l, psi);
    if !log_post.is_finite() {
        return Err(Error::invalid("non-finite log posterior"));
    }
    Ok(Candidate {
        hyper: Hyper::from_internal(kind, l, psi),
        log_ml: cond.log_ml,
        log_post,
        conditional: cond.posterior,
    })
}

fn normalize(kind: ModelKind, cands: Vec<Candidate>, prune_ratio: f64) -> Result<Vec<HyperPoint>> {
    let max = cands.iter().map(|c| c.log_post).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Inference {
            message: format!("no finite grid point for model {kind}"),
            best: Vec::new(),
            objective: max,
        });
    }
    let floor = prune_ratio.ln();
    let kept: Vec<Candidate> = cands.into_iter().filter(|c| c.log_post - max >= floor).collect();
    let log_total = max + kept.iter().map(|c| (c.log_post - max).exp()).sum::<f64>().ln();
    Ok(kept
        .into_iter()
        .map(|c| HyperPoint {
            hyper: c.hyper,
            log_weight: c.log_post - log_total,
            log_marginal_likelihood: c.log_ml,
            log_posterior: c.log_post,
            conditional: c.conditional,
        })
        .collect())
}

fn integrate(kind: ModelKind, data: &TrialData, priors: &PriorSpec, settings: &FitSettings) -> Result<(HyperGrid, Vec<String>)> {
    let design = build_design(data, kind)?;
    let mut engine = Engine::new(kind, &design, data, priors, settings.kernel, settings.nu)?;
    let psi0 = start_shape(kind, data);

    let nm = nelder_mead(
        |psi| engine.profile(psi).map(|(_, v)| v).unwrap_or(f64::NEG_INFINITY),
        &psi0,
        1.0,
        settings.ftol,
        settings.max_evaluations,
    );
    let best_l = engine.profile(&nm.x).map(|(l, _)| l).unwrap_or(f64::NAN);
    if !nm.converged || !nm.value.is_finite() {
        return Err(Error::Inference {
            message: format!(
                "mode search for model {kind} did not converge within {} evaluations",
                settings.max_evaluations
            ),
            best: Hyper::from_internal(kind, best_l, &nm.x).to_vec(),
            objective: nm.value,
        });
    }
    let mut omega = vec![best_l];
    omega.extend_from_slice(&nm.x);
    let f0 = engine.log_post(best_l, &nm.x)?;

    let d = omega.len();
    let prec = neg_hessian(&mut engine, &omega, settings.hessian_step, f0)?;
    let eig = SymmetricEigen::new(prec);
    let min_prec = 1.0 / (settings.max_axis_sd * settings.max_axis_sd);
    let sds: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| if v.is_finite() && v > min_prec { 1.0 / v.sqrt() } else { settings.max_axis_sd })
        .collect();
    let axes = &eig.eigenvectors * DMatrix::from_diagonal(&DVector::from_vec(sds));

    let center = DVector::from_column_slice(&omega);
    let mut cands = Vec::new();
    for z in design_points(d) {
        let pt = &center + &axes * DVector::from_vec(z);
        if let Ok(c) = candidate(&mut engine, kind, pt.as_slice()) {
            cands.push(c);
        }
    }
    let mode_shape = engine.shape(&nm.x)?;
    let log_ml_mode = engine.log_ml(&mode_shape, best_l)?;
    let points = normalize(kind, cands, settings.prune_ratio)?;
    let evaluations = nm.evaluations + engine.dense_factorizations;
    Ok((
        HyperGrid {
            kind,
            points,
            mode: Hyper::from_internal(kind, best_l, &nm.x).to_vec(),
            log_marginal_likelihood_at_mode: log_ml_mode,
            log_posterior_at_mode: f0,
            evaluations,
        },
        design.labels,
    ))
}

/// Hyperparameter posterior with default numerical settings.
pub fn hyper_posterior(kind: ModelKind, data: &TrialData, priors: &PriorSpec) -> Result<HyperGrid> {
    Ok(integrate(kind, data, priors, &FitSettings::default())?.0)
}

pub fn fit(kind: ModelKind, data: &TrialData, priors: &PriorSpec) -> Result<Fit> {
    fit_with(kind, data, priors, &FitSettings::default())
}

pub fn fit_with(kind: ModelKind, data: &TrialData, priors: &PriorSpec, settings: &FitSettings) -> Result<Fit> {
    let (grid, labels) = integrate(kind, data, priors, settings)?;
    let effect = marginal_effect(&grid, data, kind)?;
    Ok(Fit { grid, effect, labels })
}

/// Fit with the hyperparameters pinned at `hyper` (a one-point grid).
pub fn fit_at(kind: ModelKind, data: &TrialData, priors: &PriorSpec, hyper: &Hyper, settings: &FitSettings) -> Result<Fit> {
    hyper.validate_for(kind)?;
    let design = build_design(data, kind)?;
    let mut engine = Engine::new(kind, &design, data, priors, settings.kernel, settings.nu)?;
    let (l, psi) = hyper.to_internal();
    let mut omega = vec![l];
    omega.extend(psi);
    let c = candidate(&mut engine, kind, &omega)?;
    let grid = HyperGrid {
        kind,
        mode: hyper.to_vec(),
        log_marginal_likelihood_at_mode: c.log_ml,
        log_posterior_at_mode: c.log_post,
        evaluations: 1,
        points: vec![HyperPoint {
            hyper: c.hyper,
            log_weight: 0.0,
            log_marginal_likelihood: c.log_ml,
            log_posterior: c.log_post,
            conditional: c.conditional,
        }],
    };
    let effect = marginal_effect(&grid, data, kind)?;
    Ok(Fit { grid, effect, labels: design.labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_trial;
    use crate::design::scenario;
    use crate::gaussian::{chol_factor, gls_posterior, marginal_loglik};
    use crate::inference::build_covariance;

    fn small_trial(label: &str, m: usize, seed: u64) -> TrialData {
        let mut cfg = scenario(label).unwrap();
        cfg.m = m;
        cfg.theta = 0.3;
        generate_trial(&cfg, seed).unwrap()
    }

    fn example_hyper(kind: ModelKind) -> Hyper {
        let all = [0.35, -0.9, -0.7, 0.6];
        Hyper::from_vec(kind, &all[..kind.n_hyper()]).unwrap()
    }

    #[test]
    fn fast_evidence_matches_dense_marginal_likelihood() {
        let t = small_trial("C", 6, 4);
        for kind in ModelKind::ALL {
            let priors = PriorSpec::for_model(kind);
            let hyper = example_hyper(kind);
            let fit = fit_at(kind, &t, &priors, &hyper, &FitSettings::default()).unwrap();
            let design = build_design(&t, kind).unwrap();
            let sigma = build_covariance(kind, &hyper, &t, &FitSettings::default()).unwrap();
            let prior = priors.fixed_effects.to_gaussian(design.x.ncols());
            let dense = marginal_loglik(&design.x, &design.y, &sigma, &prior).unwrap();
            let got = fit.grid.points[0].log_marginal_likelihood;
            assert!((got - dense).abs() < 1e-8 * dense.abs().max(1.0), "{kind}: {got} vs {dense}");
        }
    }

    #[test]
    fn pinned_posterior_matches_conjugate_oracle() {
        let t = small_trial("F", 8, 5);
        for kind in ModelKind::ALL {
            let priors = PriorSpec::for_model(kind);
            let hyper = example_hyper(kind);
            let fit = fit_at(kind, &t, &priors, &hyper, &FitSettings::default()).unwrap();
            let design = build_design(&t, kind).unwrap();
            let sigma = build_covariance(kind, &hyper, &t, &FitSettings::default()).unwrap();
            let prior = priors.fixed_effects.to_gaussian(design.x.ncols());
            let oracle = gls_posterior(&design.x, &design.y, &chol_factor(&sigma).unwrap(), &prior).unwrap();
            let got = &fit.grid.points[0].conditional;
            assert!((&got.mean - &oracle.mean).amax() < 1e-8, "{kind} mean");
            assert!((&got.covariance - &oracle.covariance).amax() < 1e-8, "{kind} covariance");
        }
    }

    #[test]
    fn grid_weights_are_normalized_and_finite() {
        let t = small_trial("B", 10, 6);
        for kind in ModelKind::ALL {
            let g = hyper_posterior(kind, &t, &PriorSpec::for_model(kind)).unwrap();
            let total: f64 = g.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "{kind}: {total}");
            assert!(g.points.iter().all(|p| p.log_marginal_likelihood.is_finite()));
            assert_eq!(g.mode.len(), kind.n_hyper());
            let max_w = g.weights().into_iter().fold(0.0, f64::max);
            assert!(g.weights().iter().all(|&w| w >= 1e-6 * max_w));
        }
    }

    #[test]
    fn mode_maximizes_posterior_locally() {
        let t = small_trial("E", 10, 7);
        let kind = ModelKind::MM;
        let priors = PriorSpec::standard();
        let g = hyper_posterior(kind, &t, &priors).unwrap();
        let at = |v: &[f64]| fit_at(kind, &t, &priors, &Hyper::from_vec(kind, v).unwrap(), &FitSettings::default()).unwrap().grid.log_posterior_at_mode;
        let f0 = at(&g.mode);
        for i in 0..2 {
            for s in [-0.05, 0.05] {
                let mut v = g.mode.clone();
                v[i] += s;
                assert!(at(&v) < f0 + 1e-6);
            }
        }
    }

    #[test]
    fn design_sizes() {
        assert_eq!(design_points(1).len(), 5);
        assert_eq!(design_points(2).len(), 25);
        assert_eq!(design_points(4).len(), 1 + 16 + 16);
    }

    #[test]
    fn diagnostics_serialize() {
        let t = small_trial("A", 5, 8);
        let f = fit(ModelKind::MM, &t, &PriorSpec::standard()).unwrap();
        let d = f.diagnostics();
        assert_eq!(d.grid_size, f.grid.points.len());
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("log_sigma_b"));
        let back: FitDiagnostics = serde_json::from_str(&json).unwrap();
        assert_eq!(back.model, ModelKind::MM);
    }

    #[test]
    fn non_convergence_reports_best_point() {
        let t = small_trial("A", 5, 9);
        let settings = FitSettings { max_evaluations: 3, ..FitSettings::default() };
        match fit_with(ModelKind::SMM, &t, &PriorSpec::standard(), &settings) {
            Err(Error::Inference { best, objective, .. }) => {
                assert_eq!(best.len(), 4);
                assert!(objective.is_finite());
            }
            other => panic!("expected inference error, got {other:?}"),
        }
    }
}

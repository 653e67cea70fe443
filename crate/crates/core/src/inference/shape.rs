//! Likelihood engine. With `Sigma = sigma_w^2 R(psi)` the fixed-effect
//! integral depends on the data only through
//! `log|R|, X'R^-1 X, X'R^-1 r0, r0'R^-1 r0` (`r0 = y - X m0`), so those are
//! computed once per shape vector `psi` and reused for every `sigma_w`.

use std::collections::HashMap;
use std::rc::Rc;

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{MatMut, MatRef, Par};
use nalgebra::{DMatrix, DVector};

use super::model::Design;
use super::ModelKind;
use crate::datagen::TrialData;
use crate::error::{Error, Result};
use crate::gaussian::{chol_factor, factor_in_place, symmetrize, GaussianDist, JITTER_SCALE};
use crate::kernels::{KernelFamily, KernelSpec, PackedDistances};
use crate::priors::PriorSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub(crate) struct ShapeSummary {
    pub log_det_r: f64,
    pub g: DMatrix<f64>,
    pub xr: DVector<f64>,
    pub rr: f64,
}

impl ShapeSummary {
    fn from_whitened(x: &DMatrix<f64>, r: &DVector<f64>, log_det_r: f64) -> Self {
        let mut g = x.transpose() * x;
        symmetrize(&mut g);
        ShapeSummary {
            log_det_r,
            g,
            xr: x.transpose() * r,
            rr: r.norm_squared(),
        }
    }
}

/// Conditional fixed-effect posterior and evidence at one hyperparameter value.
#[derive(Debug, Clone)]
pub(crate) struct Conditional {
    pub log_ml: f64,
    pub posterior: GaussianDist,
}

enum Structure {
    /// `R = I`.
    Identity(Rc<ShapeSummary>),
    /// `R = I + e^{2b} C'C`, block diagonal with one block per cluster.
    Exchangeable {
        base: Rc<ShapeSummary>,
        sizes: Vec<f64>,
        col_sums: Vec<DVector<f64>>,
        r_sums: Vec<f64>,
    },
    /// `R = I + e^{2b} C'C + e^{2t} H(e^p)`, dense.
    Spatial(Box<SpatialState>),
}

struct SpatialState {
    distances: PackedDistances,
    cluster_of: Vec<usize>,
    kernel: KernelFamily,
    nu: f64,
    /// `[X | r0]`.
    rhs: DMatrix<f64>,
    work: DMatrix<f64>,
    whitened: DMatrix<f64>,
    corr_phi: f64,
    corr: Vec<f64>,
}

pub(crate) struct Engine {
    pub kind: ModelKind,
    n: usize,
    k: usize,
    prior_mean: f64,
    prior_var: f64,
    priors: PriorSpec,
    structure: Structure,
    cache: HashMap<Vec<u64>, Rc<ShapeSummary>>,
    pub dense_factorizations: usize,
}

impl Engine {
    pub fn new(kind: ModelKind, design: &Design, data: &TrialData, priors: &PriorSpec, kernel: KernelFamily, nu: f64) -> Result<Self> {
        priors.validate()?;
        let x = &design.x;
        let (n, k) = x.shape();
        let m0 = DVector::from_element(k, priors.fixed_effects.mean);
        let r0 = &design.y - x * m0;
        let base = Rc::new(ShapeSummary::from_whitened(x, &r0, 0.0));
        let structure = match kind {
            ModelKind::FMNaive | ModelKind::FM | ModelKind::Cluster => Structure::Identity(base),
            ModelKind::MM => {
                let n_clusters = data.n_clusters();
                let mut sizes = vec![0.0; n_clusters];
                let mut col_sums = vec![DVector::zeros(k); n_clusters];
                let mut r_sums = vec![0.0; n_clusters];
                for i in 0..n {
                    let c = data.cluster_of[i];
                    sizes[c] += 1.0;
                    r_sums[c] += r0[i];
                    for j in 0..k {
                        col_sums[c][j] += x[(i, j)];
                    }
                }
                Structure::Exchangeable { base, sizes, col_sums, r_sums }
            }
            ModelKind::SMM => {
                KernelSpec { family: kernel, phi: 1.0, nu }.validate()?;
                let mut rhs = DMatrix::zeros(n, k + 1);
                rhs.columns_mut(0, k).copy_from(x);
                rhs.set_column(k, &r0);
                Structure::Spatial(Box::new(SpatialState {
                    distances: PackedDistances::new(&data.locations),
                    cluster_of: data.cluster_of.clone(),
                    kernel,
                    nu,
                    whitened: rhs.clone(),
                    rhs,
                    work: DMatrix::zeros(n, n),
                    corr_phi: f64::NAN,
                    corr: Vec::new(),
                }))
            }
        };
        Ok(Engine {
            kind,
            n,
            k,
            prior_mean: priors.fixed_effects.mean,
            prior_var: priors.fixed_effects.variance,
            priors: *priors,
            structure,
            cache: HashMap::new(),
            dense_factorizations: 0,
        })
    }

    pub fn n_shape(&self) -> usize {
        match self.kind {
            ModelKind::SMM => 3,
            ModelKind::MM => 1,
            _ => 0,
        }
    }

    pub fn shape(&mut self, psi: &[f64]) -> Result<Rc<ShapeSummary>> {
        if psi.len() != self.n_shape() {
            return Err(Error::invalid(format!("shape vector has length {}, expected {}", psi.len(), self.n_shape())));
        }
        if !psi.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("shape parameters must be finite"));
        }
        let key: Vec<u64> = psi.iter().map(|v| v.to_bits()).collect();
        if let Some(s) = self.cache.get(&key) {
            return Ok(Rc::clone(s));
        }
        let summary = match &mut self.structure {
            Structure::Identity(base) => Rc::clone(base),
            Structure::Exchangeable { base, sizes, col_sums, r_sums } => {
                let a = (2.0 * psi[0]).exp();
                if !a.is_finite() {
                    return Err(Error::invalid("cluster variance ratio overflowed"));
                }
                let mut g = base.g.clone();
                let mut xr = base.xr.clone();
                let mut rr = base.rr;
                let mut log_det = 0.0;
                for c in 0..sizes.len() {
                    let m = sizes[c];
                    if m == 0.0 {
                        continue;
                    }
                    // (I + a 11')^-1 = I - a / (1 + m a) 11'
                    let w = a / (1.0 + m * a);
                    g.ger(-w, &col_sums[c], &col_sums[c], 1.0);
                    xr.axpy(-w * r_sums[c], &col_sums[c], 1.0);
                    rr -= w * r_sums[c] * r_sums[c];
                    log_det += (m * a).ln_1p();
                }
                symmetrize(&mut g);
                Rc::new(ShapeSummary { log_det_r: log_det, g, xr, rr })
            }
            Structure::Spatial(state) => {
                self.dense_factorizations += 1;
                Rc::new(state.summary(psi, self.k)?)
            }
        };
        self.cache.insert(key, Rc::clone(&summary));
        Ok(summary)
    }

    /// Evidence and conditional posterior at `sigma_w = e^l`.
    pub fn conditional(&self, shape: &ShapeSummary, l: f64) -> Result<Conditional> {
        let (log_ml, p_chol, c) = self.evidence_parts(shape, l)?;
        let shift = p_chol.solve(&c);
        let mean = DVector::from_element(self.k, self.prior_mean) + shift;
        Ok(Conditional {
            log_ml,
            posterior: GaussianDist {
                mean,
                covariance: p_chol.inverse(),
            },
        })
    }

    pub fn log_ml(&self, shape: &ShapeSummary, l: f64) -> Result<f64> {
        Ok(self.evidence_parts(shape, l)?.0)
    }

    fn evidence_parts(&self, shape: &ShapeSummary, l: f64) -> Result<(f64, crate::gaussian::CholFactor, DVector<f64>)> {
        let s2 = (2.0 * l).exp();
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::invalid("sigma_w out of floating-point range"));
        }
        let mut p = &shape.g / s2;
        for j in 0..self.k {
            p[(j, j)] += 1.0 / self.prior_var;
        }
        let p_chol = chol_factor(&p)?;
        let c = &shape.xr / s2;
        let quad = shape.rr / s2 - p_chol.whiten(&c).norm_squared();
        let n = self.n as f64;
        let log_ml = -0.5
            * (n * LN_2PI
                + 2.0 * n * l
                + shape.log_det_r
                + self.k as f64 * self.prior_var.ln()
                + p_chol.log_det()
                + quad);
        Ok((log_ml, p_chol, c))
    }

    /// Log prior density of the log-scale hyperparameters, Jacobians included.
    pub fn log_prior(&self, l: f64, psi: &[f64]) -> f64 {
        let sd_term = |log_sd: f64, rate: f64| rate.ln() - rate * log_sd.exp() + log_sd;
        let rates = &self.priors.sd_rates;
        let mut lp = sd_term(l, rates.sigma_w);
        match self.kind {
            ModelKind::MM => lp += sd_term(l + psi[0], rates.sigma_b),
            ModelKind::SMM => {
                lp += sd_term(l + psi[0], rates.sigma_b);
                lp += sd_term(l + psi[1], rates.tau);
                let p = psi[2];
                let lam = self.priors.range_rate;
                lp += lam.ln() - 2.0 * p - lam * (-p).exp() + p;
            }
            _ => {}
        }
        lp
    }

    pub fn log_post(&mut self, l: f64, psi: &[f64]) -> Result<f64> {
        let shape = self.shape(psi)?;
        Ok(self.log_ml(&shape, l)? + self.log_prior(l, psi))
    }

    /// Maximizes the log posterior over `l` at fixed `psi`: `(l*, value)`.
    pub fn profile(&mut self, psi: &[f64]) -> Result<(f64, f64)> {
        let shape = self.shape(psi)?;
        let center = 0.5 * (shape.rr.max(1e-300) / self.n as f64).ln();
        let (mut lo, mut hi) = (center - 8.0, center + 3.0);
        for _ in 0..6 {
            let (l, v, _) = super::optim::brent_maximize(
                |l| match self.log_ml(&shape, l) {
                    Ok(ml) => ml + self.log_prior(l, psi),
                    Err(_) => f64::NEG_INFINITY,
                },
                lo,
                hi,
                1e-10,
                200,
            );
            if !v.is_finite() {
                return Err(Error::invalid("log posterior is not finite along sigma_w"));
            }
            let width = hi - lo;
            if l - lo < 1e-6 * width {
                lo -= width;
                hi -= 0.5 * width;
            } else if hi - l < 1e-6 * width {
                hi += width;
                lo += 0.5 * width;
            } else {
                return Ok((l, v));
            }
        }
        Err(Error::invalid("sigma_w profile maximum not bracketed"))
    }
}

impl SpatialState {
    fn summary(&mut self, psi: &[f64], k: usize) -> Result<ShapeSummary> {
        let a = (2.0 * psi[0]).exp();
        let c = (2.0 * psi[1]).exp();
        let phi = psi[2].exp();
        if !(a.is_finite() && c.is_finite() && phi.is_finite() && phi > 0.0) {
            return Err(Error::invalid("spatial shape parameters out of floating-point range"));
        }
        if phi.to_bits() != self.corr_phi.to_bits() {
            let kernel = KernelSpec { family: self.kernel, phi, nu: self.nu };
            kernel.corr_into(&self.distances.values, &mut self.corr);
            self.corr_phi = phi;
        }
        let n = self.distances.n;
        let log_det = match self.fill_and_factor(a, c, 0.0) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite { .. }) => {
                let jitter = JITTER_SCALE * (1.0 + a + c);
                self.fill_and_factor(a, c, jitter)?
            }
            Err(e) => return Err(e),
        };
        self.whitened.copy_from(&self.rhs);
        {
            let l = MatRef::from_column_major_slice(self.work.as_slice(), n, n);
            let rhs = MatMut::from_column_major_slice_mut(self.whitened.as_mut_slice(), n, k + 1);
            solve_lower_triangular_in_place(l, rhs, Par::Seq);
        }
        let wx = self.whitened.columns(0, k).into_owned();
        let wr = self.whitened.column(k).into_owned();
        Ok(ShapeSummary::from_whitened(&wx, &wr, log_det))
    }

    fn fill_and_factor(&mut self, a: f64, c: f64, jitter: f64) -> Result<f64> {
        let n = self.distances.n;
        let diag = 1.0 + a + c + jitter;
        let buf = self.work.as_mut_slice();
        let mut idx = 0;
        for j in 0..n {
            let col = &mut buf[j * n..(j + 1) * n];
            col[j] = diag;
            let cj = self.cluster_of[j];
            for i in j + 1..n {
                let same = if self.cluster_of[i] == cj { a } else { 0.0 };
                col[i] = c * self.corr[idx] + same;
                idx += 1;
            }
        }
        factor_in_place(&mut self.work)
    }
}

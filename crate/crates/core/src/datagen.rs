//! Synthetic trials: randomization, covariates, and the cluster, spatial and
//! individual noise components of the outcome.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{variance_partition, VarianceComponents};
use crate::error::{Error, Result};
use crate::gaussian::{chol_factor_jittered, mvn_sample};
use crate::geometry::{grid_layout, sample_locations, ClusterRegions, Point};
use crate::kernels::{corr_matrix, KernelFamily, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Randomization {
    /// Uniformly random half of the clusters treated.
    SimpleOneToOne,
    /// Alternating arms by grid parity; which parity is treated is random.
    Checkerboard,
}

impl Default for Randomization {
    fn default() -> Self {
        Randomization::SimpleOneToOne
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
}

fn default_cell_size() -> f64 {
    1.0
}

fn default_nu() -> f64 {
    0.5
}

fn default_effect() -> f64 {
    0.1
}

/// Complete description of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub label: String,
    pub icc: f64,
    /// Share of the non-individual variance that is cluster-level.
    pub f: f64,
    pub sigma_w2: f64,
    pub phi: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelFamily,
    #[serde(default = "default_nu")]
    pub nu: f64,
    pub grid: GridSpec,
    pub m: usize,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_effect")]
    pub gamma: f64,
    #[serde(default = "default_effect")]
    pub delta: f64,
    #[serde(default)]
    pub randomization: Randomization,
    #[serde(default)]
    pub seed: u64,
}

fn default_kernel() -> KernelFamily {
    KernelFamily::Exponential
}

impl ScenarioConfig {
    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            family: self.kernel,
            phi: self.phi,
            nu: self.nu,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.grid.rows * self.grid.cols
    }

    pub fn components(&self) -> Result<VarianceComponents> {
        variance_partition(self.icc, self.f, self.sigma_w2)
    }

    pub fn regions(&self) -> Result<ClusterRegions> {
        grid_layout(self.grid.rows, self.grid.cols, self.grid.cell_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.regions()?;
        self.components()?;
        self.kernel_spec().validate()?;
        if self.m == 0 {
            return Err(Error::invalid("cluster size m must be at least 1"));
        }
        if self.n_clusters() % 2 != 0 {
            return Err(Error::invalid(format!(
                "{} clusters cannot be split 1:1 between arms",
                self.n_clusters()
            )));
        }
        for (name, v) in [("theta", self.theta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Cluster effects, spatial field and individual noise behind one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub eps: DVector<f64>,
}

/// One generated trial. Rows are grouped by cluster in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub locations: Vec<Point>,
    pub cluster_of: Vec<usize>,
    /// Treatment indicator per cluster.
    pub z_cluster: Vec<bool>,
    /// `N x K` covariates without an intercept column.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub latent: Option<Latent>,
}

impl TrialData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.z_cluster.len()
    }

    /// Treatment indicator of individual `i`.
    pub fn z(&self, i: usize) -> bool {
        self.z_cluster[self.cluster_of[i]]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &c in &self.cluster_of {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.locations.len() != n || self.cluster_of.len() != n || self.x.nrows() != n {
            return Err(Error::invalid("trial columns have inconsistent lengths"));
        }
        if n == 0 {
            return Err(Error::invalid("trial has no individuals"));
        }
        if let Some(&c) = self.cluster_of.iter().find(|&&c| c >= self.n_clusters()) {
            return Err(Error::invalid(format!("cluster index {c} out of range")));
        }
        Ok(())
    }

    /// Flat table: `id, cluster, sx, sy, z, x (or x1..xK), y` plus `u, w, eps`
    /// when latent components are stored.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let k = self.x.ncols();
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["id", "cluster", "sx", "sy", "z"].iter().map(|s| s.to_string()).collect();
        if k == 1 {
            header.push("x".into());
        } else {
            header.extend((1..=k).map(|j| format!("x{j}")));
        }
        header.push("y".into());
        if self.latent.is_some() {
            header.extend(["u", "w", "eps"].iter().map(|s| s.to_string()));
        }
        out.write_record(&header)?;
        for i in 0..self.n() {
            let c = self.cluster_of[i];
            let mut row = vec![
                i.to_string(),
                c.to_string(),
                self.locations[i].x.to_string(),
                self.locations[i].y.to_string(),
                u8::from(self.z(i)).to_string(),
            ];
            row.extend((0..k).map(|j| self.x[(i, j)].to_string()));
            row.push(self.y[i].to_string());
            if let Some(l) = &self.latent {
                row.extend([l.u[c].to_string(), l.w[i].to_string(), l.eps[i].to_string()]);
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Treatment indicators for `n_clusters` clusters laid out as `regions`.
pub fn randomize_clusters<R: Rng + ?Sized>(
    n_clusters: usize,
    scheme: Randomization,
    regions: &ClusterRegions,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if n_clusters == 0 || n_clusters % 2 != 0 {
        return Err(Error::invalid(format!(
            "1:1 allocation needs a positive even cluster count, got {n_clusters}"
        )));
    }
    if regions.len() != n_clusters {
        return Err(Error::invalid(format!(
            "{n_clusters} clusters but the layout has {} cells",
            regions.len()
        )));
    }
    let mut z = vec![false; n_clusters];
    match scheme {
        Randomization::SimpleOneToOne => {
            for i in sample(rng, n_clusters, n_clusters / 2) {
                z[i] = true;
            }
        }
        Randomization::Checkerboard => {
            let parity = usize::from(rng.gen::<bool>());
            for (i, zi) in z.iter_mut().enumerate() {
                let (r, c) = regions.row_col(i);
                *zi = (r + c) % 2 == parity;
            }
        }
    }
    Ok(z)
}

/// Draws one trial. All randomness comes from `replicate_seed`.
pub fn generate_trial(cfg: &ScenarioConfig, replicate_seed: u64) -> Result<TrialData> {
    cfg.validate()?;
    let vc = cfg.components()?;
    let regions = cfg.regions()?;
    let n_clusters = regions.len();
    let mut rng = ChaCha20Rng::seed_from_u64(replicate_seed);

    let z_cluster = randomize_clusters(n_clusters, cfg.randomization, &regions, &mut rng)?;
    let grouped = sample_locations(&regions, cfg.m, &mut rng)?;
    let locations: Vec<Point> = grouped.into_iter().flatten().collect();
    let cluster_of: Vec<usize> = (0..n_clusters).flat_map(|c| std::iter::repeat(c).take(cfg.m)).collect();
    let n = locations.len();

    let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));

    let u = normal_vector(n_clusters, vc.sigma_b2, &mut rng);

    let w = if vc.tau2 > 0.0 {
        let mut cov = corr_matrix(&locations, &cfg.kernel_spec())?;
        cov *= vc.tau2;
        let chol = chol_factor_jittered(&cov).map_err(|e| {
            Error::Generation(format!("spatial covariance factorization failed: {e}"))
        })?;
        mvn_sample(&DVector::zeros(n), &chol, &mut rng)?
    } else {
        DVector::zeros(n)
    };

    let eps = normal_vector(n, vc.sigma_w2, &mut rng);

    let y = DVector::from_fn(n, |i, _| {
        let c = cluster_of[i];
        let zi = if z_cluster[c] { 1.0 } else { 0.0 };
        let xi = x[(i, 0)];
        cfg.theta * zi + cfg.gamma * xi + cfg.delta * zi * xi + u[c] + w[i] + eps[i]
    });

    Ok(TrialData {
        locations,
        cluster_of,
        z_cluster,
        x,
        y,
        latent: Some(Latent { u, w, eps }),
    })
}

fn normal_vector<R: Rng + ?Sized>(n: usize, variance: f64, rng: &mut R) -> DVector<f64> {
    // variance 0 still consumes draws so the stream layout does not depend on it
    let sd = variance.sqrt();
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    DVector::from_fn(n, |_, _| sd * dist.sample(rng))
}

/// Per-cluster means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMeans {
    pub ybar: DVector<f64>,
    pub xbar: DMatrix<f64>,
    pub z: Vec<bool>,
}

pub fn aggregate_clusters(data: &TrialData) -> ClusterMeans {
    let n_clusters = data.n_clusters();
    let k = data.x.ncols();
    let mut ybar = DVector::zeros(n_clusters);
    let mut xbar = DMatrix::zeros(n_clusters, k);
    let mut counts = vec![0usize; n_clusters];
    for i in 0..data.n() {
        let c = data.cluster_of[i];
        counts[c] += 1;
        ybar[c] += data.y[i];
        for j in 0..k {
            xbar[(c, j)] += data.x[(i, j)];
        }
    }
    for c in 0..n_clusters {
        let cnt = counts[c].max(1) as f64;
        ybar[c] /= cnt;
        for j in 0..k {
            xbar[(c, j)] /= cnt;
        }
    }
    ClusterMeans {
        ybar,
        xbar,
        z: data.z_cluster.clone(),
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Replicate seed from `(study seed, scenario label, theta index, replicate)`:
/// FNV-1a over the label bytes, then splitmix64 chaining. Platform independent.
pub fn derive_seed(study_seed: u64, label: &str, theta_index: usize, replicate: usize) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut s = splitmix64(study_seed ^ h);
    s = splitmix64(s ^ theta_index as u64);
    splitmix64(s ^ replicate as u64)
}

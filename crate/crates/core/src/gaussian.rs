//! Dense Gaussian numerics: Cholesky factors, multivariate normal density and
//! sampling, conjugate updates for linear-Gaussian fixed effects.
//!
//! All solves go through the Cholesky factor with triangular solves. The
//! factorization itself runs sequentially through `faer` so results do not
//! depend on thread scheduling.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch, LltRegularization};
use faer::{MatMut, Par};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative pivot threshold: a squared pivot at or below this fraction of the
/// largest diagonal entry counts as a failure.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Jitter added once, relative to the mean diagonal, when a factorization fails.
pub const JITTER_SCALE: f64 = 1e-8;

/// Lower-triangular Cholesky factor `L` with `A = L L'`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `L^{-1} b`.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L^{-1} B` for a block of columns.
    pub fn whiten_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = self.whiten(b);
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.whiten_mat(b);
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `r' A^{-1} r`.
    pub fn quad_form(&self, r: &DVector<f64>) -> f64 {
        self.whiten(r).norm_squared()
    }

    /// `A^{-1}`, formed explicitly. Meant for small matrices.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = self.solve_mat(&DMatrix::identity(n, n));
        symmetrize(&mut inv);
        inv
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Factors `a` in place, reading only its lower triangle. On success the
/// lower triangle holds `L`, the strict upper triangle is zeroed, and the
/// log-determinant is returned.
pub(crate) fn factor_in_place(a: &mut DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::invalid(format!(
            "Cholesky needs a non-empty square matrix, got {} x {}",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    {
        let view = MatMut::from_column_major_slice_mut(a.as_mut_slice(), n, n);
        let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, Par::Seq, Default::default()));
        let stack = MemStack::new(&mut buf);
        cholesky_in_place(view, LltRegularization::default(), Par::Seq, stack, Default::default())
            .map_err(|e| match e {
                faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
                    Error::NotPositiveDefinite { pivot: index }
                }
            })?;
    }
    let threshold = (PIVOT_TOLERANCE * max_diag).sqrt();
    let mut log_det = 0.0;
    for j in 0..n {
        let d = a[(j, j)];
        if !(d > threshold) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        log_det += d.ln();
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(2.0 * log_det)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn chol_factor(a: &DMatrix<f64>) -> Result<CholFactor> {
    check_symmetric(a)?;
    let mut lower = a.clone();
    let log_det = factor_in_place(&mut lower)?;
    Ok(CholFactor { lower, log_det })
}

/// Like [`chol_factor`], but on failure retries once with
/// `JITTER_SCALE * mean(diag)` added to the diagonal.
pub fn chol_factor_jittered(a: &DMatrix<f64>) -> Result<CholFactor> {
    match chol_factor(a) {
        Err(Error::NotPositiveDefinite { .. }) => {
            let n = a.nrows();
            let jitter = JITTER_SCALE * a.diagonal().mean();
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            chol_factor(&b)
        }
        other => other,
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid(format!("matrix is {} x {}, not square", n, a.ncols())));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for j in 0..n {
        for i in j + 1..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Multivariate normal with dense covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::invalid(format!(
                "mean has length {} but covariance is {} x {}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(GaussianDist { mean, covariance })
    }

    /// Independent coordinates with common mean and variance.
    pub fn isotropic(dim: usize, mean: f64, variance: f64) -> Self {
        GaussianDist {
            mean: DVector::from_element(dim, mean),
            covariance: DMatrix::from_diagonal_element(dim, dim, variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// `log N(y; mu, L L')`.
pub fn mvn_logpdf(y: &DVector<f64>, mu: &DVector<f64>, chol: &CholFactor) -> Result<f64> {
    check_len("y", y.len(), chol.dim())?;
    check_len("mu", mu.len(), chol.dim())?;
    let r = y - mu;
    let quad = chol.quad_form(&r);
    Ok(-0.5 * (chol.dim() as f64 * LN_2PI + chol.log_det() + quad))
}

/// `mu + L z` with `z` standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(
    mu: &DVector<f64>,
    chol: &CholFactor,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_len("mu", mu.len(), chol.dim())?;
    let z = DVector::from_iterator(mu.len(), (0..mu.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(mu + chol.lower() * z)
}

/// Conjugate posterior of `b` in `y ~ N(X b, Sigma)`, `b ~ prior`.
pub fn gls_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_chol: &CholFactor,
    prior: &GaussianDist,
) -> Result<GaussianDist> {
    check_len("y", y.len(), sigma_chol.dim())?;
    check_len("design rows", x.nrows(), sigma_chol.dim())?;
    check_len("design columns", x.ncols(), prior.dim())?;
    let prior_chol = chol_factor(&prior.covariance)?;
    let prior_precision = prior_chol.inverse();

    let wx = sigma_chol.whiten_mat(x);
    let wy = sigma_chol.whiten(y);
    let mut precision = wx.transpose() * &wx + &prior_precision;
    symmetrize(&mut precision);
    let rhs = wx.transpose() * wy + &prior_precision * &prior.mean;

    let post_chol = chol_factor(&precision)?;
    let mean = post_chol.solve(&rhs);
    Ok(GaussianDist {
        mean,
        covariance: post_chol.inverse(),
    })
}

/// `log p(y)` with `b ~ prior` integrated out: `log N(y; X m0, Sigma + X V0 X')`.
pub fn marginal_loglik(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma: &DMatrix<f64>,
    prior: &GaussianDist,
) -> Result<f64> {
    check_len("y", y.len(), sigma.nrows())?;
    check_len("design rows", x.nrows(), sigma.nrows())?;
    check_len("design columns", x.ncols(), prior.dim())?;
    let mut total = sigma + x * &prior.covariance * x.transpose();
    symmetrize(&mut total);
    let chol = chol_factor(&total)?;
    mvn_logpdf(y, &(x * &prior.mean), &chol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_spd(n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &b * b.transpose() + DMatrix::identity(n, n)
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_vector(n: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Explicit-inverse multivariate normal log density.
    fn naive_logpdf(y: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        let n = y.len() as f64;
        let inv = sigma.clone().try_inverse().unwrap();
        let r = y - mu;
        let quad = (r.transpose() * inv * &r)[(0, 0)];
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + quad)
    }

    fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_factor() {
        let c = chol_factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(c.lower(), &DMatrix::identity(3, 3));
        assert_eq!(c.log_det(), 0.0);
    }

    #[test]
    fn two_by_two_by_hand() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let c = chol_factor(&a).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert!((c.lower() - want).amax() < 1e-15);
        assert!((c.log_det() - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn random_spd_reconstruction() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = random_spd(50, &mut rng);
        let c = chol_factor(&a).unwrap();
        assert!(rel_frobenius(&c.reconstruct(), &a) < 1e-10);
        let diag_sum: f64 = c.lower().diagonal().iter().map(|d| d.ln()).sum();
        assert!((c.log_det() - 2.0 * diag_sum).abs() < 1e-12);
    }

    #[test]
    fn non_positive_definite_reports_pivot() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        match chol_factor(&a) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
            other => panic!("expected failure, got {other:?}"),
        }
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(chol_factor(&neg), Err(Error::NotPositiveDefinite { pivot: 1 })));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(chol_factor(&asym), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let ones = DMatrix::from_element(3, 3, 1.0);
        assert!(chol_factor(&ones).is_err());
        let c = chol_factor_jittered(&ones).unwrap();
        assert!(rel_frobenius(&c.reconstruct(), &ones) < 1e-7);
    }

    #[test]
    fn logpdf_small_cases() {
        let one = chol_factor(&DMatrix::identity(1, 1)).unwrap();
        let v = mvn_logpdf(&DVector::zeros(1), &DVector::zeros(1), &one).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-15);
        let two = chol_factor(&DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.0]);
        let v = mvn_logpdf(&y, &y, &two).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!(mvn_logpdf(&DVector::zeros(3), &DVector::zeros(2), &two).is_err());
    }

    #[test]
    fn logpdf_matches_explicit_inverse() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for n in [1, 2, 5, 8, 17, 32] {
            let sigma = random_spd(n, &mut rng);
            let y = random_vector(n, &mut rng);
            let mu = random_vector(n, &mut rng);
            let got = mvn_logpdf(&y, &mu, &chol_factor(&sigma).unwrap()).unwrap();
            let want = naive_logpdf(&y, &mu, &sigma);
            assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn sampling_degenerate_and_deterministic() {
        let mu = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let tiny = chol_factor(&DMatrix::from_diagonal_element(3, 3, 1e-12)).unwrap();
        let s = mvn_sample(&mu, &tiny, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        assert!((s - &mu).amax() < 1e-5);

        let c = chol_factor(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let m2 = DVector::zeros(2);
        let a = mvn_sample(&m2, &c, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        let b = mvn_sample(&m2, &c, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_covariance_matches_target() {
        let target = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let c = chol_factor(&target).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let n = 10_000;
        let mu = DVector::zeros(2);
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        let mut mean = DVector::<f64>::zeros(2);
        let draws: Vec<_> = (0..n).map(|_| mvn_sample(&mu, &c, &mut rng).unwrap()).collect();
        for d in &draws {
            mean += d;
        }
        mean /= n as f64;
        for d in &draws {
            let r = d - &mean;
            acc += &r * r.transpose();
        }
        acc /= (n - 1) as f64;
        assert!((acc - target).amax() < 0.05);
    }

    /// Posterior from explicit inverses.
    fn naive_gls(x: &DMatrix<f64>, y: &DVector<f64>, sigma: &DMatrix<f64>, prior: &GaussianDist) -> GaussianDist {
        let si = sigma.clone().try_inverse().unwrap();
        let vi = prior.covariance.clone().try_inverse().unwrap();
        let p = x.transpose() * &si * x + &vi;
        let cov = p.try_inverse().unwrap();
        let mean = &cov * (x.transpose() * &si * y + &vi * &prior.mean);
        GaussianDist { mean, covariance: cov }
    }

    #[test]
    fn gls_limits() {
        let y = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let x = DMatrix::identity(3, 3);
        let sigma = chol_factor(&DMatrix::identity(3, 3)).unwrap();
        let flat = GaussianDist::isotropic(3, 0.0, 1e12);
        let post = gls_posterior(&x, &y, &sigma, &flat).unwrap();
        assert!((&post.mean - &y).amax() < 1e-9);

        let dogmatic = GaussianDist::new(DVector::from_vec(vec![0.3, 0.2, 0.1]), DMatrix::from_diagonal_element(3, 3, 1e-12)).unwrap();
        let post = gls_posterior(&x, &y, &sigma, &dogmatic).unwrap();
        assert!((&post.mean - &dogmatic.mean).amax() < 1e-9);
    }

    #[test]
    fn gls_matches_dense_inverse_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = random_matrix(20, 3, &mut rng);
        let y = random_vector(20, &mut rng);
        let sigma = random_spd(20, &mut rng);
        let prior = GaussianDist::new(random_vector(3, &mut rng), random_spd(3, &mut rng)).unwrap();
        let got = gls_posterior(&x, &y, &chol_factor(&sigma).unwrap(), &prior).unwrap();
        let want = naive_gls(&x, &y, &sigma, &prior);
        assert!((&got.mean - &want.mean).amax() < 1e-8);
        assert!((&got.covariance - &want.covariance).amax() < 1e-8);
        assert_eq!(got.covariance, got.covariance.transpose());
        assert!(gls_posterior(&random_matrix(20, 2, &mut rng), &y, &chol_factor(&sigma).unwrap(), &prior).is_err());
    }

    #[test]
    fn gls_shrinks_toward_prior_mean_as_prior_tightens() {
        // X = L Q with orthonormal Q makes X' Sigma^-1 X = I, so coordinates decouple
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let sigma = chol_factor(&random_spd(15, &mut rng)).unwrap();
        let q = random_matrix(15, 3, &mut rng).qr().q();
        let x = sigma.lower() * q;
        let y = random_vector(15, &mut rng) * 3.0;
        let m0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let mut last: Option<DVector<f64>> = None;
        for v in [1e3, 10.0, 1.0, 0.1, 1e-3] {
            let prior = GaussianDist::new(m0.clone(), DMatrix::from_diagonal_element(3, 3, v)).unwrap();
            let post = gls_posterior(&x, &y, &sigma, &prior).unwrap();
            let dist = (&post.mean - &m0).abs();
            if let Some(prev) = &last {
                for k in 0..3 {
                    assert!(dist[k] <= prev[k] + 1e-12, "coordinate {k} moved away at v={v}");
                }
            }
            last = Some(dist);
        }
    }

    #[test]
    fn marginal_loglik_without_fixed_effect_uncertainty() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = random_matrix(12, 2, &mut rng);
        let y = random_vector(12, &mut rng);
        let sigma = random_spd(12, &mut rng);
        let prior = GaussianDist::isotropic(2, 0.0, 1e-12);
        let got = marginal_loglik(&x, &y, &sigma, &prior).unwrap();
        let want = mvn_logpdf(&y, &DVector::zeros(12), &chol_factor(&sigma).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-8);
    }

    #[test]
    fn marginal_loglik_decomposition_identity() {
        // log p(y) = log p(y | b) + log p(b) - log p(b | y) at any b.
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = random_matrix(25, 3, &mut rng);
        let y = random_vector(25, &mut rng);
        let sigma = random_spd(25, &mut rng);
        let prior = GaussianDist::new(random_vector(3, &mut rng), random_spd(3, &mut rng)).unwrap();
        let sigma_chol = chol_factor(&sigma).unwrap();
        let post = gls_posterior(&x, &y, &sigma_chol, &prior).unwrap();
        let b = &post.mean;
        let lik = mvn_logpdf(&y, &(&x * b), &sigma_chol).unwrap();
        let pri = mvn_logpdf(b, &prior.mean, &chol_factor(&prior.covariance).unwrap()).unwrap();
        let pos = mvn_logpdf(b, &post.mean, &chol_factor(&post.covariance).unwrap()).unwrap();
        let got = marginal_loglik(&x, &y, &sigma, &prior).unwrap();
        assert!((got - (lik + pri - pos)).abs() < 1e-8);
    }

    #[test]
    fn marginal_loglik_scaling_consistent_with_direct_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = random_matrix(10, 2, &mut rng);
        let y = random_vector(10, &mut rng);
        let sigma = random_spd(10, &mut rng);
        let m0 = random_vector(2, &mut rng);
        for c in [0.5, 2.0, 10.0] {
            let prior = GaussianDist::new(&m0 * c, DMatrix::identity(2, 2)).unwrap();
            let got = marginal_loglik(&x, &(&y * c), &sigma, &prior).unwrap();
            let total = &sigma + &x * x.transpose();
            let want = naive_logpdf(&(&y * c), &(&x * &m0 * c), &total);
            assert!((got - want).abs() < 1e-8);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn factor_reconstructs(seed in 0u64..10_000, n in 1usize..40) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let a = random_spd(n, &mut rng);
                let c = chol_factor(&a).unwrap();
                prop_assert!(rel_frobenius(&c.reconstruct(), &a) < 1e-8);
            }

            #[test]
            fn logpdf_matches_oracle(seed in 0u64..10_000, n in 1usize..=32) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let sigma = random_spd(n, &mut rng);
                let y = random_vector(n, &mut rng);
                let mu = random_vector(n, &mut rng);
                let got = mvn_logpdf(&y, &mu, &chol_factor(&sigma).unwrap()).unwrap();
                let want = naive_logpdf(&y, &mu, &sigma);
                prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
            }

            #[test]
            fn marginal_loglik_row_order_invariant(seed in 0u64..10_000) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let n = 12;
                let x = random_matrix(n, 3, &mut rng);
                let y = random_vector(n, &mut rng);
                let sigma = random_spd(n, &mut rng);
                let prior = GaussianDist::new(random_vector(3, &mut rng), random_spd(3, &mut rng)).unwrap();
                let mut perm: Vec<usize> = (0..n).collect();
                perm.reverse();
                perm.swap(0, 5);
                let xp = DMatrix::from_fn(n, 3, |i, j| x[(perm[i], j)]);
                let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
                let sp = DMatrix::from_fn(n, n, |i, j| sigma[(perm[i], perm[j])]);
                let a = marginal_loglik(&x, &y, &sigma, &prior).unwrap();
                let b = marginal_loglik(&xp, &yp, &sp, &prior).unwrap();
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}

//! Modified Bessel function of the second kind for real order.
//!
//! Small arguments use Temme's series, large arguments Steed's continued
//! fraction; both evaluate `K_mu` and `K_{mu+1}` for `|mu| <= 1/2` and the
//! requested order is reached by forward recurrence, which is stable for `K`.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;
const SERIES_CUTOFF: f64 = 2.0;

// Taylor coefficients of 1/Gamma(1+z) around z = 0 (odd powers only).
const INV_GAMMA_ODD: [f64; 4] = [
    0.577_215_664_901_532_9,
    -0.042_002_635_034_095_2,
    -0.042_197_734_555_544_3,
    0.007_218_943_246_663_0,
];

/// `K_nu(x)` for `x > 0`. Returns NaN for non-positive or non-finite `x`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() || !nu.is_finite() {
        return f64::NAN;
    }
    let nu = nu.abs();
    let steps = (nu + 0.5).floor() as usize;
    let mu = nu - steps as f64;

    let (mut k_mu, mut k_mu1) = if (mu.abs() - 0.5).abs() < 1e-15 {
        // K_{-1/2} = K_{1/2} = sqrt(pi / 2x) e^{-x}
        let k = (PI / (2.0 * x)).sqrt() * (-x).exp();
        (k, k)
    } else if x <= SERIES_CUTOFF {
        temme_series(mu, x)
    } else {
        steed_fraction(mu, x)
    };

    let two_over_x = 2.0 / x;
    for i in 1..=steps {
        let next = (mu + i as f64) * two_over_x * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// `(1/Gamma(1+mu), 1/Gamma(1-mu), gam1, gam2)` with
/// `gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` and
/// `gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam2 = 0.5 * (gammi + gampl);
    let gam1 = if mu.abs() < 1e-2 {
        let mu2 = mu * mu;
        -INV_GAMMA_ODD
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * mu2 + c)
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    (gampl, gammi, gam1, gam2)
}

fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let (gampl, gammi, gam1, gam2) = temme_gammas(mu);
    let half_x = 0.5 * x;
    let pimu = PI * mu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -half_x.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };

    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let e = e.exp();
    let mut p = 0.5 * e / gampl;
    let mut q = 0.5 / (e * gammi);
    let mut c = 1.0;
    let d = half_x * half_x;
    let mut sum1 = p;
    let mu2 = mu * mu;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= d / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

fn steed_fraction(mu: f64, x: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h *= a1;
    let k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
    (k_mu, k_mu1)
}

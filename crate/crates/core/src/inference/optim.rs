//! Derivative-free maximizers used by the mode search.

/// Outcome of a Nelder-Mead run (maximization).
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Maximizes `f` from `start` with an axis-aligned initial simplex of side
/// `step`. Stops once the spread of objective values across the simplex is at
/// most `ftol`, or after `max_evals` evaluations. Non-finite values are
/// treated as `-inf`. Ties keep the earlier vertex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: f64,
    ftol: f64,
    max_evals: usize,
) -> NelderMeadResult {
    let n = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    if n == 0 {
        let v = eval(start, &mut evals);
        return NelderMeadResult {
            x: Vec::new(),
            value: v,
            evaluations: evals,
            converged: true,
        };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    loop {
        // best first; stable sort keeps insertion order on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[0] - values[n];
        if values[0].is_finite() && spread <= ftol {
            converged = true;
            break;
        }
        if evals >= max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
        };
        let worst = simplex[n].clone();
        let xr = along(alpha, &worst);
        let fr = eval(&xr, &mut evals);
        if fr > values[0] {
            let xe = along(gamma, &worst);
            let fe = eval(&xe, &mut evals);
            if fe > fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr > values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        if fr > values[n] {
            let xc = along(rho, &worst);
            let fc = eval(&xc, &mut evals);
            if fc >= fr {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
        } else {
            let xc = along(-rho, &worst);
            let fc = eval(&xc, &mut evals);
            if fc > values[n] {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            let p: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            values[i] = eval(&p, &mut evals);
            simplex[i] = p;
        }
    }
    NelderMeadResult {
        x: simplex[0].clone(),
        value: values[0],
        evaluations: evals,
        converged,
    }
}

/// Maximizes a univariate function on `[lo, hi]` by Brent's method
/// (golden section with parabolic steps). Returns `(x, f(x), evaluations)`.
pub fn brent_maximize<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> (f64, f64, usize) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evals = 1;
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = g(u);
        evals += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, -fx, evals)
}

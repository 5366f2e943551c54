//! Derivative-free and finite-difference optimizers.
//!
//! [`minimize`] runs Nelder–Mead from the supplied start and from randomly
//! perturbed restarts, then polishes the best vertex with BFGS driven by
//! central-difference gradients. All objectives are minimized; callers
//! maximizing a log-likelihood pass its negation.

use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    /// Nelder–Mead runs from perturbed starting points, in addition to the
    /// supplied start.
    pub restarts: usize,
    /// Standard deviation of the restart perturbation, per coordinate.
    pub restart_scale: f64,
    pub initial_step: f64,
    pub max_evals: usize,
    /// Convergence on successive best simplex values.
    pub ftol: f64,
    /// Convergence on the final gradient norm.
    pub gtol: f64,
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            restart_scale: 0.5,
            initial_step: 0.2,
            max_evals: 20_000,
            ftol: 1e-8,
            gtol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
}

fn guarded<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Nelder–Mead simplex search. Converged when the best value changes by less
/// than `ftol` (relative to its magnitude) over a full simplex's worth of
/// iterations and the simplex values agree to the same tolerance.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, ftol: f64, max_evals: usize) -> NelderMeadOutcome {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step * x0[i].abs().max(1.0);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| guarded(f, v)).collect();
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut best_history: Vec<f64> = Vec::new();
    let tol = |a: f64, b: f64| (a - b).abs() <= ftol * (a.abs() + b.abs() + 1e-10);

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        best_history.push(values[0]);
        let stalled = best_history.len() > n + 1 && tol(best_history[best_history.len() - 1 - (n + 1)], values[0]);
        if (stalled && tol(values[0], values[n])) || evals >= max_evals {
            let converged = stalled && values[0].is_finite();
            return NelderMeadOutcome { x: simplex[0].clone(), fmin: values[0], converged, iterations, evaluations: evals };
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect()
        };
        let xr = along(1.0);
        let fr = guarded(f, &xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = guarded(f, &xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = guarded(f, &xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = guarded(f, &xc);
            (xc, fc)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            values[i] = guarded(f, &shrunk);
            simplex[i] = shrunk;
        }
        evals += n;
    }
}

fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient with per-coordinate step `rel·max(|x|, 1)`.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i], rel);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let h: Vec<f64> = x.iter().map(|&v| fd_step(v, rel)).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// BFGS with central-difference gradients and a backtracking Armijo line search.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], gtol: f64, max_iter: usize) -> BfgsOutcome {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = guarded(f, x.as_slice());
    let mut evals = 1;
    let grad = |x: &DVector<f64>| DVector::from_vec(gradient(f, x.as_slice(), 1e-6));
    let mut g = grad(&x);
    evals += 2 * n;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    while iterations < max_iter && g.norm() > gtol && g.iter().all(|v| v.is_finite()) {
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + step * &dir;
            let ft = guarded(f, trial.as_slice());
            evals += 1;
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else { break };
        let g_new = grad(&x_new);
        evals += 2 * n;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
        }
        let progress = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if progress.abs() <= 1e-15 * fx.abs().max(1.0) && step < 1e-6 {
            break;
        }
    }
    BfgsOutcome { grad_norm: g.norm(), x: x.as_slice().to_vec(), fmin: fx, iterations, evaluations: evals }
}

/// Multi-start Nelder–Mead followed by a BFGS polish.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut best: Option<NelderMeadOutcome> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut any_converged = false;
    for r in 0..=opts.restarts {
        let start: Vec<f64> = if r == 0 {
            x0.to_vec()
        } else {
            let mut g = rng::stream(opts.seed, "optim-restart", r as u64);
            x0.iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut g);
                    v + opts.restart_scale * v.abs().max(1.0) * z
                })
                .collect()
        };
        if !guarded(f, &start).is_finite() {
            continue;
        }
        // a second pass from the first result guards against simplex collapse
        let first = nelder_mead(f, &start, opts.initial_step, opts.ftol, opts.max_evals);
        let second = nelder_mead(f, &first.x, opts.initial_step * 0.25, opts.ftol, opts.max_evals);
        iterations += first.iterations + second.iterations;
        evaluations += first.evaluations + second.evaluations;
        any_converged |= second.converged;
        let keep = if second.fmin <= first.fmin { second } else { first };
        if best.as_ref().is_none_or(|b| keep.fmin < b.fmin) {
            best = Some(keep);
        }
    }
    let Some(best) = best else {
        return OptimResult {
            x: x0.to_vec(),
            fmin: f64::INFINITY,
            converged: false,
            iterations,
            evaluations,
            grad_norm: f64::NAN,
        };
    };
    let polished = bfgs(f, &best.x, opts.gtol * 1e-2, 200);
    evaluations += polished.evaluations;
    iterations += polished.iterations;
    let (x, fmin) = if polished.fmin <= best.fmin { (polished.x, polished.fmin) } else { (best.x, best.fmin) };
    let grad_norm = gradient(f, &x, 1e-6).iter().map(|g| g * g).sum::<f64>().sqrt();
    OptimResult {
        converged: any_converged && fmin.is_finite() && grad_norm < opts.gtol,
        x,
        fmin,
        iterations,
        evaluations,
        grad_norm,
    }
}

/// Root of a continuous function on a sign-changing bracket.
pub fn bisect_root<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * mid.abs().max(1e-300) || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Brent's method for a 1-D minimum on `[a, b]`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..500 {
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
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
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
    (x, fx)
}

/// Inverse of a symmetric positive-definite matrix, `None` if not PD.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky().map(|c| c.inverse())
}

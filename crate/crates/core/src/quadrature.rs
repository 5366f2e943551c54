//! Gauss–Hermite rules and adaptive (mode-recentred) quadrature over
//! low-dimensional random effects.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// One-dimensional Gauss–Hermite rule for the standard normal measure:
/// `E[f(Z)] ≈ Σ wₖ f(zₖ)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Rule of order `n` (exact for polynomials of degree `2n − 1`).
///
/// Roots of the physicists' Hermite polynomial are found by Newton iteration
/// from asymptotic starting values, then rescaled to the N(0, 1) measure.
pub fn gauss_hermite(n: usize) -> GaussHermite {
    assert!(n >= 1, "quadrature order must be positive");
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let norm = PI.sqrt();
    GaussHermite {
        nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
        weights: w.iter().map(|v| v / norm).collect(),
    }
}

/// Tensor-product rule in `d` dimensions for the standard normal measure.
/// Each log-weight already includes `+½‖z‖²`, so that
/// `∫ g(z) dz = (2π)^{d/2} Σ exp(log_weight + ln g(z))`.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
}

pub fn tensor_rule(order: usize, dim: usize) -> TensorRule {
    let gh = gauss_hermite(order);
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    let mut log_weights = vec![0.0];
    for _ in 0..dim {
        let mut np = Vec::with_capacity(points.len() * order);
        let mut nw = Vec::with_capacity(points.len() * order);
        for (p, lw) in points.iter().zip(&log_weights) {
            for (z, w) in gh.nodes.iter().zip(&gh.weights) {
                let mut q = p.clone();
                q.push(*z);
                np.push(q);
                nw.push(lw + w.ln() + 0.5 * z * z);
            }
        }
        points = np;
        log_weights = nw;
    }
    TensorRule { dim, points, log_weights }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Gradient and Hessian of `f` at `x` by central differences with steps `h`.
fn derivatives<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = x.len();
    let f0 = f(x);
    let mut g = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for i in 0..d {
        p[i] = x[i] + h[i];
        let fp = f(&p);
        p[i] = x[i] - h[i];
        let fm = f(&p);
        p[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut at = |si: f64, sj: f64| {
                p[i] = x[i] + si * h[i];
                p[j] = x[j] + sj * h[j];
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (f0, g, hess)
}

#[derive(Debug, Clone)]
pub struct Mode {
    pub location: Vec<f64>,
    /// Cholesky factor `R` of the negative Hessian, `−∇²ln f = R Rᵀ`.
    pub chol: DMatrix<f64>,
}

/// Maximizes `log_f` by damped Newton iteration with finite-difference
/// derivatives. `scale` gives the natural spread of each coordinate; steps
/// are re-scaled to the curvature as it is learned.
pub fn find_mode<F: Fn(&[f64]) -> f64>(log_f: &F, start: &[f64], scale: &[f64]) -> Option<Mode> {
    let d = start.len();
    let mut sc = scale.to_vec();
    let mut x = start.to_vec();
    for _ in 0..200 {
        let h: Vec<f64> = sc.iter().map(|s| 1e-3 * s).collect();
        let (f0, g, hess) = derivatives(log_f, &x, &h);
        if !f0.is_finite() {
            return None;
        }
        let neg = -hess;
        if let Some(c) = neg.clone().cholesky() {
            let step = c.solve(&g);
            // converged when the Newton step is tiny relative to the curvature scale
            let size = (0..d).map(|i| (step[i] * neg[(i, i)].sqrt()).abs()).fold(0.0, f64::max);
            if size < 1e-5 {
                return Some(Mode { location: x, chol: c.l() });
            }
        }
        // Levenberg damping until the system is positive definite
        let mut lambda = 0.0;
        let mut step = None;
        for _ in 0..60 {
            let mut m = neg.clone();
            for i in 0..d {
                m[(i, i)] += lambda / (sc[i] * sc[i]);
            }
            if let Some(c) = m.cholesky() {
                step = Some(c.solve(&g));
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
        }
        let step = step?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let ft = log_f(&trial);
            if ft.is_finite() && ft >= f0 - 1e-12 * f0.abs() {
                x = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return None;
        }
        for i in 0..d {
            if neg[(i, i)] > 0.0 {
                sc[i] = sc[i].min(1.0 / neg[(i, i)].sqrt());
            }
        }
    }
    None
}

/// `ln ∫ exp(log_f(b)) db` by Gauss–Hermite quadrature recentred at the mode
/// of `log_f` and scaled by its curvature. Returns `None` when no mode with a
/// negative-definite Hessian can be found.
pub fn adaptive_log_integral<F: Fn(&[f64]) -> f64>(log_f: &F, start: &[f64], scale: &[f64], rule: &TensorRule) -> Option<f64> {
    let d = start.len();
    debug_assert_eq!(d, rule.dim);
    if d == 0 {
        return Some(log_f(&[]));
    }
    let mode = find_mode(log_f, start, scale)?;
    // b = b̂ + R⁻ᵀ z has Jacobian 1/det R
    let rt = mode.chol.transpose();
    let rt_inv = rt.clone().try_inverse()?;
    let log_det_r: f64 = (0..d).map(|i| mode.chol[(i, i)].ln()).sum();
    let mut b = vec![0.0; d];
    let terms: Vec<f64> = rule
        .points
        .iter()
        .zip(&rule.log_weights)
        .map(|(z, lw)| {
            for (i, bi) in b.iter_mut().enumerate() {
                *bi = mode.location[i] + (0..d).map(|k| rt_inv[(i, k)] * z[k]).sum::<f64>();
            }
            lw + log_f(&b)
        })
        .collect();
    Some(log_sum_exp(&terms) - log_det_r + 0.5 * d as f64 * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gh_moments() {
        let gh = gauss_hermite(15);
        let m = |p: i32| gh.nodes.iter().zip(&gh.weights).map(|(z, w)| w * z.powi(p)).sum::<f64>();
        assert_relative_eq!(m(0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0, epsilon = 1e-11);
        assert_relative_eq!(m(10), 945.0, epsilon = 1e-8);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn gh_order_one_and_even() {
        let gh = gauss_hermite(1);
        assert_eq!(gh.nodes, vec![0.0]);
        assert_relative_eq!(gh.weights[0], 1.0, epsilon = 1e-14);
        let gh = gauss_hermite(4);
        assert_relative_eq!(gh.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        // E[Z^6] = 15 is exact for n = 4
        let m6: f64 = gh.nodes.iter().zip(&gh.weights).map(|(z, w)| w * z.powi(6)).sum();
        assert_relative_eq!(m6, 15.0, epsilon = 1e-11);
    }

    #[test]
    fn gaussian_integral_is_exact() {
        // ∫ exp(−½ (b−m)ᵀ A (b−m)) db = (2π)^{d/2} / √det A
        let a = [[4.0, 1.0], [1.0, 2.0]];
        let log_f = |b: &[f64]| {
            let u = [b[0] - 0.3, b[1] + 1.2];
            -0.5 * (a[0][0] * u[0] * u[0] + 2.0 * a[0][1] * u[0] * u[1] + a[1][1] * u[1] * u[1])
        };
        let rule = tensor_rule(5, 2);
        let got = adaptive_log_integral(&log_f, &[0.0, 0.0], &[1.0, 1.0], &rule).unwrap();
        let expect = (2.0 * PI).ln() - 0.5 * 7f64.ln();
        assert_relative_eq!(got, expect, epsilon = 1e-9);
    }

    #[test]
    fn non_gaussian_integrand() {
        // ∫ exp(a·b − e^b) db = Γ(a); the a = 1 reference value is the same
        // rule evaluated independently with numpy's hermgauss
        let rule = tensor_rule(31, 1);
        let log_f = |b: &[f64]| b[0] - b[0].exp();
        let got = adaptive_log_integral(&log_f, &[1.0], &[1.0], &rule).unwrap();
        assert_relative_eq!(got, -2.500_437_094_5e-5, epsilon = 1e-9);

        let rule = tensor_rule(15, 1);
        let log_f = |b: &[f64]| 10.0 * b[0] - b[0].exp();
        let got = adaptive_log_integral(&log_f, &[0.0], &[1.0], &rule).unwrap();
        assert_relative_eq!(got, 12.801_827_480_081_469, max_relative = 1e-8);
    }
}

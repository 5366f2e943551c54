//! Monotone regression splines: I-splines of order 3 and nonnegative least
//! squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const DEGREE: usize = 3;

/// I-spline basis on `[lo, hi]`: tail sums `I_i = Σ_{j≥i} B_j` of the cubic
/// B-splines on the clamped knot vector, for `i ≥ 1`. Each `I_i` rises
/// monotonically from 0 at `lo` to 1 at `hi` and stays there beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ISplineBasis {
    pub interior: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl ISplineBasis {
    pub fn new(interior: Vec<f64>, lo: f64, hi: f64) -> Self {
        Self { interior, lo, hi }
    }

    /// Interior knots at equally spaced quantiles of the distinct `values`.
    pub fn at_quantiles(values: &[f64], n_interior: usize) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        let (lo, hi) = (v[0], v[v.len() - 1]);
        let mut interior: Vec<f64> = (1..=n_interior)
            .map(|k| crate::stats::quantile_sorted(&v, k as f64 / (n_interior + 1) as f64))
            .filter(|&k| k > lo && k < hi)
            .collect();
        interior.dedup();
        Self { interior, lo, hi }
    }

    fn knot_vector(&self) -> Vec<f64> {
        let mut t = vec![self.lo; DEGREE + 1];
        t.extend(&self.interior);
        t.extend(std::iter::repeat_n(self.hi, DEGREE + 1));
        t
    }

    /// Number of I-spline functions (B-splines minus the constant).
    pub fn len(&self) -> usize {
        self.interior.len() + DEGREE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let m = self.len();
        if x <= self.lo {
            return vec![0.0; m];
        }
        if x >= self.hi {
            return vec![1.0; m];
        }
        let b = bspline_values(&self.knot_vector(), x);
        let mut out = vec![0.0; m];
        let mut acc = 0.0;
        for i in (1..b.len()).rev() {
            acc += b[i];
            out[i - 1] = acc.min(1.0);
        }
        out
    }
}

/// All cubic B-spline values at `x` (Cox–de Boor), `x` inside the knot span.
fn bspline_values(t: &[f64], x: f64) -> Vec<f64> {
    let n = t.len() - DEGREE - 1;
    let mut b: Vec<f64> = (0..t.len() - 1).map(|i| if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 }).collect();
    for d in 1..=DEGREE {
        for i in 0..t.len() - 1 - d {
            let left = if t[i + d] > t[i] { (x - t[i]) / (t[i + d] - t[i]) * b[i] } else { 0.0 };
            let right = if t[i + d + 1] > t[i + 1] { (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * b[i + 1] } else { 0.0 };
            b[i] = left + right;
        }
    }
    b.truncate(n);
    b
}

/// Least squares `min ‖Ax − b‖` subject to `x ≥ 0` (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = (a.transpose() * b).amax().max(1e-300);
    let tol = 1e-12 * scale * n as f64;
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match candidate {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        for _ in 0..3 * n + 10 {
            let z = solve_passive(a, b, &passive);
            if (0..n).all(|j| !passive[j] || z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[j]));
                }
            }
            x += (&z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= 1e-15 * scale {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..a.ncols()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&cols);
    let sol = sub.svd(true, true).solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(cols.len()));
    let mut z = DVector::zeros(a.ncols());
    for (k, &j) in cols.iter().enumerate() {
        z[j] = sol[k];
    }
    z
}

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spline::{nnls, ISplineBasis};
use super::{exposed_conditions, AddtFit, AddtModel};
use crate::data::{AddtDataset, AddtRecord};
use crate::fit::FitResult;
use crate::{optim, stats, Error, Result};

/// `y = g(η) + ε` with `η = t/exp(β·s)`, `s = x_max − x`, and `g` a
/// nonincreasing spline `g(η) = a − Σ γ_k I_k(η)`, `γ ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddtSemiparametricModel {
    pub beta: f64,
    pub basis: ISplineBasis,
    pub intercept: f64,
    pub gamma: Vec<f64>,
    pub x_max: f64,
    pub sigma: f64,
}

impl AddtSemiparametricModel {
    pub fn eta(&self, t: f64, x: f64) -> f64 {
        t / (self.beta * (self.x_max - x)).exp()
    }

    pub fn g(&self, eta: f64) -> f64 {
        self.intercept - self.basis.eval(eta).iter().zip(&self.gamma).map(|(b, c)| b * c).sum::<f64>()
    }

    pub fn mean(&self, t: f64, x: f64) -> f64 {
        self.g(self.eta(t, x))
    }

    /// `g` is flat beyond its fitted support, so a threshold it does not reach
    /// inside `[lo, hi]` is never reached.
    pub fn mean_time_to(&self, d0: f64, x: f64) -> Option<f64> {
        let (lo, hi) = (self.basis.lo, self.basis.hi);
        if self.g(lo) <= d0 || self.g(hi) > d0 {
            return None;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.g(mid) > d0 {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 1e-14 * b {
                break;
            }
        }
        Some(0.5 * (a + b) * (self.beta * (self.x_max - x)).exp())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiparametricOptions {
    pub interior_knots: usize,
    /// Search interval for β.
    pub beta_range: [f64; 2],
    pub grid_points: usize,
    /// Bootstrap replicates over batches for standard errors (0 = none).
    pub bootstrap: usize,
    pub seed: u64,
    /// Fix β instead of estimating it.
    pub fixed_beta: Option<f64>,
}

impl Default for SemiparametricOptions {
    fn default() -> Self {
        Self {
            interior_knots: 4,
            beta_range: [0.0, 10.0],
            grid_points: 81,
            bootstrap: 0,
            seed: 0,
            fixed_beta: None,
        }
    }
}

struct Profile {
    model: AddtSemiparametricModel,
    rss: f64,
}

/// Monotone least squares for `g` at fixed β.
fn profile(records: &[&AddtRecord], x_max: f64, beta: f64, knots: usize) -> Result<Profile> {
    let etas: Vec<f64> = records.iter().map(|r| r.time / (beta * (x_max - r.condition)).exp()).collect();
    let mut distinct = etas.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Validation(format!("insufficient support: {} distinct η values, need at least 4", distinct.len())));
    }
    let basis = ISplineBasis::at_quantiles(&distinct, knots.min(distinct.len() - 4));
    let n = records.len();
    let m = basis.len();
    let mut design = DMatrix::zeros(n, m);
    for (i, &e) in etas.iter().enumerate() {
        for (k, v) in basis.eval(e).into_iter().enumerate() {
            design[(i, k)] = -v;
        }
    }
    // centring absorbs the free intercept
    let col_means: Vec<f64> = (0..m).map(|k| design.column(k).mean()).collect();
    for k in 0..m {
        design.column_mut(k).add_scalar_mut(-col_means[k]);
    }
    let y: Vec<f64> = records.iter().map(|r| r.response).collect();
    let ybar = stats::mean(&y);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let gamma = nnls(&design, &yc);
    let intercept = ybar - (0..m).map(|k| col_means[k] * gamma[k]).sum::<f64>();
    let resid = &yc - &design * &gamma;
    let rss = resid.norm_squared();
    let model = AddtSemiparametricModel {
        beta,
        basis,
        intercept,
        gamma: gamma.iter().copied().collect(),
        x_max,
        sigma: (rss / n as f64).sqrt(),
    };
    Ok(Profile { model, rss })
}

/// Profiles β out: a grid over `beta_range` followed by Brent's method on
/// the bracketing cell, refitting `g` by nonnegative least squares at every
/// trial β.
pub fn fit_addt_semiparametric(data: &AddtDataset, options: &SemiparametricOptions) -> Result<AddtFit> {
    let records: Vec<&AddtRecord> = data.records.iter().collect();
    let mut fit = fit_records(&records, options)?;
    if options.bootstrap > 0 {
        bootstrap(data, options, &mut fit)?;
    }
    Ok(fit)
}

fn fit_records(records: &[&AddtRecord], options: &SemiparametricOptions) -> Result<AddtFit> {
    if options.fixed_beta.is_none() && exposed(records) < 2 {
        return Err(Error::Validation("semiparametric ADDT fit needs at least 2 exposed stress levels".into()));
    }
    let x_max = records.iter().map(|r| r.condition).fold(f64::NEG_INFINITY, f64::max);
    let knots = options.interior_knots;
    let (beta, evaluations, converged) = match options.fixed_beta {
        Some(b) => (b, 1, true),
        None => {
            let [lo, hi] = options.beta_range;
            if !(hi > lo) || options.grid_points < 3 {
                return Err(Error::Domain("beta_range must be increasing with at least 3 grid points".into()));
            }
            let rss = |b: f64| profile(records, x_max, b, knots).map(|p| p.rss).unwrap_or(f64::INFINITY);
            let k = options.grid_points;
            let grid: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
            let values: Vec<f64> = grid.iter().map(|&b| rss(b)).collect();
            let best = (0..k).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
            if !values[best].is_finite() {
                profile(records, x_max, grid[best], knots)?;
            }
            let a = grid[best.saturating_sub(1)];
            let b = grid[(best + 1).min(k - 1)];
            let (beta, f) = optim::brent_minimize(rss, a, b, 1e-10);
            let (beta, f) = if f <= values[best] { (beta, f) } else { (grid[best], values[best]) };
            let interior = best > 0 && best < k - 1 || f < values[0].min(values[k - 1]);
            (beta, k + 100, interior)
        }
    };
    let p = profile(records, x_max, beta, knots)?;
    let n = records.len() as f64;
    let model = p.model;
    let m = model.gamma.len();
    let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * model.sigma * model.sigma).ln() + 1.0);
    let mut parameters = vec!["beta".to_string(), "sigma".into(), "intercept".into()];
    parameters.extend((1..=m).map(|k| format!("gamma_{k}")));
    let mut estimates = vec![model.beta, model.sigma, model.intercept];
    estimates.extend(&model.gamma);
    let np = estimates.len();
    let k_free = np - usize::from(options.fixed_beta.is_some());
    let fit = FitResult {
        model: "addt_semiparametric".into(),
        parameters,
        internal: estimates.clone(),
        estimates,
        std_errors: vec![f64::NAN; np],
        covariance: vec![vec![f64::NAN; np]; np],
        loglik,
        aic: 2.0 * k_free as f64 - 2.0 * loglik,
        converged,
        iterations: evaluations,
        seed: options.seed,
    };
    Ok(AddtFit { model: AddtModel::Semiparametric(model), fit })
}

fn exposed(records: &[&AddtRecord]) -> usize {
    let data = AddtDataset { records: records.iter().map(|r| (*r).clone()).collect() };
    exposed_conditions(&data).len()
}

/// Nonparametric bootstrap over batches; replicates run in parallel, each on
/// its own RNG stream.
fn bootstrap(data: &AddtDataset, options: &SemiparametricOptions, fit: &mut AddtFit) -> Result<()> {
    let batches = data.batches();
    let inner = SemiparametricOptions { bootstrap: 0, ..options.clone() };
    let np = fit.fit.estimates.len();
    let reps: Vec<Vec<f64>> = (0..options.bootstrap)
        .into_par_iter()
        .filter_map(|b| {
            let mut g = crate::rng::stream(options.seed, "addt-bootstrap", b as u64);
            let records: Vec<&AddtRecord> =
                (0..batches.len()).flat_map(|_| batches[g.random_range(0..batches.len())].iter().copied()).collect();
            fit_records(&records, &inner).ok().map(|f| f.fit.estimates)
        })
        .filter(|e| e.len() == np)
        .collect();
    if reps.len() < 2 {
        return Err(Error::Numerical(format!("only {} usable bootstrap replicates", reps.len())));
    }
    let r = reps.len() as f64;
    let means: Vec<f64> = (0..np).map(|j| reps.iter().map(|e| e[j]).sum::<f64>() / r).collect();
    let cov: Vec<Vec<f64>> = (0..np)
        .map(|i| (0..np).map(|j| reps.iter().map(|e| (e[i] - means[i]) * (e[j] - means[j])).sum::<f64>() / (r - 1.0)).collect())
        .collect();
    fit.fit.std_errors = (0..np).map(|i| cov[i][i].sqrt()).collect();
    fit.fit.covariance = cov;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn record(x: f64, t: f64, y: f64) -> AddtRecord {
        AddtRecord { condition: x, raw_condition: 0.0, time: t, batch_id: format!("{x}/{t}"), response: y }
    }

    fn noiseless(beta: f64, g: impl Fn(f64) -> f64) -> AddtDataset {
        let mut recs = vec![record(-36.0, 0.0, g(0.0))];
        for x in [-36.0, -35.0, -34.0] {
            for t in [100.0, 300.0, 700.0, 1500.0, 2500.0] {
                let eta = t / (beta * (-34.0 - x)).exp();
                recs.push(record(x, t, g(eta)));
            }
        }
        AddtDataset::new(recs).unwrap()
    }

    #[test]
    fn baseline_condition_runs_on_real_time() {
        let data = noiseless(1.0, |e| 5.0 - 0.001 * e);
        let fit = fit_addt_semiparametric(&data, &SemiparametricOptions::default()).unwrap();
        let AddtModel::Semiparametric(m) = fit.model else { unreachable!() };
        assert_eq!(m.eta(1234.5, m.x_max), 1234.5);
    }

    #[test]
    fn reproduces_a_smooth_monotone_g_at_true_beta() {
        // a cubic on [0, 2500] lies in the spline space
        let g = |e: f64| 5.0 - 1e-3 * e + 2e-7 * e * e - 4e-11 * e * e * e;
        let data = noiseless(1.2, g);
        let opts = SemiparametricOptions { fixed_beta: Some(1.2), ..Default::default() };
        let fit = fit_addt_semiparametric(&data, &opts).unwrap();
        let AddtModel::Semiparametric(m) = &fit.model else { unreachable!() };
        for r in &data.records {
            assert_relative_eq!(m.mean(r.time, r.condition), r.response, epsilon = 1e-6);
        }
    }

    #[test]
    fn recovers_beta_from_noiseless_data() {
        let data = noiseless(0.9, |e| 5.0 - 0.3 * (1.0 + e / 200.0).ln());
        let fit = fit_addt_semiparametric(&data, &SemiparametricOptions::default()).unwrap();
        assert!((fit.fit.get("beta").unwrap() - 0.9).abs() < 0.05, "{:?}", fit.fit.estimates);
    }

    #[test]
    fn too_few_distinct_etas_is_an_error() {
        let data = AddtDataset::new(vec![record(-36.0, 0.0, 1.0), record(-35.0, 10.0, 0.9), record(-34.0, 10.0, 0.8)]).unwrap();
        let err = fit_addt_semiparametric(&data, &SemiparametricOptions::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient support"));
    }

    #[test]
    fn fitted_g_is_nonincreasing() {
        let mut data = noiseless(1.0, |e| 5.0 - 0.4 * (e / 1000.0).sqrt());
        // add structured noise that would pull an unconstrained fit upward
        for (i, r) in data.records.iter_mut().enumerate() {
            r.response += if i % 3 == 0 { 0.08 } else { -0.03 };
        }
        let fit = fit_addt_semiparametric(&data, &SemiparametricOptions::default()).unwrap();
        let AddtModel::Semiparametric(m) = &fit.model else { unreachable!() };
        let mut prev = f64::INFINITY;
        for i in 0..=500 {
            let v = m.g(m.basis.hi * 1.1 * i as f64 / 500.0);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }
}

//! Accelerated destructive degradation tests: a parametric model with
//! batch-level equicorrelated errors, a semiparametric monotone-spline model,
//! failure-time distributions and the thermal index.

mod semi;
pub mod spline;
mod ti;

pub use semi::{fit_addt_semiparametric, AddtSemiparametricModel, SemiparametricOptions};
pub use ti::{solve_thermal_index, thermal_index, MtfPoint, ThermalIndexResult, TiOptions, TI_KELVIN_OFFSET};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curve::CdfCurve;
use crate::data::{arrhenius_transform, AddtDataset, AddtRecord, ArrheniusSign};
use crate::fit::{summarize, FitResult};
use crate::optim::{self, OptimOptions};
use crate::stats;
use crate::{Error, Result};

/// `y = β₀ + β₁·exp(β₂x)·√t` with equicorrelated errors inside a batch:
/// variance σ², within-batch correlation ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddtParametricModel {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl AddtParametricModel {
    pub fn mean(&self, t: f64, x: f64) -> f64 {
        self.beta0 + self.beta1 * (self.beta2 * x).exp() * t.sqrt()
    }

    fn check(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::Domain(format!("within-batch correlation {} outside [0, 1)", self.rho)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Log-density of `n` residuals that are jointly normal with variance σ² and
/// common correlation ρ, using the closed-form determinant
/// `σ^{2n}(1−ρ)^{n−1}(1+(n−1)ρ)` and inverse `(I − ρ/(1+(n−1)ρ)·J)/(σ²(1−ρ))`.
pub fn equicorrelated_logpdf(resid: &[f64], sigma: f64, rho: f64) -> f64 {
    let n = resid.len() as f64;
    let s2 = sigma * sigma;
    let lead = 1.0 + (n - 1.0) * rho;
    let log_det = n * s2.ln() + (n - 1.0) * (-rho).ln_1p() + lead.ln();
    let sum: f64 = resid.iter().sum();
    let ss: f64 = resid.iter().map(|r| r * r).sum();
    let quad = (ss - rho / lead * sum * sum) / (s2 * (1.0 - rho));
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

pub fn addt_parametric_loglik(model: &AddtParametricModel, data: &AddtDataset) -> Result<f64> {
    model.check()?;
    Ok(loglik_unchecked(model, &data.batches()))
}

fn loglik_unchecked(model: &AddtParametricModel, batches: &[Vec<&AddtRecord>]) -> f64 {
    let mut resid = Vec::new();
    batches
        .iter()
        .map(|b| {
            resid.clear();
            resid.extend(b.iter().map(|r| r.response - model.mean(r.time, r.condition)));
            equicorrelated_logpdf(&resid, model.sigma, model.rho)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddtMethod {
    Parametric,
    Semiparametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AddtModel {
    Parametric(AddtParametricModel),
    Semiparametric(AddtSemiparametricModel),
}

impl AddtModel {
    pub fn method(&self) -> AddtMethod {
        match self {
            AddtModel::Parametric(_) => AddtMethod::Parametric,
            AddtModel::Semiparametric(_) => AddtMethod::Semiparametric,
        }
    }

    /// Mean degradation level at time `t` under transformed stress `x`.
    pub fn mean(&self, t: f64, x: f64) -> f64 {
        match self {
            AddtModel::Parametric(m) => m.mean(t, x),
            AddtModel::Semiparametric(m) => m.mean(t, x),
        }
    }

    /// Marginal standard deviation of a single measurement.
    pub fn sigma(&self) -> f64 {
        match self {
            AddtModel::Parametric(m) => m.sigma,
            AddtModel::Semiparametric(m) => m.sigma,
        }
    }

    /// Time at which the mean path reaches `d0` under stress `x`, or `None`
    /// when it never does.
    pub fn mean_time_to(&self, d0: f64, x: f64) -> Option<f64> {
        match self {
            AddtModel::Parametric(m) => {
                let r = (d0 - m.beta0) / (m.beta1 * (m.beta2 * x).exp());
                (r > 0.0 && r.is_finite()).then_some(r * r)
            }
            AddtModel::Semiparametric(m) => m.mean_time_to(d0, x),
        }
    }

    /// `F(t) = Φ((𝒟₀ − mean(t, x))/σ)`.
    pub fn failure_prob(&self, d0: f64, x: f64, t: f64) -> f64 {
        stats::norm_cdf((d0 - self.mean(t, x)) / self.sigma())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddtFit {
    pub model: AddtModel,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddtOptions {
    pub optim: OptimOptions,
    pub semiparametric: SemiparametricOptions,
}

pub fn fit_addt(method: AddtMethod, data: &AddtDataset, options: &AddtOptions) -> Result<AddtFit> {
    match method {
        AddtMethod::Parametric => fit_addt_parametric(data, &options.optim),
        AddtMethod::Semiparametric => fit_addt_semiparametric(data, &options.semiparametric),
    }
}

fn exposed_conditions(data: &AddtDataset) -> Vec<f64> {
    let mut c: Vec<f64> = data.records.iter().filter(|r| r.time > 0.0).map(|r| r.condition).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Maximum likelihood for the parametric model. Internally `β₁e^{β₂x}` is
/// written `s·exp(c + β₂(x − x̄))` with the sign `s` fixed by the start, which
/// keeps the optimizer away from the huge raw scale of β₁.
pub fn fit_addt_parametric(data: &AddtDataset, options: &OptimOptions) -> Result<AddtFit> {
    let conds = exposed_conditions(data);
    if conds.len() < 2 {
        return Err(Error::Validation(format!("parametric ADDT fit needs at least 2 exposed stress levels, found {}", conds.len())));
    }
    let xbar = stats::mean(&conds);
    let (start, sign) = parametric_start(data, &conds, xbar);
    let batches = data.batches();
    let to_model = |p: &[f64]| AddtParametricModel {
        beta0: p[0],
        beta1: sign * (p[1] - p[2] * xbar).exp(),
        beta2: p[2],
        sigma: p[3].exp(),
        rho: expit(p[4]),
    };
    let nll = |p: &[f64]| {
        let m = to_model(p);
        if !(m.rho < 1.0) || !m.beta1.is_finite() {
            return f64::INFINITY;
        }
        -loglik_unchecked(&m, &batches)
    };
    let report = |p: &[f64]| {
        let m = to_model(p);
        vec![m.beta0, m.beta1, m.beta2, m.sigma, m.rho]
    };
    let opt = optim::minimize(&nll, &start, options);
    let names = ["beta0", "beta1", "beta2", "sigma", "rho"].map(String::from).to_vec();
    let fit = summarize("addt_parametric", names, &nll, &report, &opt, options.seed);
    Ok(AddtFit { model: AddtModel::Parametric(to_model(&opt.x)), fit })
}

/// Start from per-condition slopes on √t and a log-linear regression of their
/// magnitudes on x.
fn parametric_start(data: &AddtDataset, conds: &[f64], xbar: f64) -> (Vec<f64>, f64) {
    let base: Vec<f64> = data.baseline_records().iter().map(|r| r.response).collect();
    let beta0 = if base.is_empty() {
        // pooled intercept of y on √t
        let (tau, y): (Vec<f64>, Vec<f64>) = data.records.iter().map(|r| (r.time.sqrt(), r.response)).unzip();
        let (a, _) = ols(&tau, &y);
        a
    } else {
        stats::mean(&base)
    };
    let mut slopes = Vec::new();
    for &c in conds {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for r in data.records.iter().filter(|r| r.condition == c && r.time > 0.0) {
            let tau = r.time.sqrt();
            sxy += tau * (r.response - beta0);
            sxx += tau * tau;
        }
        slopes.push(sxy / sxx);
    }
    let sign = if slopes.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let floor = slopes.iter().map(|s| s.abs()).fold(0.0, f64::max).max(1e-12) * 1e-3;
    let logs: Vec<f64> = slopes.iter().map(|s| (sign * s).max(floor).ln()).collect();
    let xs: Vec<f64> = conds.iter().map(|x| x - xbar).collect();
    let (c, beta2) = ols(&xs, &logs);
    let resid: Vec<f64> = data
        .records
        .iter()
        .map(|r| r.response - beta0 - sign * (c + beta2 * (r.condition - xbar)).exp() * r.time.sqrt())
        .collect();
    let sd = stats::variance(&resid).sqrt().max(1e-6);
    (vec![beta0, c, beta2, sd.ln(), logit(0.2)], sign)
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = stats::mean(x);
    let my = stats::mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Failure-time CDF at transformed stress `x`.
pub fn addt_failure_cdf(fit: &AddtFit, d0: f64, x: f64, times: &[f64]) -> CdfCurve {
    let cdf = times.iter().map(|&t| fit.model.failure_prob(d0, x, t)).collect();
    CdfCurve::new(times.to_vec(), cdf)
}

/// The `q` quantile of the failure time at stress `x`, by bisection on the
/// CDF to a relative tolerance of 1e−8. `None` when the CDF never reaches `q`.
pub fn addt_quantile(fit: &AddtFit, d0: f64, x: f64, q: f64) -> Result<Option<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    let f = |t: f64| fit.model.failure_prob(d0, x, t);
    if f(0.0) >= q {
        return Ok(Some(0.0));
    }
    let mut hi = 1.0;
    while f(hi) < q {
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e300 {
            return Ok(None);
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// A balanced design: one batch of `reps` specimens per (temperature, time)
/// cell plus an unexposed baseline batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddtDesign {
    pub temps_c: Vec<f64>,
    pub times: Vec<f64>,
    pub reps: usize,
    #[serde(default)]
    pub baseline_reps: usize,
    #[serde(default = "default_baseline_temp")]
    pub baseline_temp_c: f64,
    #[serde(default = "default_sign")]
    pub sign: ArrheniusSign,
}

fn default_baseline_temp() -> f64 {
    25.0
}

fn default_sign() -> ArrheniusSign {
    ArrheniusSign::Negative
}

/// Draws a dataset from the parametric model; each batch shares a common
/// normal shock so that within-batch correlation is ρ.
pub fn simulate_addt(model: &AddtParametricModel, design: &AddtDesign, seed: u64) -> Result<AddtDataset> {
    model.check()?;
    let mut cells = Vec::new();
    if design.baseline_reps > 0 {
        cells.push((design.baseline_temp_c, 0.0, design.baseline_reps));
    }
    for &temp in &design.temps_c {
        for &t in &design.times {
            cells.push((temp, t, design.reps));
        }
    }
    let mut g = crate::rng::stream(seed, "addt-simulate", 0);
    let mut records = Vec::new();
    for (temp, t, n) in cells {
        let x = arrhenius_transform(temp, design.sign)?;
        let shared: f64 = g.sample(StandardNormal);
        for _ in 0..n {
            let own: f64 = g.sample(StandardNormal);
            let e = model.sigma * (model.rho.sqrt() * shared + (1.0 - model.rho).sqrt() * own);
            records.push(AddtRecord {
                condition: x,
                raw_condition: temp,
                time: t,
                batch_id: format!("{temp}C-{t}h"),
                response: model.mean(t, x) + e,
            });
        }
    }
    AddtDataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;

    fn dense_logpdf(r: &[f64], sigma: f64, rho: f64) -> f64 {
        let n = r.len();
        let cov = DMatrix::from_fn(n, n, |i, j| if i == j { sigma * sigma } else { rho * sigma * sigma });
        let chol = cov.cholesky().unwrap();
        let v = DVector::from_column_slice(r);
        let sol = chol.solve(&v);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + v.dot(&sol))
    }

    #[test]
    fn singleton_batch_is_univariate_normal() {
        for rho in [0.0, 0.3, 0.9] {
            assert_relative_eq!(equicorrelated_logpdf(&[0.7], 1.3, rho), stats::normal_logpdf(0.7, 0.0, 1.3), epsilon = 1e-14);
        }
    }

    #[test]
    fn determinant_for_pair() {
        // at r = 0 the density is −(n ln 2π + ln|Σ|)/2
        let lp = equicorrelated_logpdf(&[0.0, 0.0], 1.0, 0.5);
        let log_det = -2.0 * lp - 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(log_det.exp(), 0.75, epsilon = 1e-14);
    }

    #[test]
    fn rho_outside_unit_interval_is_rejected() {
        let rec = AddtRecord { condition: -35.0, raw_condition: 50.0, time: 1.0, batch_id: "a".into(), response: 1.0 };
        let data = AddtDataset::new(vec![rec]).unwrap();
        for rho in [-0.1, 1.0, 1.5] {
            let m = AddtParametricModel { beta0: 1.0, beta1: -1.0, beta2: 0.1, sigma: 1.0, rho };
            assert!(matches!(addt_parametric_loglik(&m, &data), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn mean_time_inverts_the_mean_path() {
        let m = AddtModel::Parametric(AddtParametricModel { beta0: 4.5, beta1: -1.657e5, beta2: 0.4786, sigma: 0.1, rho: 0.3 });
        let x = arrhenius_transform(60.0, ArrheniusSign::Negative).unwrap();
        let d0 = 4.5 + 0.5f64.ln();
        let t = m.mean_time_to(d0, x).unwrap();
        assert_relative_eq!(m.mean(t, x), d0, epsilon = 1e-12);
        assert_relative_eq!(m.failure_prob(d0, x, t), 0.5, epsilon = 1e-12);
        assert!(m.mean_time_to(5.0, x).is_none());
    }

    proptest! {
        #[test]
        fn closed_form_matches_dense(n in 1usize..=20, rho in 0.0f64..0.98, sigma in 0.05f64..5.0, seed in 0u64..1000) {
            let mut g = crate::rng::stream(seed, "equicorr", 0);
            let r: Vec<f64> = (0..n).map(|_| { let z: f64 = g.sample(StandardNormal); z * sigma * 2.0 }).collect();
            let a = equicorrelated_logpdf(&r, sigma, rho);
            let b = dense_logpdf(&r, sigma, rho);
            prop_assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

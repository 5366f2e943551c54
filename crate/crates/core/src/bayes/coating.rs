//! Hierarchical log-logistic model for coating degradation.
//!
//! `D_i(t) = α·e^{w_i} / (1 + exp[−(log t − μ − x_iᵀβ)/γ])` with `α < 0`,
//! `γ > 0`, unit effects `w_i ~ N(0, σ_w²)` and Gaussian measurement error.
//! Priors: normal on `log(−α)`, `μ`, `log γ` and each `β`; inverse gamma on
//! the standard deviations `σ_ε` and `σ_w`.

use super::{curvature_proposal, HierarchicalModel, PosteriorSamples};
use crate::curve::CdfCurve;
use crate::data::{FailureThreshold, RmdtDataset};
use crate::error::{Error, Result};
use crate::optim;
use crate::paths::{CoatingPath, PathModel};
use crate::stats;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoatingPriors {
    /// Variance of the normal priors.
    pub normal_variance: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
}

impl Default for CoatingPriors {
    fn default() -> Self {
        Self { normal_variance: 200.0, ig_shape: 0.001, ig_scale: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoatingSpec {
    /// Static covariates entering the location, already transformed.
    pub covariates: Vec<String>,
    #[serde(default)]
    pub priors: CoatingPriors,
}

/// One posterior draw of the global parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CoatingDraw {
    pub alpha: f64,
    pub mu: f64,
    pub gamma: f64,
    pub beta: Vec<f64>,
    pub sigma_eps: f64,
    pub sigma_w: f64,
}

impl CoatingDraw {
    pub fn location(&self, x: &[f64]) -> f64 {
        self.mu + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// `P(T ≤ t)` for a new unit with covariates `x`, integrating `w` exactly.
    pub fn failure_prob(&self, x: &[f64], d0: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let xi = (d0 / self.alpha).ln() + softplus(-(t.ln() - self.location(x)) / self.gamma);
        stats::norm_cdf(-xi / self.sigma_w)
    }

    fn path(&self, x: &[f64], w: f64) -> PathModel {
        PathModel::Coating(CoatingPath {
            asymptote: self.alpha,
            mu: self.mu,
            coef: self.beta.clone(),
            gamma: self.gamma,
            w,
            covariates: x.to_vec(),
        })
    }
}

/// `log(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct Unit {
    id: String,
    times: Vec<f64>,
    y: Vec<f64>,
    x: Vec<f64>,
}

/// Units are sampled through their log amplitude `aᵢ = log(−α) + wᵢ`,
/// which the data pin down directly; `log(−α)` is then the mean of the `aᵢ`.
/// Sampling `wᵢ` instead leaves a ridge along `(log(−α) + c, wᵢ − c)`.
pub struct CoatingModel {
    spec: CoatingSpec,
    units: Vec<Unit>,
}

/// Mean path given the unit's log amplitude `a = log(−α) + w`.
fn mean_path(g: &[f64], nb: usize, t: f64, x: &[f64], a: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let loc = g[1] + (0..nb).map(|k| g[3 + k] * x[k]).sum::<f64>();
    let gamma = g[2].exp();
    -a.exp() / (1.0 + (-(t.ln() - loc) / gamma).exp())
}

impl CoatingModel {
    pub fn new(spec: CoatingSpec, data: &RmdtDataset) -> Result<Self> {
        data.validate()?;
        let p = &spec.priors;
        if !(p.normal_variance > 0.0 && p.ig_shape > 0.0 && p.ig_scale > 0.0) {
            return Err(Error::Validation("coating priors need positive variance, shape and scale".into()));
        }
        let units = data
            .units
            .iter()
            .map(|u| {
                let x = spec.covariates.iter().map(|c| u.covariate(c)).collect::<Result<Vec<_>>>()?;
                Ok(Unit { id: u.unit_id.clone(), times: u.times.clone(), y: u.measurements.clone(), x })
            })
            .collect::<Result<Vec<_>>>()?;
        if units.iter().flat_map(|u| &u.y).all(|&y| y >= 0.0) {
            return Err(Error::Validation("coating model expects a decreasing response (some values below zero)".into()));
        }
        Ok(Self { spec, units })
    }

    fn nb(&self) -> usize {
        self.spec.covariates.len()
    }

    pub fn covariates_of(&self, unit_id: &str) -> Result<Vec<f64>> {
        self.units
            .iter()
            .find(|u| u.id == unit_id)
            .map(|u| u.x.clone())
            .ok_or_else(|| Error::Validation(format!("unknown unit {unit_id:?}")))
    }

    fn rss(&self, g: &[f64], i: usize, a: f64) -> f64 {
        let u = &self.units[i];
        u.times.iter().zip(&u.y).map(|(&t, &y)| (y - mean_path(g, self.nb(), t, &u.x, a)).powi(2)).sum()
    }

    /// Pooled least squares with `w = 0`, then per-unit `w`.
    fn least_squares_start(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let nb = self.nb();
        let ys: Vec<f64> = self.units.iter().flat_map(|u| u.y.iter().copied()).collect();
        let depth = ys.iter().fold(0.0f64, |m, &y| m.max(-y));
        let mut times: Vec<f64> = self.units.iter().flat_map(|u| u.times.iter().copied()).filter(|&t| t > 0.0).collect();
        times.sort_by(f64::total_cmp);
        let mid = stats::quantile_sorted(&times, 0.5);
        let mut x0 = vec![(1.2 * depth).ln(), mid.ln(), 0.0];
        x0.extend(std::iter::repeat_n(0.0, nb));
        let pooled = |p: &[f64]| -> f64 {
            let mut g = p.to_vec();
            g.extend([0.0, 0.0]);
            (0..self.units.len()).map(|i| self.rss(&g, i, p[0])).sum()
        };
        let fit = optim::nelder_mead(&pooled, &x0, 0.3, 1e-12, 20_000);
        let fit = optim::nelder_mead(&pooled, &fit.x, 0.1, 1e-12, 20_000);
        let mut g = fit.x;
        g.extend([0.0, 0.0]);
        let la = g[0];
        let amps: Vec<f64> =
            (0..self.units.len()).map(|i| optim::brent_minimize(|a| self.rss(&g, i, a), la - 3.0, la + 3.0, 1e-8).0).collect();
        let ws: Vec<f64> = amps.iter().map(|a| a - la).collect();
        let n_obs = ys.len() as f64;
        let rss: f64 = amps.iter().enumerate().map(|(i, &a)| self.rss(&g, i, a)).sum();
        let sigma_eps = (rss / n_obs).sqrt().max(1e-6 * depth.max(1e-300));
        let sigma_w = if ws.len() > 1 { stats::variance(&ws).sqrt().max(0.01) } else { 0.1 };
        g[3 + nb] = sigma_eps.ln();
        g[4 + nb] = sigma_w.ln();
        (g, amps.into_iter().map(|a| vec![a]).collect())
    }

    /// Unpacks a sampler-scale global vector.
    pub fn draw_of(&self, g: &[f64]) -> CoatingDraw {
        let nb = self.nb();
        CoatingDraw {
            alpha: -g[0].exp(),
            mu: g[1],
            gamma: g[2].exp(),
            beta: g[3..3 + nb].to_vec(),
            sigma_eps: g[3 + nb].exp(),
            sigma_w: g[4 + nb].exp(),
        }
    }
}

impl HierarchicalModel for CoatingModel {
    fn global_dim(&self) -> usize {
        5 + self.nb()
    }

    fn unit_dim(&self) -> usize {
        1
    }

    fn unit_ids(&self) -> Vec<String> {
        self.units.iter().map(|u| u.id.clone()).collect()
    }

    fn log_prior(&self, g: &[f64]) -> f64 {
        let nb = self.nb();
        let p = &self.spec.priors;
        let sd = p.normal_variance.sqrt();
        let normal: f64 = g[..3 + nb].iter().map(|&v| stats::normal_logpdf(v, 0.0, sd)).sum();
        // IG(a, b) on σ, sampled as log σ: −(a+1)·log σ − b/σ + log σ
        let ig = |ls: f64| -p.ig_shape * ls - p.ig_scale * (-ls).exp();
        let total = normal + ig(g[3 + nb]) + ig(g[4 + nb]);
        if total.is_finite() {
            total
        } else {
            f64::NEG_INFINITY
        }
    }

    fn unit_log_density(&self, g: &[f64], i: usize, u: &[f64]) -> f64 {
        let nb = self.nb();
        let (ls_eps, ls_w) = (g[3 + nb], g[4 + nb]);
        let a = u[0];
        let unit = &self.units[i];
        let se = ls_eps.exp();
        let mut ll = stats::normal_logpdf(a - g[0], 0.0, ls_w.exp());
        for (&t, &y) in unit.times.iter().zip(&unit.y) {
            let r = (y - mean_path(g, nb, t, &unit.x, a)) / se;
            ll += -0.5 * r * r - ls_eps - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        if ll.is_finite() {
            ll
        } else {
            f64::NEG_INFINITY
        }
    }

    fn initial_state(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.least_squares_start()
    }

    fn initial_proposal(&self) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (g, u) = self.least_squares_start();
        curvature_proposal(self, &g, &u, 0.01)
    }

    fn report_names(&self) -> Vec<String> {
        let mut names = vec!["alpha".to_string(), "mu".into(), "gamma".into()];
        names.extend(self.spec.covariates.iter().map(|c| format!("beta_{c}")));
        names.extend(["sigma_eps".to_string(), "sigma_w".into()]);
        names.extend(self.units.iter().map(|u| format!("w[{}]", u.id)));
        names
    }

    fn report(&self, g: &[f64], units: &[Vec<f64>]) -> Vec<f64> {
        let d = self.draw_of(g);
        let mut row = vec![d.alpha, d.mu, d.gamma];
        row.extend(d.beta);
        row.extend([d.sigma_eps, d.sigma_w]);
        row.extend(units.iter().map(|u| u[0] - g[0]));
        row
    }

    fn unit_location_scale(&self, g: &[f64], _unit: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
        Some((vec![g[0]], DMatrix::from_element(1, 1, g[4 + self.nb()].exp())))
    }
}

/// Global parameter draws reconstructed from named posterior columns.
pub fn coating_draws(samples: &PosteriorSamples, spec: &CoatingSpec) -> Result<Vec<CoatingDraw>> {
    let idx = |n: &str| samples.index(n);
    let (ia, im, ig, ie, iw) = (idx("alpha")?, idx("mu")?, idx("gamma")?, idx("sigma_eps")?, idx("sigma_w")?);
    let ib = spec.covariates.iter().map(|c| idx(&format!("beta_{c}"))).collect::<Result<Vec<_>>>()?;
    Ok((0..samples.n_draws())
        .map(|d| CoatingDraw {
            alpha: samples.value(d, ia),
            mu: samples.value(d, im),
            gamma: samples.value(d, ig),
            beta: ib.iter().map(|&k| samples.value(d, k)).collect(),
            sigma_eps: samples.value(d, ie),
            sigma_w: samples.value(d, iw),
        })
        .collect())
}

fn check_threshold(d0: f64) -> Result<()> {
    if !(d0 < 0.0 && d0.is_finite()) {
        return Err(Error::Domain(format!("coating threshold must be negative, got {d0}")));
    }
    Ok(())
}

/// Pointwise mean and central `level` interval of per-draw curves; the
/// interval is widened to contain the mean where skewness puts it outside.
fn summarize_curves(times: &[f64], per_draw: &[Vec<f64>], level: f64) -> Result<CdfCurve> {
    let a = (1.0 - level) / 2.0;
    let mut cdf = Vec::with_capacity(times.len());
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for k in 0..times.len() {
        let mut col: Vec<f64> = per_draw.iter().map(|v| v[k]).collect();
        col.sort_by(f64::total_cmp);
        let m = stats::mean(&col);
        cdf.push(m);
        lower.push(stats::quantile_sorted(&col, a).min(m));
        upper.push(stats::quantile_sorted(&col, 1.0 - a).max(m));
    }
    Ok(CdfCurve::new(times.to_vec(), cdf).with_bounds(lower, upper, level))
}

fn check_grid(times: &[f64], level: f64) -> Result<()> {
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Domain("time grid must be nonempty and positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!("credible level {level} must be in (0, 1)")));
    }
    Ok(())
}

/// Posterior predictive failure-time CDF of a new unit with covariates `x`:
/// the posterior mean of `1 − Φ(ξ_t/σ_w)`, with pointwise credible bounds.
pub fn posterior_cdf(
    samples: &PosteriorSamples,
    spec: &CoatingSpec,
    x: &[f64],
    d0: f64,
    times: &[f64],
    level: f64,
) -> Result<CdfCurve> {
    check_threshold(d0)?;
    check_grid(times, level)?;
    if x.len() != spec.covariates.len() {
        return Err(Error::Validation(format!("expected {} covariate values, got {}", spec.covariates.len(), x.len())));
    }
    let draws = coating_draws(samples, spec)?;
    let per_draw: Vec<Vec<f64>> = draws.iter().map(|d| times.iter().map(|&t| d.failure_prob(x, d0, t)).collect()).collect();
    summarize_curves(times, &per_draw, level)
}

/// Whose remaining life is predicted.
#[derive(Debug, Clone, PartialEq)]
pub enum RulTarget {
    /// A tested unit, using its sampled random effect.
    Unit(String),
    /// An untested unit with these covariates; `w` is integrated out.
    NewUnit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulOutput {
    /// `P(T ≤ t₀ + s | T > t₀)` over the `s` grid.
    pub curve: CdfCurve,
    /// Draws under which the unit had already failed by `t₀`.
    pub excluded: usize,
    pub used: usize,
}

/// Remaining-useful-life distribution at age `t0` over horizons `s`.
///
/// For a tested unit each draw gives a deterministic path, so the estimate
/// averages crossing indicators over draws that have not failed by `t0`;
/// those that have are excluded and counted, and no bounds are reported.
/// For a new unit each draw gives `(F(t₀+s) − F(t₀))/(1 − F(t₀))`.
pub fn rul_distribution(
    samples: &PosteriorSamples,
    spec: &CoatingSpec,
    target: &RulTarget,
    t0: f64,
    horizons: &[f64],
    d0: f64,
    level: f64,
) -> Result<RulOutput> {
    check_threshold(d0)?;
    check_grid(horizons, level)?;
    if !(t0 >= 0.0 && t0.is_finite()) {
        return Err(Error::Domain(format!("current age {t0} must be nonnegative")));
    }
    let draws = coating_draws(samples, spec)?;
    let threshold = FailureThreshold::decreasing(d0);
    match target {
        RulTarget::Unit(id) => {
            let w_col = samples.index(&format!("w[{id}]"))?;
            let x = unit_covariates(samples, spec, id)?;
            let mut crossings = Vec::with_capacity(draws.len());
            let mut excluded = 0;
            for (k, d) in draws.iter().enumerate() {
                let t = d.path(&x, samples.value(k, w_col)).first_crossing_time(&threshold)?.unwrap_or(f64::INFINITY);
                if t <= t0 {
                    excluded += 1;
                } else {
                    crossings.push(t);
                }
            }
            if crossings.is_empty() {
                return Err(Error::Validation(format!("unit {id} has failed by age {t0} under every posterior draw")));
            }
            crossings.sort_by(f64::total_cmp);
            let n = crossings.len() as f64;
            let cdf = horizons.iter().map(|&s| crossings.partition_point(|&t| t <= t0 + s) as f64 / n).collect();
            Ok(RulOutput { curve: CdfCurve::new(horizons.to_vec(), cdf), excluded, used: crossings.len() })
        }
        RulTarget::NewUnit(x) => {
            if x.len() != spec.covariates.len() {
                return Err(Error::Validation(format!("expected {} covariate values", spec.covariates.len())));
            }
            let mut per_draw = Vec::with_capacity(draws.len());
            let mut excluded = 0;
            for d in &draws {
                let f0 = d.failure_prob(x, d0, t0);
                if f0 >= 1.0 {
                    excluded += 1;
                    continue;
                }
                per_draw.push(horizons.iter().map(|&s| ((d.failure_prob(x, d0, t0 + s) - f0) / (1.0 - f0)).clamp(0.0, 1.0)).collect());
            }
            if per_draw.is_empty() {
                return Err(Error::Validation(format!("every posterior draw fails by age {t0}")));
            }
            let used = per_draw.len();
            Ok(RulOutput { curve: summarize_curves(horizons, &per_draw, level)?, excluded, used })
        }
    }
}

/// Covariates are not stored with the draws; tested units carry them in
/// `x[<unit>]` columns only when written by [`attach_covariates`].
fn unit_covariates(samples: &PosteriorSamples, spec: &CoatingSpec, id: &str) -> Result<Vec<f64>> {
    spec.covariates
        .iter()
        .map(|c| {
            let p = samples.index(&format!("x_{c}[{id}]"))?;
            Ok(samples.value(0, p))
        })
        .collect()
}

/// Appends each tested unit's covariate values as constant columns, so the
/// draws alone suffice for per-unit predictions.
pub fn attach_covariates(samples: &mut PosteriorSamples, model: &CoatingModel) {
    let mut extra_names = Vec::new();
    let mut extra_values = Vec::new();
    for u in &model.units {
        for (c, v) in model.spec.covariates.iter().zip(&u.x) {
            extra_names.push(format!("x_{c}[{}]", u.id));
            extra_values.push(*v);
        }
    }
    if extra_names.is_empty() {
        return;
    }
    let np = samples.n_params();
    let mut draws = Vec::with_capacity(samples.n_draws() * (np + extra_names.len()));
    for d in 0..samples.n_draws() {
        draws.extend_from_slice(&samples.draws[d * np..(d + 1) * np]);
        draws.extend_from_slice(&extra_values);
    }
    samples.draws = draws;
    samples.names.extend(extra_names);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn draw() -> CoatingDraw {
        CoatingDraw { alpha: -0.5, mu: 4.0, gamma: 0.3, beta: vec![0.2], sigma_eps: 0.01, sigma_w: 0.2 }
    }

    #[test]
    fn failure_prob_matches_crossing_of_sampled_paths() {
        // P(T ≤ t) equals P(w ≥ ξ_t) under w ~ N(0, σ_w²)
        let d = draw();
        let x = [1.0];
        let th = FailureThreshold::decreasing(-0.3);
        let t = 80.0;
        let n = 20_000;
        let hits = (0..n)
            .filter(|&k| {
                let w = d.sigma_w * stats::norm_ppf((k as f64 + 0.5) / n as f64);
                d.path(&x, w).first_crossing_time(&th).unwrap().is_some_and(|c| c <= t)
            })
            .count();
        assert_relative_eq!(d.failure_prob(&x, -0.3, t), hits as f64 / n as f64, epsilon = 1e-3);
    }

    #[test]
    fn failure_prob_limits() {
        let d = draw();
        assert_eq!(d.failure_prob(&[0.0], -0.3, 0.0), 0.0);
        // at D₀ = α the limit is 1/2
        assert_relative_eq!(d.failure_prob(&[0.0], -0.5, 1e12), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn softplus_is_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}

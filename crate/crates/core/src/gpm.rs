//! Mixed-effects general path models fitted by maximum likelihood.
//!
//! A unit's path is `D(t; α, βᵢ)` with fixed effects `α` and random effects
//! `βᵢ ~ N(μ_β, Σ_β)`; observations add iid `N(0, σ_ε²)` noise. The marginal
//! likelihood integrates each unit's random effects by adaptive
//! Gauss–Hermite quadrature.
//!
//! The `linear_log_rate` family (`D = a + exp(b)·t` with `b` random) gives the
//! lognormal-rate model whose failure CDF has the closed form in
//! [`failure_cdf_linear`]. Note the distinction from the `linear` family, in
//! which the slope itself is normal.

use crate::curve::CdfCurve;
use crate::data::{arrhenius_transform, ArrheniusSign, FailureThreshold, RmdtDataset, UnitSeries};
use crate::error::{Error, Result};
use crate::fit::{self, FitResult};
use crate::optim::{self, OptimOptions};
use crate::paths::{DeviceBPath, LinearPath, LogLogisticPath, ParisPath, PathModel};
use crate::quadrature::{self, TensorRule};
use crate::rng;
use crate::stats;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GpmFamily {
    /// `intercept + slope·t`
    Linear,
    /// `intercept + exp(log_slope)·t`
    LinearLogRate,
    /// Paris-law crack growth; parameters `log_theta1`, `theta2`.
    Paris { initial: f64, stress: f64 },
    /// Parameters `asymptote`, `log_scale`, `log_shape`.
    LogLogistic,
    /// Device-B power drop; parameters `beta1`, `beta2`, `activation`. The
    /// unit temperature comes from the accelerator covariate.
    DeviceB { baseline_temp_c: f64 },
}

impl GpmFamily {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            GpmFamily::Linear => &["intercept", "slope"],
            GpmFamily::LinearLogRate => &["intercept", "log_slope"],
            GpmFamily::Paris { .. } => &["log_theta1", "theta2"],
            GpmFamily::LogLogistic => &["asymptote", "log_scale", "log_shape"],
            GpmFamily::DeviceB { .. } => &["beta1", "beta2", "activation"],
        }
    }

    /// The path for full family parameters `p` at transformed stress `x`.
    pub fn path(&self, p: &[f64], x: Option<f64>, baseline_x: f64) -> PathModel {
        match *self {
            GpmFamily::Linear => PathModel::Linear(LinearPath { intercept: p[0], slope: p[1] }),
            GpmFamily::LinearLogRate => PathModel::Linear(LinearPath { intercept: p[0], slope: p[1].exp() }),
            GpmFamily::Paris { initial, stress } => {
                PathModel::Paris(ParisPath { theta1: p[0].exp(), theta2: p[1], initial, stress })
            }
            GpmFamily::LogLogistic => {
                PathModel::LogLogistic(LogLogisticPath { asymptote: p[0], scale: p[1].exp(), shape: p[2].exp() })
            }
            GpmFamily::DeviceB { .. } => PathModel::DeviceB(DeviceBPath {
                beta1: p[0],
                beta2: p[1],
                activation: p[2],
                baseline_x,
                x: x.unwrap_or(baseline_x),
            }),
        }
    }
}

impl GpmFamily {
    /// Calls `f(j, D(t_j))` for every time, evaluating shared factors once.
    fn for_each_mean<F: FnMut(usize, f64)>(&self, p: &[f64], x: Option<f64>, baseline_x: f64, times: &[f64], mut f: F) {
        match self {
            GpmFamily::Linear => times.iter().enumerate().for_each(|(j, t)| f(j, p[0] + p[1] * t)),
            GpmFamily::LinearLogRate => {
                let slope = p[1].exp();
                times.iter().enumerate().for_each(|(j, t)| f(j, p[0] + slope * t));
            }
            GpmFamily::DeviceB { .. } => {
                let rate = (p[0] + p[2] * (baseline_x - x.unwrap_or(baseline_x))).exp();
                let scale = p[1].exp();
                times.iter().enumerate().for_each(|(j, t)| f(j, scale * (-(rate * t)).exp_m1()));
            }
            _ => {
                let path = self.path(p, x, baseline_x);
                times.iter().enumerate().for_each(|(j, t)| f(j, mean_value(&path, *t)));
            }
        }
    }
}

/// Covariate driving an Arrhenius acceleration (temperature in °C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accelerator {
    pub covariate: String,
    #[serde(default = "positive_sign")]
    pub sign: ArrheniusSign,
}

fn positive_sign() -> ArrheniusSign {
    ArrheniusSign::Positive
}

fn default_order() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec")]
pub struct GpmModelSpec {
    #[serde(flatten)]
    pub family: GpmFamily,
    /// Family parameters that vary by unit; the rest are fixed effects.
    pub random: Vec<String>,
    #[serde(default)]
    pub accelerator: Option<Accelerator>,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
}

/// Flat wire form, so that unknown keys are rejected alongside the
/// flattened family tag.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    family: String,
    initial: Option<f64>,
    stress: Option<f64>,
    baseline_temp_c: Option<f64>,
    random: Vec<String>,
    #[serde(default)]
    accelerator: Option<Accelerator>,
    #[serde(default = "default_order")]
    quadrature_order: usize,
}

impl TryFrom<RawModelSpec> for GpmModelSpec {
    type Error = String;

    fn try_from(r: RawModelSpec) -> std::result::Result<Self, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("family {:?} needs `{name}`", r.family));
        let family = match r.family.as_str() {
            "linear" => GpmFamily::Linear,
            "linear_log_rate" => GpmFamily::LinearLogRate,
            "paris" => GpmFamily::Paris { initial: need(r.initial, "initial")?, stress: need(r.stress, "stress")? },
            "log_logistic" => GpmFamily::LogLogistic,
            "device_b" => GpmFamily::DeviceB { baseline_temp_c: need(r.baseline_temp_c, "baseline_temp_c")? },
            other => return Err(format!("unknown family {other:?}")),
        };
        let extra = match family {
            GpmFamily::Paris { .. } => r.baseline_temp_c.map(|_| "baseline_temp_c"),
            GpmFamily::DeviceB { .. } => r.initial.or(r.stress).map(|_| "initial/stress"),
            _ => r.initial.or(r.stress).or(r.baseline_temp_c).map(|_| "family constants"),
        };
        if let Some(key) = extra {
            return Err(format!("family {:?} does not take {key}", r.family));
        }
        Ok(Self { family, random: r.random, accelerator: r.accelerator, quadrature_order: r.quadrature_order })
    }
}

impl GpmModelSpec {
    pub fn new(family: GpmFamily, random: &[&str]) -> Self {
        Self { family, random: random.iter().map(|s| s.to_string()).collect(), accelerator: None, quadrature_order: 15 }
    }

    pub fn with_accelerator(mut self, covariate: &str, sign: ArrheniusSign) -> Self {
        self.accelerator = Some(Accelerator { covariate: covariate.into(), sign });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.family.param_names();
        for r in &self.random {
            if !names.contains(&r.as_str()) {
                return Err(Error::Validation(format!("unknown random parameter {r:?}; family has {names:?}")));
            }
        }
        let mut seen = self.random.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.random.len() {
            return Err(Error::Validation("duplicate random parameter".into()));
        }
        if self.quadrature_order == 0 {
            return Err(Error::Validation("quadrature order must be positive".into()));
        }
        match (&self.family, &self.accelerator) {
            (GpmFamily::DeviceB { .. }, None) => Err(Error::Validation("device_b family requires an accelerator covariate".into())),
            (GpmFamily::DeviceB { .. }, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Validation("accelerator is only supported by the device_b family".into())),
            _ => Ok(()),
        }
    }

    pub fn random_indices(&self) -> Vec<usize> {
        let names = self.family.param_names();
        self.random.iter().map(|r| names.iter().position(|n| n == r).expect("validated")).collect()
    }

    pub fn fixed_indices(&self) -> Vec<usize> {
        let random = self.random_indices();
        (0..self.family.param_names().len()).filter(|i| !random.contains(i)).collect()
    }

    fn baseline_x(&self) -> Result<f64> {
        match (&self.family, &self.accelerator) {
            (GpmFamily::DeviceB { baseline_temp_c }, Some(a)) => arrhenius_transform(*baseline_temp_c, a.sign),
            _ => Ok(0.0),
        }
    }

    /// Transformed stress from a raw covariate value.
    pub fn stress(&self, raw: Option<f64>) -> Result<Option<f64>> {
        match (&self.accelerator, raw) {
            (Some(a), Some(v)) => Ok(Some(arrhenius_transform(v, a.sign)?)),
            (Some(a), None) => Err(Error::Validation(format!("accelerator covariate {:?} not supplied", a.covariate))),
            (None, _) => Ok(None),
        }
    }

    fn unit_stress(&self, unit: &UnitSeries) -> Result<Option<f64>> {
        match &self.accelerator {
            Some(a) => self.stress(Some(unit.covariate(&a.covariate)?)),
            None => Ok(None),
        }
    }

    /// Names of the reported parameters, in [`FitResult`] order.
    pub fn reported_names(&self) -> Vec<String> {
        let names = self.family.param_names();
        let mut out: Vec<String> = self.fixed_indices().iter().map(|&i| names[i].to_string()).collect();
        out.extend(self.random.iter().map(|r| format!("mu_{r}")));
        out.extend(self.random.iter().map(|r| format!("sd_{r}")));
        for i in 0..self.random.len() {
            for j in 0..i {
                out.push(format!("corr_{}_{}", self.random[j], self.random[i]));
            }
        }
        out.push("sigma_eps".into());
        out
    }

    pub fn n_internal(&self) -> usize {
        let d = self.random.len();
        self.fixed_indices().len() + d + d * (d + 1) / 2 + 1
    }
}

/// Natural-scale GPM parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GpmParams {
    pub fixed: Vec<f64>,
    pub mu: Vec<f64>,
    /// Lower Cholesky factor of `Σ_β`.
    pub chol: DMatrix<f64>,
    pub sigma_eps: f64,
}

impl GpmParams {
    /// Internal layout: fixed effects, `μ_β`, `ln L_kk` then the strictly
    /// lower entries of `L` row by row, `ln σ_ε`.
    pub fn from_internal(spec: &GpmModelSpec, theta: &[f64]) -> Result<Self> {
        if theta.len() != spec.n_internal() {
            return Err(Error::Validation(format!("expected {} parameters, got {}", spec.n_internal(), theta.len())));
        }
        let nf = spec.fixed_indices().len();
        let d = spec.random.len();
        let mut it = theta.iter().copied();
        let fixed: Vec<f64> = it.by_ref().take(nf).collect();
        let mu: Vec<f64> = it.by_ref().take(d).collect();
        let mut chol = DMatrix::zeros(d, d);
        for k in 0..d {
            chol[(k, k)] = it.next().expect("length checked").exp();
        }
        for i in 0..d {
            for j in 0..i {
                chol[(i, j)] = it.next().expect("length checked");
            }
        }
        let sigma_eps = it.next().expect("length checked").exp();
        Ok(Self { fixed, mu, chol, sigma_eps })
    }

    pub fn to_internal(&self) -> Vec<f64> {
        let d = self.mu.len();
        let mut v = self.fixed.clone();
        v.extend(&self.mu);
        v.extend((0..d).map(|k| self.chol[(k, k)].ln()));
        for i in 0..d {
            for j in 0..i {
                v.push(self.chol[(i, j)]);
            }
        }
        v.push(self.sigma_eps.ln());
        v
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn reported(&self) -> Vec<f64> {
        let d = self.mu.len();
        let cov = self.covariance();
        let sd: Vec<f64> = (0..d).map(|k| cov[(k, k)].sqrt()).collect();
        let mut v = self.fixed.clone();
        v.extend(&self.mu);
        v.extend(&sd);
        for i in 0..d {
            for j in 0..i {
                v.push(cov[(i, j)] / (sd[i] * sd[j]));
            }
        }
        v.push(self.sigma_eps);
        v
    }

    /// Builds parameters from reported names (`mu_*`, `sd_*`, `corr_*_*`,
    /// `sigma_eps`, fixed effects). Missing correlations default to zero;
    /// zero standard deviations are allowed (degenerate random effects).
    pub fn from_reported(spec: &GpmModelSpec, values: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            values.get(name).copied().ok_or_else(|| Error::Validation(format!("missing parameter {name:?}")))
        };
        for k in values.keys() {
            if !spec.reported_names().contains(k) {
                return Err(Error::Validation(format!("unknown parameter {k:?}")));
            }
        }
        let names = spec.family.param_names();
        let fixed = spec.fixed_indices().iter().map(|&i| get(names[i])).collect::<Result<Vec<_>>>()?;
        let mu = spec.random.iter().map(|r| get(&format!("mu_{r}"))).collect::<Result<Vec<_>>>()?;
        let sd = spec.random.iter().map(|r| get(&format!("sd_{r}"))).collect::<Result<Vec<_>>>()?;
        if sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Domain("random-effect standard deviations must be nonnegative".into()));
        }
        let d = sd.len();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            cov[(i, i)] = sd[i] * sd[i];
            for j in 0..i {
                let name = format!("corr_{}_{}", spec.random[j], spec.random[i]);
                let r = values.get(&name).copied().unwrap_or(0.0);
                if !(r.abs() < 1.0) {
                    return Err(Error::Domain(format!("{name} must lie in (-1, 1)")));
                }
                cov[(i, j)] = r * sd[i] * sd[j];
                cov[(j, i)] = cov[(i, j)];
            }
        }
        let sigma_eps = get("sigma_eps")?;
        if !(sigma_eps >= 0.0) {
            return Err(Error::Domain("sigma_eps must be nonnegative".into()));
        }
        Ok(Self { fixed, mu, chol: semidefinite_cholesky(&cov), sigma_eps })
    }

    pub fn from_fit(spec: &GpmModelSpec, fit: &FitResult) -> Result<Self> {
        let map = fit.parameters.iter().cloned().zip(fit.estimates.iter().copied()).collect();
        Self::from_reported(spec, &map)
    }

    /// Full family parameter vector with random effects `b`.
    fn full(&self, spec: &GpmModelSpec, b: &[f64], out: &mut [f64]) {
        for (&i, v) in spec.fixed_indices().iter().zip(&self.fixed) {
            out[i] = *v;
        }
        for (&i, v) in spec.random_indices().iter().zip(b) {
            out[i] = *v;
        }
    }
}

/// Cholesky factor that tolerates zero pivots (columns of zeros).
fn semidefinite_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let s: f64 = (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum();
        let pivot = (a[(j, j)] - s).max(0.0).sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            l[(i, j)] = if pivot > 0.0 { (a[(i, j)] - s) / pivot } else { 0.0 };
        }
    }
    l
}

struct UnitCtx<'a> {
    id: &'a str,
    times: &'a [f64],
    ys: &'a [f64],
    x: Option<f64>,
}

fn unit_contexts<'a>(spec: &GpmModelSpec, data: &'a RmdtDataset) -> Result<Vec<UnitCtx<'a>>> {
    data.units
        .iter()
        .map(|u| Ok(UnitCtx { id: &u.unit_id, times: &u.times, ys: &u.measurements, x: spec.unit_stress(u)? }))
        .collect()
}

/// Mean path value, with a blown-up Paris path mapped to +∞.
fn mean_value(path: &PathModel, t: f64) -> f64 {
    match path.evaluate(t) {
        Ok(v) => v,
        Err(Error::Singularity { .. }) => f64::INFINITY,
        Err(_) => f64::NAN,
    }
}

struct Evaluator<'a> {
    spec: &'a GpmModelSpec,
    params: GpmParams,
    fixed_idx: Vec<usize>,
    random_idx: Vec<usize>,
    scale: Vec<f64>,
    baseline_x: f64,
    rule: &'a TensorRule,
    log_det_l: f64,
}

impl Evaluator<'_> {
    fn unit_loglik(&self, u: &UnitCtx) -> Result<f64> {
        let d = self.params.mu.len();
        let np = self.spec.family.param_names().len();
        let l = &self.params.chol;
        let sigma = self.params.sigma_eps;
        let log_norm = -(u.times.len() as f64) * (stats::LN_SQRT_2PI + sigma.ln());
        let log_f = |b: &[f64]| -> f64 {
            let mut full = [0.0; 4];
            for (&i, v) in self.fixed_idx.iter().zip(&self.params.fixed) {
                full[i] = *v;
            }
            for (&i, v) in self.random_idx.iter().zip(b) {
                full[i] = *v;
            }
            let mut ss = 0.0;
            self.spec.family.for_each_mean(&full[..np], u.x, self.baseline_x, u.times, |j, m| {
                let r = u.ys[j] - m;
                ss += r * r;
            });
            // N(μ, LLᵀ) log-density via forward substitution
            let mut z = [0.0; 4];
            let mut q = 0.0;
            for i in 0..d {
                let s: f64 = (0..i).map(|k| l[(i, k)] * z[k]).sum();
                z[i] = (b[i] - self.params.mu[i] - s) / l[(i, i)];
                q += z[i] * z[i];
            }
            let prior = -0.5 * q - self.log_det_l - d as f64 * stats::LN_SQRT_2PI;
            if ss.is_nan() {
                f64::NEG_INFINITY
            } else {
                log_norm - 0.5 * ss / (sigma * sigma) + prior
            }
        };
        quadrature::adaptive_log_integral(&log_f, &self.params.mu, &self.scale, self.rule)
            .filter(|v| !v.is_nan())
            .ok_or_else(|| Error::Numerical(format!("random-effect mode search failed for unit {}", u.id)))
    }
}

/// Quadrature rule for the spec's order and random-effect dimension, with
/// negligible tensor corners pruned.
pub fn quadrature_rule(spec: &GpmModelSpec) -> TensorRule {
    let mut rule = quadrature::tensor_rule(spec.quadrature_order, spec.random.len());
    if rule.dim > 1 {
        let keep: Vec<bool> = rule
            .points
            .iter()
            .zip(&rule.log_weights)
            .map(|(z, lw)| lw - 0.5 * z.iter().map(|v| v * v).sum::<f64>() > -25.0)
            .collect();
        let mut k = keep.iter();
        rule.points.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        rule.log_weights.retain(|_| *k.next().unwrap());
    }
    rule
}

/// Marginal log-likelihood at the internal parameter vector `theta`.
pub fn marginal_log_likelihood(spec: &GpmModelSpec, theta: &[f64], data: &RmdtDataset) -> Result<f64> {
    spec.validate()?;
    let units = unit_contexts(spec, data)?;
    let rule = quadrature_rule(spec);
    marginal_loglik_with(spec, theta, &units, &rule)
}

fn marginal_loglik_with(spec: &GpmModelSpec, theta: &[f64], units: &[UnitCtx], rule: &TensorRule) -> Result<f64> {
    let params = GpmParams::from_internal(spec, theta)?;
    let d = params.mu.len();
    if (0..d).any(|k| !(params.chol[(k, k)] > 0.0 && params.chol[(k, k)].is_finite())) {
        return Err(Error::Domain("random-effect covariance is not positive definite".into()));
    }
    let log_det_l = (0..d).map(|k| params.chol[(k, k)].ln()).sum();
    let cov = params.covariance();
    let scale = (0..d).map(|k| cov[(k, k)].sqrt().max(1e-12)).collect();
    let ev = Evaluator {
        spec,
        params,
        fixed_idx: spec.fixed_indices(),
        random_idx: spec.random_indices(),
        scale,
        baseline_x: spec.baseline_x()?,
        rule,
        log_det_l,
    };
    let terms: Vec<Result<f64>> = units.par_iter().map(|u| ev.unit_loglik(u)).collect();
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpmFitOptions {
    pub optim: OptimOptions,
    /// Starting values by reported name; data-driven when absent.
    pub start: Option<BTreeMap<String, f64>>,
}

fn least_squares<F: Fn(&[f64]) -> f64>(rss: &F, x0: &[f64]) -> Vec<f64> {
    let opts = OptimOptions { restarts: 0, ..Default::default() };
    let nm = optim::nelder_mead(rss, x0, opts.initial_step, 1e-10, 4000);
    optim::nelder_mead(rss, &nm.x, opts.initial_step * 0.25, 1e-12, 4000).x
}

fn family_start(spec: &GpmModelSpec, data: &RmdtDataset) -> Vec<f64> {
    let (mut t0, mut y0, mut t1, mut y1) = (0.0, 0.0, 0.0, 0.0);
    let n = data.units.len() as f64;
    let mut ymax: f64 = 0.0;
    for u in &data.units {
        t0 += u.times[0] / n;
        y0 += u.measurements[0] / n;
        t1 += u.times[u.len() - 1] / n;
        y1 += u.measurements[u.len() - 1] / n;
        ymax = u.measurements.iter().fold(ymax, |m, v| m.max(v.abs()));
    }
    let slope = if t1 > t0 { (y1 - y0) / (t1 - t0) } else { 0.0 };
    let tmax = data.units.iter().map(|u| u.times[u.len() - 1]).fold(0.0, f64::max).max(1e-12);
    match &spec.family {
        GpmFamily::Linear => vec![y0 - slope * t0, slope],
        GpmFamily::LinearLogRate => vec![y0 - slope * t0, slope.abs().max(1e-12).ln()],
        GpmFamily::Paris { initial, stress } => {
            let growth = (y1.max(*initial * 1.0001) / initial).ln();
            vec![(growth / (PI * stress * stress * t1.max(1e-12))).ln(), 2.0]
        }
        GpmFamily::LogLogistic => {
            let asym = if y1 >= 0.0 { 1.5 * ymax } else { -1.5 * ymax };
            vec![asym, (0.5 * tmax).ln(), 0.0]
        }
        GpmFamily::DeviceB { .. } => {
            let drop = (1.5 * ymax).max(1e-12);
            let frac = (ymax / drop).min(0.99);
            vec![(-(1.0 - frac).ln() / tmax).ln(), drop.ln(), 0.0]
        }
    }
}

/// Pooled least squares, then per-unit least squares for the random
/// effects, summarized into a starting point for the marginal likelihood.
fn data_driven_start(spec: &GpmModelSpec, units: &[UnitCtx]) -> Result<GpmParams> {
    let baseline_x = spec.baseline_x()?;
    let family = &spec.family;
    let rss_of = |p: &[f64], u: &UnitCtx| -> f64 {
        let path = family.path(p, u.x, baseline_x);
        u.times.iter().zip(u.ys).map(|(t, y)| (y - mean_value(&path, *t)).powi(2)).sum::<f64>()
    };
    let pooled_rss = |p: &[f64]| units.iter().map(|u| rss_of(p, u)).sum::<f64>();
    let data_stub = RmdtDataset {
        units: units
            .iter()
            .map(|u| UnitSeries::new(u.id, u.times.to_vec(), u.ys.to_vec()))
            .collect::<Result<Vec<_>>>()?,
        time_unit: String::new(),
        response_unit: String::new(),
    };
    let pooled = least_squares(&pooled_rss, &family_start(spec, &data_stub));
    let random = spec.random_indices();
    let fixed = spec.fixed_indices();
    let d = random.len();
    let per_unit: Vec<(Vec<f64>, f64, usize)> = units
        .par_iter()
        .map(|u| {
            let rss = |b: &[f64]| {
                let mut p = pooled.clone();
                for (&i, v) in random.iter().zip(b) {
                    p[i] = *v;
                }
                rss_of(&p, u)
            };
            let b0: Vec<f64> = random.iter().map(|&i| pooled[i]).collect();
            let b = if d > 0 { least_squares(&rss, &b0) } else { b0 };
            let r = rss(&b);
            (b, r, u.times.len())
        })
        .collect();
    let n_obs: usize = per_unit.iter().map(|p| p.2).sum();
    let rss_total: f64 = per_unit.iter().map(|p| p.1).sum();
    let dof = (n_obs as f64 - (units.len() * d) as f64 - fixed.len() as f64).max(1.0);
    let sigma_eps = (rss_total / dof).sqrt().max(1e-6 * pooled_rss(&pooled).sqrt().max(1e-300)).max(1e-10);
    let mu: Vec<f64> = (0..d).map(|k| stats::mean(&per_unit.iter().map(|p| p.0[k]).collect::<Vec<_>>())).collect();
    let mut chol = DMatrix::zeros(d, d);
    for (k, m) in mu.iter().enumerate() {
        let vals: Vec<f64> = per_unit.iter().map(|p| p.0[k]).collect();
        let sd = if vals.len() > 1 { stats::variance(&vals).sqrt() } else { 0.0 };
        chol[(k, k)] = sd.max(1e-3 * m.abs().max(1e-3));
    }
    Ok(GpmParams { fixed: fixed.iter().map(|&i| pooled[i]).collect(), mu, chol, sigma_eps })
}

/// Least-squares path of a single unit, all family parameters free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFit {
    pub unit_id: String,
    pub params: Vec<f64>,
    pub rss: f64,
}

/// Per-unit least-squares fits (the first stage of a two-stage analysis).
/// Straight-line families are solved in closed form.
pub fn unit_least_squares(spec: &GpmModelSpec, data: &RmdtDataset) -> Result<Vec<UnitFit>> {
    spec.validate()?;
    let baseline_x = spec.baseline_x()?;
    let family = &spec.family;
    unit_contexts(spec, data)?
        .par_iter()
        .map(|u| {
            let rss = |p: &[f64]| {
                let path = family.path(p, u.x, baseline_x);
                u.times.iter().zip(u.ys).map(|(t, y)| (y - mean_value(&path, *t)).powi(2)).sum::<f64>()
            };
            let (a, b) = line_fit(u.times, u.ys);
            let params = match family {
                GpmFamily::Linear => vec![a, b],
                GpmFamily::LinearLogRate if b > 0.0 => vec![a, b.ln()],
                _ => {
                    let one = RmdtDataset {
                        units: vec![UnitSeries::new(u.id, u.times.to_vec(), u.ys.to_vec())?],
                        time_unit: String::new(),
                        response_unit: String::new(),
                    };
                    least_squares(&rss, &family_start(spec, &one))
                }
            };
            Ok(UnitFit { unit_id: u.id.to_string(), rss: rss(&params), params })
        })
        .collect()
}

fn line_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let (mt, my) = (stats::mean(t), stats::mean(y));
    let sxx: f64 = t.iter().map(|v| (v - mt) * (v - mt)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mt, b)
}

/// Maximum-likelihood fit of a mixed-effects general path model.
pub fn fit_gpm(spec: &GpmModelSpec, data: &RmdtDataset, options: &GpmFitOptions) -> Result<FitResult> {
    spec.validate()?;
    data.validate()?;
    let k = spec.n_internal();
    if data.n_observations() < k {
        return Err(Error::Validation(format!("{} observations cannot identify {k} parameters", data.n_observations())));
    }
    let units = unit_contexts(spec, data)?;
    let rule = quadrature_rule(spec);
    let start = match &options.start {
        Some(map) => GpmParams::from_reported(spec, map)?,
        None => data_driven_start(spec, &units)?,
    };
    let mut start = start;
    for k in 0..start.mu.len() {
        if start.chol[(k, k)] <= 0.0 {
            start.chol[(k, k)] = 1e-3 * start.mu[k].abs().max(1e-3);
        }
    }
    if start.sigma_eps <= 0.0 {
        start.sigma_eps = 1e-6;
    }
    let nll = |theta: &[f64]| match marginal_loglik_with(spec, theta, &units, &rule) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };
    let opt = optim::minimize(&nll, &start.to_internal(), &options.optim);
    if !opt.fmin.is_finite() {
        return Err(Error::Numerical("marginal likelihood is not finite at any start".into()));
    }
    let report = |theta: &[f64]| {
        GpmParams::from_internal(spec, theta).map(|p| p.reported()).unwrap_or_else(|_| vec![f64::NAN; theta.len()])
    };
    let model = format!("gpm/{}", family_label(&spec.family));
    let fit = fit::summarize(&model, spec.reported_names(), &nll, &report, &opt, options.optim.seed);
    if !fit.converged {
        log::warn!("GPM fit did not converge (gradient norm {:.3e})", opt.grad_norm);
    }
    Ok(fit)
}

fn family_label(f: &GpmFamily) -> &'static str {
    match f {
        GpmFamily::Linear => "linear",
        GpmFamily::LinearLogRate => "linear_log_rate",
        GpmFamily::Paris { .. } => "paris",
        GpmFamily::LogLogistic => "log_logistic",
        GpmFamily::DeviceB { .. } => "device_b",
    }
}

/// Closed-form CDF of the linear path with lognormal rate,
/// `F(t) = Φ((ln t − [ln(D₀ − α) − μ]) / σ)`.
pub fn failure_cdf_linear(alpha: f64, mu: f64, sigma: f64, threshold: f64, times: &[f64]) -> Result<CdfCurve> {
    if !(threshold > alpha) {
        return Err(Error::Domain(format!("threshold {threshold} must exceed the initial level {alpha}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain("sigma must be positive".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Domain("times must be nonnegative".into()));
    }
    let loc = (threshold - alpha).ln() - mu;
    let cdf = times.iter().map(|&t| if t == 0.0 { 0.0 } else { stats::norm_cdf((t.ln() - loc) / sigma) }).collect();
    Ok(CdfCurve::new(times.to_vec(), cdf))
}

const MC_CHUNK: usize = 10_000;

/// Crossing times of `draws` random-effect draws; `∞` when a path never
/// reaches the threshold.
pub fn sample_crossing_times(
    params: &GpmParams,
    spec: &GpmModelSpec,
    threshold: &FailureThreshold,
    use_condition: Option<f64>,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let x = spec.stress(use_condition)?;
    let baseline_x = spec.baseline_x()?;
    let np = spec.family.param_names().len();
    let d = params.mu.len();
    let chunks = draws.div_ceil(MC_CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = rng::stream(seed, "gpm-cdf", c as u64);
            let n = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut out = Vec::with_capacity(n);
            let mut z = vec![0.0; d];
            let mut b = vec![0.0; d];
            let mut full = [0.0; 4];
            for _ in 0..n {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut g);
                }
                for i in 0..d {
                    b[i] = params.mu[i] + (0..=i).map(|k| params.chol[(i, k)] * z[k]).sum::<f64>();
                }
                params.full(spec, &b, &mut full[..np]);
                let path = spec.family.path(&full[..np], x, baseline_x);
                let t = match path.first_crossing_time(threshold) {
                    Ok(Some(t)) => t,
                    _ => f64::INFINITY,
                };
                out.push(t);
            }
            out
        })
        .collect();
    Ok(parts.concat())
}

/// Empirical CDF of sorted crossing times on a grid.
pub fn ecdf_on_grid(sorted: &[f64], times: &[f64]) -> Vec<f64> {
    let n = sorted.len() as f64;
    times.iter().map(|&t| sorted.partition_point(|&c| c <= t) as f64 / n).collect()
}

/// Monte Carlo failure CDF `Pr[D(t) reaches D₀]` under the fitted
/// random-effect distribution. `use_condition` is the raw accelerator value
/// (°C) for families with an accelerator.
pub fn failure_cdf_mc(
    fit: &FitResult,
    spec: &GpmModelSpec,
    threshold: &FailureThreshold,
    times: &[f64],
    draws: usize,
    seed: u64,
    use_condition: Option<f64>,
) -> Result<CdfCurve> {
    if draws < 10_000 {
        return Err(Error::Validation(format!("at least 10000 draws required, got {draws}")));
    }
    spec.validate()?;
    let params = GpmParams::from_fit(spec, fit)?;
    let mut t = sample_crossing_times(&params, spec, threshold, use_condition, draws, seed)?;
    t.sort_by(f64::total_cmp);
    Ok(CdfCurve::new(times.to_vec(), ecdf_on_grid(&t, times)))
}

/// Failure CDF of fitted parameters: closed form for the lognormal-rate
/// linear family, Monte Carlo otherwise.
pub fn failure_cdf(
    params: &GpmParams,
    spec: &GpmModelSpec,
    threshold: &FailureThreshold,
    times: &[f64],
    draws: usize,
    seed: u64,
    use_condition: Option<f64>,
) -> Result<CdfCurve> {
    if spec.family == GpmFamily::LinearLogRate
        && spec.random == ["log_slope"]
        && threshold.direction == crate::data::Direction::Increasing
    {
        return failure_cdf_linear(params.fixed[0], params.mu[0], params.chol[(0, 0)], threshold.value, times);
    }
    let mut t = sample_crossing_times(params, spec, threshold, use_condition, draws, seed)?;
    t.sort_by(f64::total_cmp);
    Ok(CdfCurve::new(times.to_vec(), ecdf_on_grid(&t, times)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Monte Carlo draws per CDF evaluation (unused by closed-form families).
    pub draws: usize,
    pub optim: OptimOptions,
    pub use_condition: Option<f64>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            seed: 0,
            draws: 20_000,
            optim: OptimOptions { restarts: 0, ..Default::default() },
            use_condition: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOutput {
    pub curve: CdfCurve,
    pub attempted: usize,
    pub dropped: usize,
    /// More than 20% of replicates failed to converge.
    pub warning: bool,
}

/// The design (times and covariates per unit) of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDesign {
    pub unit_id: String,
    pub times: Vec<f64>,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
}

pub fn design_of(data: &RmdtDataset) -> Vec<UnitDesign> {
    data.units
        .iter()
        .map(|u| UnitDesign { unit_id: u.unit_id.clone(), times: u.times.clone(), covariates: u.static_covariates.clone() })
        .collect()
}

/// Parametric bootstrap: simulate from the fit on the same design, refit,
/// and take pointwise percentile intervals of the replicate CDFs.
pub fn bootstrap_ci(
    fit: &FitResult,
    spec: &GpmModelSpec,
    data: &RmdtDataset,
    threshold: &FailureThreshold,
    times: &[f64],
    options: &BootstrapOptions,
) -> Result<BootstrapOutput> {
    if options.replicates < 200 {
        return Err(Error::Validation(format!("bootstrap needs at least 200 replicates, got {}", options.replicates)));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::Validation("level must lie in (0, 1)".into()));
    }
    let params = GpmParams::from_fit(spec, fit)?;
    let design = design_of(data);
    let draws = options.draws.max(10_000);
    let point = failure_cdf(&params, spec, threshold, times, draws, rng::child_seed(options.seed, "bootstrap-point", 0), options.use_condition)?;
    let start: BTreeMap<String, f64> = fit.parameters.iter().cloned().zip(fit.estimates.iter().copied()).collect();
    let replicates: Vec<Option<Vec<f64>>> = (0..options.replicates)
        .into_par_iter()
        .map(|b| {
            let sim_seed = rng::child_seed(options.seed, "bootstrap-data", b as u64);
            let sim = simulate_rmdt(spec, &params, &design, sim_seed).ok()?;
            let opts = GpmFitOptions {
                optim: OptimOptions { seed: rng::child_seed(options.seed, "bootstrap-fit", b as u64), ..options.optim.clone() },
                start: Some(start.clone()),
            };
            let refit = fit_gpm(spec, &sim, &opts).ok().filter(|f| f.converged)?;
            let p = GpmParams::from_fit(spec, &refit).ok()?;
            let cdf_seed = rng::child_seed(options.seed, "bootstrap-cdf", b as u64);
            failure_cdf(&p, spec, threshold, times, draws, cdf_seed, options.use_condition).ok().map(|c| c.cdf)
        })
        .collect();
    let kept: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let dropped = options.replicates - kept.len();
    if kept.len() < 2 {
        return Err(Error::Numerical("fewer than two bootstrap replicates converged".into()));
    }
    let warning = dropped as f64 > 0.2 * options.replicates as f64;
    if warning {
        log::warn!("{dropped} of {} bootstrap replicates dropped", options.replicates);
    }
    let alpha = 1.0 - options.level;
    let mut lower = Vec::with_capacity(times.len());
    let mut upper = Vec::with_capacity(times.len());
    for (i, &f) in point.cdf.iter().enumerate() {
        let mut col: Vec<f64> = kept.iter().map(|r| r[i]).collect();
        col.sort_by(f64::total_cmp);
        lower.push(stats::quantile_sorted(&col, alpha / 2.0).min(f));
        upper.push(stats::quantile_sorted(&col, 1.0 - alpha / 2.0).max(f));
    }
    Ok(BootstrapOutput {
        curve: point.with_bounds(lower, upper, options.level),
        attempted: options.replicates,
        dropped,
        warning,
    })
}

/// Draws a dataset from the model at the given design.
pub fn simulate_rmdt(spec: &GpmModelSpec, truth: &GpmParams, design: &[UnitDesign], seed: u64) -> Result<RmdtDataset> {
    spec.validate()?;
    let baseline_x = spec.baseline_x()?;
    let np = spec.family.param_names().len();
    let d = truth.mu.len();
    let units = design
        .par_iter()
        .enumerate()
        .map(|(i, ud)| {
            let mut g = rng::stream(seed, "simulate-rmdt", i as u64);
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut g)).collect();
            let b: Vec<f64> = (0..d).map(|r| truth.mu[r] + (0..=r).map(|k| truth.chol[(r, k)] * z[k]).sum::<f64>()).collect();
            let mut full = [0.0; 4];
            truth.full(spec, &b, &mut full[..np]);
            let raw = spec.accelerator.as_ref().map(|a| ud.covariates.get(&a.covariate).copied());
            let x = match raw {
                Some(Some(v)) => spec.stress(Some(v))?,
                Some(None) => return Err(Error::Validation(format!("unit {} lacks the accelerator covariate", ud.unit_id))),
                None => None,
            };
            let path = spec.family.path(&full[..np], x, baseline_x);
            let ys = ud
                .times
                .iter()
                .map(|&t| {
                    let e: f64 = StandardNormal.sample(&mut g);
                    Ok(path.evaluate(t)? + truth.sigma_eps * e)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut u = UnitSeries::new(ud.unit_id.clone(), ud.times.clone(), ys)?;
            u.static_covariates = ud.covariates.clone();
            Ok(u)
        })
        .collect::<Result<Vec<_>>>()?;
    RmdtDataset::new(units)
}

//! Stochastic-process degradation models with a power-law trend
//! `μ(t) = (t/α₂)^α₁`.
//!
//! Independent increments over `(t_{j−1}, t_j]` follow
//! - Wiener: `N(Δμ, σ²Δμ)`,
//! - gamma: `Gamma(shape Δμ, scale σ)`,
//! - inverse Gaussian: `IG(mean Δμ, shape σΔμ²)`.
//!
//! The inverse Gaussian increment law is the one whose marginal at `t`
//! matches `IG(μ(t), σμ(t)²)`; it is inferred from that marginal.

use crate::curve::CdfCurve;
use crate::data::{RmdtDataset, UnitSeries};
use crate::error::{Error, Result};
use crate::fit::{self, FitResult};
use crate::optim::{self, OptimOptions};
use crate::rng;
use crate::stats;
use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpProcess {
    Wiener,
    Gamma,
    InverseGaussian,
}

impl SpProcess {
    pub fn label(self) -> &'static str {
        match self {
            SpProcess::Wiener => "wiener",
            SpProcess::Gamma => "gamma",
            SpProcess::InverseGaussian => "inverse_gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpModelSpec {
    pub process: SpProcess,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma: f64,
}

impl SpModelSpec {
    pub fn new(process: SpProcess, alpha1: f64, alpha2: f64, sigma: f64) -> Self {
        Self { process, alpha1, alpha2, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0 && self.sigma > 0.0) {
            return Err(Error::Domain("alpha1, alpha2 and sigma must be positive".into()));
        }
        if !(self.alpha1.is_finite() && self.alpha2.is_finite() && self.sigma.is_finite()) {
            return Err(Error::Domain("non-finite process parameters".into()));
        }
        Ok(())
    }

    /// `μ(t) = (t/α₂)^α₁`.
    pub fn trend(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (t / self.alpha2).powf(self.alpha1)
        }
    }
}

/// Increment log-density of `dy` over an interval with trend increment `dmu`.
fn increment_logpdf(spec: &SpModelSpec, dy: f64, dmu: f64) -> f64 {
    match spec.process {
        SpProcess::Wiener => stats::normal_logpdf(dy, dmu, spec.sigma * dmu.sqrt()),
        SpProcess::Gamma => stats::gamma_logpdf(dy, dmu, spec.sigma),
        SpProcess::InverseGaussian => stats::inverse_gaussian_logpdf(dy, dmu, spec.sigma * dmu * dmu),
    }
}

/// Observation path of a unit with the origin `(0, 0)` prepended, unless the
/// unit is observed at `t = 0`, in which case that reading is the origin.
fn anchored(u: &UnitSeries) -> (Vec<f64>, Vec<f64>) {
    if u.times[0] == 0.0 {
        (u.times.clone(), u.measurements.clone())
    } else {
        let mut t = vec![0.0];
        t.extend(&u.times);
        let mut y = vec![0.0];
        y.extend(&u.measurements);
        (t, y)
    }
}

/// Checks the data against the process support (nonnegative, nonzero
/// increments for gamma and inverse Gaussian).
pub fn check_support(process: SpProcess, data: &RmdtDataset) -> Result<()> {
    if process == SpProcess::Wiener {
        return Ok(());
    }
    for u in &data.units {
        let (t, y) = anchored(u);
        for j in 1..t.len() {
            if !(y[j] - y[j - 1] > 0.0) {
                return Err(Error::Data {
                    unit: u.unit_id.clone(),
                    message: format!(
                        "{} process needs positive increments; got {} on ({}, {}]",
                        process.label(),
                        y[j] - y[j - 1],
                        t[j - 1],
                        t[j]
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Sum of increment log-densities over all units.
pub fn sp_increment_loglik(spec: &SpModelSpec, data: &RmdtDataset) -> Result<f64> {
    spec.validate()?;
    check_support(spec.process, data)?;
    let mut total = 0.0;
    for u in &data.units {
        let (t, y) = anchored(u);
        for j in 1..t.len() {
            let dmu = spec.trend(t[j]) - spec.trend(t[j - 1]);
            if !(dmu > 0.0) {
                return Err(Error::Numerical(format!(
                    "degenerate trend increment on ({}, {}] for unit {}",
                    t[j - 1],
                    t[j],
                    u.unit_id
                )));
            }
            total += increment_logpdf(spec, y[j] - y[j - 1], dmu);
        }
    }
    Ok(total)
}

pub fn n_increments(data: &RmdtDataset) -> usize {
    data.units.iter().map(|u| anchored(u).0.len() - 1).sum()
}

/// Maximum-likelihood fit of `(α₁, α₂, σ)` on the log scale, starting from
/// the template's values.
pub fn fit_sp(template: &SpModelSpec, data: &RmdtDataset, options: &OptimOptions) -> Result<FitResult> {
    template.validate()?;
    data.validate()?;
    if n_increments(data) < 3 {
        return Err(Error::Validation("at least 3 increments are needed".into()));
    }
    check_support(template.process, data)?;
    let process = template.process;
    let at = |p: &[f64]| SpModelSpec::new(process, p[0].exp(), p[1].exp(), p[2].exp());
    let nll = |p: &[f64]| match sp_increment_loglik(&at(p), data) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };
    let x0 = [template.alpha1.ln(), template.alpha2.ln(), template.sigma.ln()];
    let opt = optim::minimize(&nll, &x0, options);
    if !opt.fmin.is_finite() {
        return Err(Error::Numerical("increment likelihood is not finite at any start".into()));
    }
    let report = |p: &[f64]| p.iter().map(|v| v.exp()).collect();
    let names = vec!["alpha1".to_string(), "alpha2".to_string(), "sigma".to_string()];
    let fit = fit::summarize(&format!("sp/{}", process.label()), names, &nll, &report, &opt, options.seed);
    if !fit.converged {
        log::warn!("SP fit did not converge (gradient norm {:.3e})", opt.grad_norm);
    }
    Ok(fit)
}

/// The fitted model as a spec.
pub fn spec_from_fit(process: SpProcess, fit: &FitResult) -> Result<SpModelSpec> {
    let get = |n: &str| fit.get(n).ok_or_else(|| Error::Validation(format!("fit lacks {n}")));
    let spec = SpModelSpec::new(process, get("alpha1")?, get("alpha2")?, get("sigma")?);
    spec.validate()?;
    Ok(spec)
}

/// Failure-time CDF: first passage of `D₀` for the Wiener process,
/// `Pr[y(t) ≥ D₀]` for the monotone gamma and inverse Gaussian processes.
pub fn sp_failure_cdf(spec: &SpModelSpec, threshold: f64, times: &[f64]) -> Result<CdfCurve> {
    spec.validate()?;
    if !(threshold > 0.0) {
        return Err(Error::Domain("threshold must be positive".into()));
    }
    let cdf = times
        .iter()
        .map(|&t| {
            let m = spec.trend(t);
            if m <= 0.0 {
                return 0.0;
            }
            if !m.is_finite() {
                return 1.0;
            }
            match spec.process {
                SpProcess::Wiener => {
                    stats::inverse_gaussian_cdf(m, threshold, threshold * threshold / (spec.sigma * spec.sigma))
                }
                SpProcess::Gamma => 1.0 - stats::gamma_cdf(threshold, m, spec.sigma),
                SpProcess::InverseGaussian => 1.0 - stats::inverse_gaussian_cdf(threshold, m, spec.sigma * m * m),
            }
        })
        .collect();
    Ok(CdfCurve::new(times.to_vec(), cdf))
}

fn draw_increment<R: Rng>(spec: &SpModelSpec, dmu: f64, g: &mut R) -> Result<f64> {
    let bad = |e: String| Error::Numerical(format!("increment law: {e}"));
    Ok(match spec.process {
        SpProcess::Wiener => Normal::new(dmu, spec.sigma * dmu.sqrt()).map_err(|e| bad(e.to_string()))?.sample(g),
        SpProcess::Gamma => Gamma::new(dmu, spec.sigma).map_err(|e| bad(e.to_string()))?.sample(g),
        SpProcess::InverseGaussian => {
            InverseGaussian::new(dmu, spec.sigma * dmu * dmu).map_err(|e| bad(e.to_string()))?.sample(g)
        }
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) {
        return Err(Error::Validation("simulation grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("simulation grid must be strictly increasing".into()));
    }
    Ok(())
}

/// One path on `grid` (which must start at 0), with `y(0) = 0`.
pub fn simulate_sp_path(spec: &SpModelSpec, grid: &[f64], seed: u64) -> Result<UnitSeries> {
    simulate_indexed(spec, grid, seed, 0, "path")
}

fn simulate_indexed(spec: &SpModelSpec, grid: &[f64], seed: u64, index: u64, id: &str) -> Result<UnitSeries> {
    spec.validate()?;
    check_grid(grid)?;
    let mut g = rng::stream(seed, "simulate-sp", index);
    let mut y = Vec::with_capacity(grid.len());
    y.push(0.0);
    for j in 1..grid.len() {
        let dmu = spec.trend(grid[j]) - spec.trend(grid[j - 1]);
        y.push(y[j - 1] + draw_increment(spec, dmu, &mut g)?);
    }
    UnitSeries::new(id, grid.to_vec(), y)
}

/// `n` independent paths; path `i` uses substream `i`, so the result does not
/// depend on thread scheduling.
pub fn simulate_sp_dataset(spec: &SpModelSpec, grid: &[f64], n: usize, seed: u64) -> Result<RmdtDataset> {
    let units = (0..n)
        .into_par_iter()
        .map(|i| simulate_indexed(spec, grid, seed, i as u64, &format!("u{i:04}")))
        .collect::<Result<Vec<_>>>()?;
    RmdtDataset::new(units)
}

/// First grid time at which each of `n` simulated paths has reached
/// `threshold` (`∞` if never on the grid).
///
/// Gamma and inverse Gaussian paths are monotone, so checking grid points is
/// exact. Wiener paths can cross and come back between grid points; that
/// excursion is accounted for with the Brownian-bridge crossing probability
/// `exp(−2(D₀−y_a)(D₀−y_b)/(σ²Δμ))`, which removes the discrete-monitoring
/// bias at grid times.
pub fn simulate_first_passage(spec: &SpModelSpec, threshold: f64, grid: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    check_grid(grid)?;
    const CHUNK: usize = 1000;
    let dmu: Vec<f64> = grid.windows(2).map(|w| spec.trend(w[1]) - spec.trend(w[0])).collect();
    let parts = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = rng::stream(seed, "first-passage", c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let mut y = 0.0;
                let mut hit = f64::INFINITY;
                for (j, &dm) in dmu.iter().enumerate() {
                    let next = y + draw_increment(spec, dm, &mut g)?;
                    let crossed = next >= threshold
                        || (spec.process == SpProcess::Wiener && {
                            let p = (-2.0 * (threshold - y) * (threshold - next) / (spec.sigma * spec.sigma * dm)).exp();
                            g.random::<f64>() < p
                        });
                    if crossed {
                        hit = grid[j + 1];
                        break;
                    }
                    y = next;
                }
                out.push(hit);
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(parts.concat())
}

//! Hierarchical Paris-law model for fatigue crack growth.
//!
//! Each specimen has `(log θ1ᵢ, θ2ᵢ)` drawn from a bivariate normal with
//! means `(μθ1, μθ2)`, standard deviations `(σθ1, σθ2)` and correlation `ρ`;
//! crack lengths are observed with Gaussian error around the Paris path.
//! Hyperpriors: normal on the means, exponential on the three standard
//! deviations, uniform on `ρ ∈ (−1, 1)`.

use super::{curvature_proposal, HierarchicalModel, PosteriorSamples};
use crate::data::{FailureThreshold, RmdtDataset};
use crate::error::{Error, Result};
use crate::optim;
use crate::paths::{ParisPath, PathModel};
use crate::rng;
use crate::stats;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FatiguePriors {
    pub mu_theta1_mean: f64,
    pub mu_theta1_sd: f64,
    pub mu_theta2_mean: f64,
    pub mu_theta2_sd: f64,
    /// Rates of the exponential priors on σθ1, σθ2 and σε.
    pub sigma_theta1_rate: f64,
    pub sigma_theta2_rate: f64,
    pub sigma_eps_rate: f64,
}

impl Default for FatiguePriors {
    fn default() -> Self {
        Self {
            mu_theta1_mean: -9.0,
            mu_theta1_sd: 1.0,
            mu_theta2_mean: 2.0,
            mu_theta2_sd: 10f64.sqrt(),
            sigma_theta1_rate: 1.0,
            sigma_theta2_rate: 1.0,
            sigma_eps_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FatigueSpec {
    /// Crack length at time zero.
    pub initial: f64,
    /// Stress amplitude multiplying `√(πD)`.
    #[serde(default = "unit_stress")]
    pub stress: f64,
    #[serde(default)]
    pub priors: FatiguePriors,
}

fn unit_stress() -> f64 {
    1.0
}

impl FatigueSpec {
    pub fn new(initial: f64) -> Self {
        Self { initial, stress: 1.0, priors: FatiguePriors::default() }
    }

    pub fn path(&self, log_theta1: f64, theta2: f64) -> PathModel {
        PathModel::Paris(ParisPath { theta1: log_theta1.exp(), theta2, initial: self.initial, stress: self.stress })
    }
}

/// Density of the uniform correlation prior.
pub fn rho_log_prior(rho: f64) -> f64 {
    if rho > -1.0 && rho < 1.0 {
        0.5f64.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn exp_log_prior(sigma: f64, rate: f64) -> f64 {
    if sigma > 0.0 {
        rate.ln() - rate * sigma
    } else {
        f64::NEG_INFINITY
    }
}

/// Paris path value, `+∞` past a blow-up.
fn paris_value(p: &ParisPath, t: f64) -> f64 {
    let rate = p.theta1 * (p.stress * PI.sqrt()).powf(p.theta2);
    let c = 1.0 - p.theta2 / 2.0;
    if c.abs() < 1e-12 {
        return p.initial * (rate * t).exp();
    }
    let base = p.initial.powf(c) + c * rate * t;
    if base <= 0.0 {
        f64::INFINITY
    } else {
        base.powf(1.0 / c)
    }
}

struct Unit {
    id: String,
    times: Vec<f64>,
    y: Vec<f64>,
}

pub struct FatigueModel {
    spec: FatigueSpec,
    units: Vec<Unit>,
}

impl FatigueModel {
    pub fn new(spec: FatigueSpec, data: &RmdtDataset) -> Result<Self> {
        data.validate()?;
        if !(spec.initial > 0.0 && spec.stress > 0.0) {
            return Err(Error::Validation("initial crack length and stress must be positive".into()));
        }
        let p = &spec.priors;
        if !(p.mu_theta1_sd > 0.0 && p.mu_theta2_sd > 0.0 && p.sigma_theta1_rate > 0.0 && p.sigma_theta2_rate > 0.0 && p.sigma_eps_rate > 0.0) {
            return Err(Error::Validation("fatigue prior scales and rates must be positive".into()));
        }
        let units = data
            .units
            .iter()
            .map(|u| Unit { id: u.unit_id.clone(), times: u.times.clone(), y: u.measurements.clone() })
            .collect();
        Ok(Self { spec, units })
    }

    fn rss(&self, i: usize, u: &[f64]) -> f64 {
        let p = ParisPath { theta1: u[0].exp(), theta2: u[1], initial: self.spec.initial, stress: self.spec.stress };
        let unit = &self.units[i];
        unit.times.iter().zip(&unit.y).map(|(&t, &y)| (y - paris_value(&p, t)).powi(2)).sum()
    }

    /// Per-specimen least squares, then moment estimates of the hyperparameters.
    fn least_squares_start(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d0 = self.spec.initial;
        let units: Vec<Vec<f64>> = (0..self.units.len())
            .map(|i| {
                let u = &self.units[i];
                let (t_end, y_end) = (*u.times.last().expect("validated unit"), *u.y.last().expect("validated unit"));
                // exponential branch (θ2 = 2) through the last point
                let growth = (y_end.max(d0 * 1.01) / d0).ln() / (PI * self.spec.stress.powi(2) * t_end.max(1e-12));
                let x0 = [growth.ln(), 2.0];
                let f = |x: &[f64]| self.rss(i, x);
                let fit = optim::nelder_mead(&f, &x0, 0.2, 1e-14, 20_000);
                let fit = optim::nelder_mead(&f, &fit.x, 0.05, 1e-14, 20_000);
                fit.x
            })
            .collect();
        let a: Vec<f64> = units.iter().map(|u| u[0]).collect();
        let b: Vec<f64> = units.iter().map(|u| u[1]).collect();
        let n_obs: usize = self.units.iter().map(|u| u.y.len()).sum();
        let rss: f64 = units.iter().enumerate().map(|(i, u)| self.rss(i, u)).sum();
        let (sa, sb, rho) = if units.len() > 2 {
            let (sa, sb) = (stats::variance(&a).sqrt(), stats::variance(&b).sqrt());
            let (ma, mb) = (stats::mean(&a), stats::mean(&b));
            let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
            (sa.max(0.02), sb.max(0.02), (cov / (sa * sb)).clamp(-0.9, 0.9))
        } else {
            (0.1, 0.1, 0.0)
        };
        let rho = if rho.is_finite() { rho } else { 0.0 };
        let sigma_eps = (rss / n_obs as f64).sqrt().max(1e-6);
        let g = vec![stats::mean(&a), stats::mean(&b), sa.ln(), sb.ln(), rho.atanh(), sigma_eps.ln()];
        (g, units)
    }
}

impl HierarchicalModel for FatigueModel {
    fn global_dim(&self) -> usize {
        6
    }

    fn unit_dim(&self) -> usize {
        2
    }

    fn unit_ids(&self) -> Vec<String> {
        self.units.iter().map(|u| u.id.clone()).collect()
    }

    fn log_prior(&self, g: &[f64]) -> f64 {
        let p = &self.spec.priors;
        let (s1, s2, rho, se) = (g[2].exp(), g[3].exp(), g[4].tanh(), g[5].exp());
        // log-scale and atanh Jacobians: + log σ, + log(1 − ρ²)
        let total = stats::normal_logpdf(g[0], p.mu_theta1_mean, p.mu_theta1_sd)
            + stats::normal_logpdf(g[1], p.mu_theta2_mean, p.mu_theta2_sd)
            + exp_log_prior(s1, p.sigma_theta1_rate)
            + g[2]
            + exp_log_prior(s2, p.sigma_theta2_rate)
            + g[3]
            + exp_log_prior(se, p.sigma_eps_rate)
            + g[5]
            + rho_log_prior(rho)
            + (1.0 - rho * rho).ln();
        if total.is_finite() {
            total
        } else {
            f64::NEG_INFINITY
        }
    }

    fn unit_log_density(&self, g: &[f64], i: usize, u: &[f64]) -> f64 {
        let (s1, s2, rho) = (g[2].exp(), g[3].exp(), g[4].tanh());
        let one_m = 1.0 - rho * rho;
        let (z1, z2) = ((u[0] - g[0]) / s1, (u[1] - g[1]) / s2);
        let mut ll = -(2.0 * PI).ln() - g[2] - g[3] - 0.5 * one_m.ln() - (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * one_m);
        let se = g[5].exp();
        let n = self.units[i].y.len() as f64;
        ll += -n * (g[5] + 0.5 * (2.0 * PI).ln()) - self.rss(i, u) / (2.0 * se * se);
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
        let mut names: Vec<String> =
            ["mu_theta1", "mu_theta2", "sigma_theta1", "sigma_theta2", "rho", "sigma_eps"].iter().map(|s| s.to_string()).collect();
        for u in &self.units {
            names.push(format!("log_theta1[{}]", u.id));
            names.push(format!("theta2[{}]", u.id));
        }
        names
    }

    fn report(&self, g: &[f64], units: &[Vec<f64>]) -> Vec<f64> {
        let mut row = vec![g[0], g[1], g[2].exp(), g[3].exp(), g[4].tanh(), g[5].exp()];
        for u in units {
            row.extend_from_slice(u);
        }
        row
    }

    fn unit_location_scale(&self, g: &[f64], _unit: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let (s1, s2, rho) = (g[2].exp(), g[3].exp(), g[4].tanh());
        let l = DMatrix::from_row_slice(2, 2, &[s1, 0.0, rho * s2, s2 * (1.0 - rho * rho).sqrt()]);
        Some((vec![g[0], g[1]], l))
    }
}

/// Whose crossing time is predicted.
#[derive(Debug, Clone, PartialEq)]
pub enum CycleTarget {
    /// A tested specimen, through its sampled `(log θ1, θ2)`.
    Unit(String),
    /// A new specimen drawn from the population once per posterior draw.
    NewUnit { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingSample {
    /// Time to reach the threshold, one per posterior draw that reaches it.
    pub cycles: Vec<f64>,
    /// Draws whose path never reaches the threshold.
    pub never: usize,
}

/// Posterior (predictive) sample of the time at which the crack reaches
/// `threshold`.
pub fn cycles_to_threshold(samples: &PosteriorSamples, spec: &FatigueSpec, threshold: f64, target: &CycleTarget) -> Result<CrossingSample> {
    if !(threshold > spec.initial) {
        return Err(Error::Domain(format!("threshold {threshold} must exceed the initial length {}", spec.initial)));
    }
    let th = FailureThreshold::increasing(threshold);
    let params: Vec<(f64, f64)> = match target {
        CycleTarget::Unit(id) => {
            let (a, b) = (samples.column(&format!("log_theta1[{id}]"))?, samples.column(&format!("theta2[{id}]"))?);
            a.into_iter().zip(b).collect()
        }
        CycleTarget::NewUnit { seed } => {
            let cols = ["mu_theta1", "mu_theta2", "sigma_theta1", "sigma_theta2", "rho"]
                .iter()
                .map(|n| samples.index(n))
                .collect::<Result<Vec<_>>>()?;
            let mut g = rng::stream(*seed, "fatigue-new-unit", 0);
            (0..samples.n_draws())
                .map(|d| {
                    let v: Vec<f64> = cols.iter().map(|&c| samples.value(d, c)).collect();
                    let (z1, z2): (f64, f64) = (StandardNormal.sample(&mut g), StandardNormal.sample(&mut g));
                    let a = v[0] + v[2] * z1;
                    let b = v[1] + v[3] * (v[4] * z1 + (1.0 - v[4] * v[4]).max(0.0).sqrt() * z2);
                    (a, b)
                })
                .collect()
        }
    };
    let mut cycles = Vec::with_capacity(params.len());
    let mut never = 0;
    for (a, b) in params {
        match spec.path(a, b).first_crossing_time(&th)? {
            Some(t) => cycles.push(t),
            None => never += 1,
        }
    }
    Ok(CrossingSample { cycles, never })
}

/// Pointwise `q`-quantile over draws of a tested specimen's path.
pub fn path_quantile(samples: &PosteriorSamples, spec: &FatigueSpec, unit_id: &str, times: &[f64], q: f64) -> Result<Vec<f64>> {
    let a = samples.column(&format!("log_theta1[{unit_id}]"))?;
    let b = samples.column(&format!("theta2[{unit_id}]"))?;
    Ok(times
        .iter()
        .map(|&t| {
            let vals: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(&x, &y)| paris_value(&ParisPath { theta1: x.exp(), theta2: y, initial: spec.initial, stress: spec.stress }, t))
                .collect();
            stats::quantile(&vals, q)
        })
        .collect())
}

//! Bayesian hierarchical degradation models sampled by blocked adaptive
//! random-walk Metropolis.
//!
//! A model splits its unknowns into a global block (on an unconstrained
//! sampler scale, with Jacobians folded into [`HierarchicalModel::log_prior`])
//! and one block per unit holding that unit's random effects. Unit random
//! effects are sampled rather than integrated out, so per-unit predictions
//! can condition on them directly.

pub mod coating;
pub mod diagnostics;
pub mod fatigue;

use crate::error::{Error, Result};
use crate::optim;
use crate::rng;
use crate::stats;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub use diagnostics::{diagnostics, ParamDiagnostics};

/// A posterior `π(g) · Π_i f_i(g, u_i)` over global parameters `g` and
/// per-unit random effects `u_i`.
pub trait HierarchicalModel: Sync {
    /// Sampler-scale global parameter count.
    fn global_dim(&self) -> usize;
    /// Random-effect dimension per unit (0 for models without units).
    fn unit_dim(&self) -> usize;
    fn unit_ids(&self) -> Vec<String>;
    /// Log prior of the global block on the sampler scale, Jacobians
    /// included; `−∞` outside the support.
    fn log_prior(&self, global: &[f64]) -> f64;
    /// `log f(y_i | g, u_i) + log f(u_i | g)`.
    fn unit_log_density(&self, global: &[f64], unit: usize, effects: &[f64]) -> f64;
    /// Starting state: global block and one random-effect vector per unit.
    fn initial_state(&self) -> (Vec<f64>, Vec<Vec<f64>>);
    /// Initial proposal covariances for the global and unit blocks.
    fn initial_proposal(&self) -> (DMatrix<f64>, Vec<DMatrix<f64>>);
    /// Names of reported quantities (natural scale, then unit effects).
    fn report_names(&self) -> Vec<String>;
    fn report(&self, global: &[f64], units: &[Vec<f64>]) -> Vec<f64>;
    /// Population location and Cholesky factor of unit `i`'s random effects,
    /// `u = m(g) + L(g)·z`. When provided, the sampler adds a joint move in
    /// the non-centred coordinates `(g, z)`, which lets hierarchical scales
    /// move together with the unit deviations they govern.
    fn unit_location_scale(&self, _global: &[f64], _unit: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
        None
    }
}

/// Joint log posterior (up to a constant) on the sampler scale.
pub fn log_posterior<M: HierarchicalModel + ?Sized>(model: &M, global: &[f64], units: &[Vec<f64>]) -> f64 {
    let lp = model.log_prior(global);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut total = lp;
    for (i, u) in units.iter().enumerate() {
        total += model.unit_log_density(global, i, u);
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Proposal covariances from the curvature of the log posterior at a state:
/// the inverse negative Hessian of each block, or a diagonal of `fallback`
/// variances where that is not positive definite.
pub fn curvature_proposal<M: HierarchicalModel + ?Sized>(
    model: &M,
    global: &[f64],
    units: &[Vec<f64>],
    fallback: f64,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let invert = |h: DMatrix<f64>| -> DMatrix<f64> {
        let d = h.nrows();
        optim::spd_inverse(&h)
            .filter(|c| c.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| DMatrix::identity(d, d) * fallback)
    };
    let neg_global = |g: &[f64]| -log_posterior(model, g, units);
    let global_cov = if global.is_empty() { DMatrix::zeros(0, 0) } else { invert(optim::hessian(&neg_global, global, 1e-4)) };
    let unit_cov = units
        .iter()
        .enumerate()
        .map(|(i, u)| invert(optim::hessian(&|x: &[f64]| -model.unit_log_density(global, i, x), u, 1e-4)))
        .collect();
    (global_cov, unit_cov)
}

/// Inverse negative Hessian of the full log posterior, or the block-diagonal
/// assembly of the block proposals when that is not positive definite.
fn joint_proposal<M: HierarchicalModel + ?Sized>(
    model: &M,
    global: &[f64],
    units: &[Vec<f64>],
    global_cov: &DMatrix<f64>,
    unit_cov: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let (ng, du) = (global.len(), model.unit_dim());
    let neg = |x: &[f64]| {
        let (g, u) = unflatten(x, ng, du);
        -log_posterior(model, &g, &u)
    };
    let x = flatten(global, units);
    if let Some(c) = optim::spd_inverse(&optim::hessian(&neg, &x, 1e-4)).filter(|c| c.iter().all(|v| v.is_finite())) {
        return c;
    }
    let mut c = DMatrix::zeros(x.len(), x.len());
    c.view_mut((0, 0), (ng, ng)).copy_from(global_cov);
    for (i, u) in unit_cov.iter().enumerate() {
        c.view_mut((ng + i * du, ng + i * du), (du, du)).copy_from(u);
    }
    c
}

fn noncentred_proposal<M: HierarchicalModel + ?Sized>(model: &M, global: &[f64], units: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let (x, _) = to_noncentred(model, global, units)?;
    let ng = global.len();
    let neg = |x: &[f64]| match from_noncentred(model, x, ng) {
        Some((g, u, log_det)) => -log_posterior(model, &g, &u) - log_det,
        None => f64::INFINITY,
    };
    let d = x.len();
    Some(
        optim::spd_inverse(&optim::hessian(&neg, &x, 1e-4))
            .filter(|c| c.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| DMatrix::identity(d, d) * 0.01),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub chains: usize,
    /// Total iterations per chain, warm-up included.
    pub iters: usize,
    /// Warm-up iterations; half of `iters` when absent.
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Metropolis sweeps over all blocks per recorded iteration.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
}

fn default_sweeps() -> usize {
    10
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { chains: 4, iters: 4000, warmup: None, seed: 0, sweeps: default_sweeps() }
    }
}

impl McmcSettings {
    pub fn new(chains: usize, iters: usize, warmup: usize, seed: u64) -> Self {
        Self { chains, iters, warmup: Some(warmup), seed, ..Self::default() }
    }
}

impl McmcSettings {
    pub fn warmup(&self) -> usize {
        self.warmup.unwrap_or(self.iters / 2)
    }
}

/// Post-warm-up draws of every chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    pub n_chains: usize,
    /// Kept draws per chain.
    pub n_iter: usize,
    /// Row-major `[(chain·n_iter + iter)·n_params + param]`.
    pub draws: Vec<f64>,
    pub seed: u64,
    /// Post-warm-up acceptance rate of the global block, per chain.
    pub acceptance: Vec<f64>,
    /// Set when any block accepted fewer than 1% of post-warm-up proposals.
    pub diagnostics_failed: bool,
}

impl PosteriorSamples {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_iter
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::Validation(format!("no posterior draws for {name:?}")))
    }

    /// Value of parameter `p` in pooled draw `d`.
    pub fn value(&self, d: usize, p: usize) -> f64 {
        self.draws[d * self.n_params() + p]
    }

    /// All draws of a parameter, chains concatenated.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let p = self.index(name)?;
        Ok((0..self.n_draws()).map(|d| self.value(d, p)).collect())
    }

    pub fn chain_column(&self, p: usize, chain: usize) -> Vec<f64> {
        (0..self.n_iter).map(|i| self.value(chain * self.n_iter + i, p)).collect()
    }

    pub fn median(&self, name: &str) -> Result<f64> {
        Ok(stats::quantile(&self.column(name)?, 0.5))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Long format `chain,iter,param,value`, `iter` counting kept draws from 0.
    pub fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["chain", "iter", "param", "value"])?;
        for c in 0..self.n_chains {
            for i in 0..self.n_iter {
                for (p, name) in self.names.iter().enumerate() {
                    let v = self.value(c * self.n_iter + i, p);
                    w.write_record([c.to_string(), i.to_string(), name.clone(), format!("{v}")])?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut names: Vec<String> = Vec::new();
        let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = || Error::Schema("posterior CSV needs chain,iter,param,value".into());
            let chain: usize = rec.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let iter: usize = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let name = rec.get(2).ok_or_else(bad)?.to_string();
            let value: f64 = rec.get(3).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if !value.is_finite() {
                return Err(Error::Schema(format!("non-finite draw for {name}")));
            }
            let p = match names.iter().position(|n| *n == name) {
                Some(p) => p,
                None => {
                    names.push(name);
                    names.len() - 1
                }
            };
            rows.push((chain, iter, p, value));
        }
        let n_chains = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n_iter = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let np = names.len();
        if rows.len() != n_chains * n_iter * np {
            return Err(Error::Schema("posterior CSV has unequal chains or missing entries".into()));
        }
        let mut draws = vec![f64::NAN; rows.len()];
        for (c, i, p, v) in rows {
            draws[(c * n_iter + i) * np + p] = v;
        }
        Ok(Self { names, n_chains, n_iter, draws, seed: 0, acceptance: vec![], diagnostics_failed: false })
    }
}

const TARGET_ACCEPT: f64 = 0.234;
const REFRESH_EVERY: usize = 100;

/// Random-walk block with adaptive scale and proposal covariance.
struct Block {
    chol: DMatrix<f64>,
    log_scale: f64,
    accepted: usize,
    proposed: usize,
    history: Vec<Vec<f64>>,
}

impl Block {
    fn new(cov: &DMatrix<f64>) -> Self {
        let d = cov.nrows();
        let chol = cov.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(d, d) * 0.1);
        Self { chol, log_scale: 0.0, accepted: 0, proposed: 0, history: Vec::new() }
    }

    fn propose<R: Rng>(&self, x: &[f64], g: &mut R) -> Vec<f64> {
        let d = x.len();
        let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(g)));
        let step = &self.chol * z * (self.log_scale.exp() * 2.38 / (d as f64).sqrt());
        x.iter().zip(step.iter()).map(|(a, s)| a + s).collect()
    }

    fn adapt(&mut self, accept_prob: f64, step: usize) {
        let gain = 1.0 / ((step + 1) as f64).powf(0.6);
        self.log_scale = (self.log_scale + gain * (accept_prob - TARGET_ACCEPT)).clamp(-20.0, 10.0);
    }

    /// Replaces the proposal covariance with the empirical covariance of the
    /// later half of the warm-up history.
    fn refresh(&mut self) {
        let h = &self.history[self.history.len() / 2..];
        let d = self.chol.nrows();
        if h.len() < 2 * d + 2 {
            return;
        }
        let n = h.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| h.iter().map(|x| x[k]).sum::<f64>() / n).collect();
        let mut cov = DMatrix::zeros(d, d);
        for x in h {
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n - 1.0);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        let ridge = 1e-8 * (0..d).map(|k| cov[(k, k)]).sum::<f64>() / d as f64;
        if !(ridge > 0.0) {
            return;
        }
        for k in 0..d {
            cov[(k, k)] += ridge;
        }
        if let Some(c) = cov.cholesky() {
            self.chol = c.l();
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn accept<R: Rng>(log_ratio: f64, g: &mut R) -> (bool, f64) {
    let prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    (g.random::<f64>() < prob, prob)
}

struct ChainOutput {
    draws: Vec<f64>,
    global_rate: f64,
    min_rate: f64,
}

struct Start {
    global: Vec<f64>,
    units: Vec<Vec<f64>>,
    global_cov: DMatrix<f64>,
    unit_cov: Vec<DMatrix<f64>>,
    /// Proposal covariance of the joint block, present when there are units.
    joint_cov: Option<DMatrix<f64>>,
    /// Same in non-centred coordinates, when the model supports them.
    noncentred_cov: Option<DMatrix<f64>>,
}

/// Overdispersed start: the model's initial state jittered by one proposal
/// standard deviation per coordinate.
fn jittered_start<M: HierarchicalModel + ?Sized, R: Rng>(model: &M, start: &Start, g: &mut R) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (g0, u0) = (&start.global, &start.units);
    let (cg, cu) = (&start.global_cov, &start.unit_cov);
    let jitter = |x: &[f64], cov: &DMatrix<f64>, g: &mut R| -> Vec<f64> {
        x.iter().enumerate().map(|(k, v)| v + cov[(k, k)].max(0.0).sqrt() * { let z: f64 = StandardNormal.sample(g); z }).collect()
    };
    for _ in 0..100 {
        let gs = jitter(g0, cg, g);
        let us: Vec<Vec<f64>> = u0.iter().zip(cu).map(|(u, c)| jitter(u, c, g)).collect();
        if log_posterior(model, &gs, &us).is_finite() {
            return (gs, us);
        }
    }
    (g0.clone(), u0.clone())
}

fn flatten(global: &[f64], units: &[Vec<f64>]) -> Vec<f64> {
    let mut v = global.to_vec();
    for u in units {
        v.extend_from_slice(u);
    }
    v
}

fn unflatten(x: &[f64], n_global: usize, unit_dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let units = x[n_global..].chunks(unit_dim.max(1)).map(<[f64]>::to_vec).collect();
    (x[..n_global].to_vec(), units)
}

/// Non-centred coordinates `(g, z₁, …, z_n)` of a state, with `Σ log|det L|`.
fn to_noncentred<M: HierarchicalModel + ?Sized>(model: &M, global: &[f64], units: &[Vec<f64>]) -> Option<(Vec<f64>, f64)> {
    let mut x = global.to_vec();
    let mut log_det = 0.0;
    for (i, u) in units.iter().enumerate() {
        let (m, l) = model.unit_location_scale(global, i)?;
        let r = DVector::from_iterator(u.len(), u.iter().zip(&m).map(|(a, b)| a - b));
        let z = l.solve_lower_triangular(&r)?;
        x.extend(z.iter());
        log_det += l.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    }
    Some((x, log_det))
}

fn from_noncentred<M: HierarchicalModel + ?Sized>(model: &M, x: &[f64], n_global: usize) -> Option<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let du = model.unit_dim();
    let global = x[..n_global].to_vec();
    let mut units = Vec::new();
    let mut log_det = 0.0;
    for (i, z) in x[n_global..].chunks(du.max(1)).enumerate() {
        let (m, l) = model.unit_location_scale(&global, i)?;
        let u = l.clone() * DVector::from_column_slice(z);
        units.push(u.iter().zip(&m).map(|(a, b)| a + b).collect());
        log_det += l.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    }
    log_det.is_finite().then_some((global, units, log_det))
}

/// Chain state with cached prior and per-unit log densities.
struct State {
    global: Vec<f64>,
    units: Vec<Vec<f64>>,
    prior: f64,
    unit_ll: Vec<f64>,
}

impl State {
    fn total(&self) -> f64 {
        self.prior + self.unit_ll.iter().sum::<f64>()
    }

    /// Metropolis step on the global block (or, with `joint`, on everything).
    fn update_all<M: HierarchicalModel + ?Sized, R: Rng>(&mut self, model: &M, block: &mut Block, joint: bool, g: &mut R) -> f64 {
        let (global, units) = if joint {
            let x = block.propose(&flatten(&self.global, &self.units), g);
            unflatten(&x, self.global.len(), model.unit_dim())
        } else {
            (block.propose(&self.global, g), self.units.clone())
        };
        let prior = model.log_prior(&global);
        block.proposed += 1;
        if !prior.is_finite() {
            return 0.0;
        }
        let unit_ll: Vec<f64> = units.iter().enumerate().map(|(i, u)| model.unit_log_density(&global, i, u)).collect();
        let candidate = State { global, units, prior, unit_ll };
        let (ok, prob) = accept(candidate.total() - self.total(), g);
        if ok {
            block.accepted += 1;
            *self = candidate;
        }
        prob
    }
}

impl State {
    /// Metropolis step in non-centred coordinates; the target there carries
    /// the Jacobian `Π|det L(g)|`.
    fn update_noncentred<M: HierarchicalModel + ?Sized, R: Rng>(&mut self, model: &M, block: &mut Block, g: &mut R) -> (f64, Vec<f64>) {
        block.proposed += 1;
        let Some((x, log_det)) = to_noncentred(model, &self.global, &self.units) else {
            return (0.0, Vec::new());
        };
        let prop = block.propose(&x, g);
        let Some((global, units, prop_log_det)) = from_noncentred(model, &prop, self.global.len()) else {
            return (0.0, x);
        };
        let prior = model.log_prior(&global);
        if !prior.is_finite() {
            return (0.0, x);
        }
        let unit_ll: Vec<f64> = units.iter().enumerate().map(|(i, u)| model.unit_log_density(&global, i, u)).collect();
        let candidate = State { global, units, prior, unit_ll };
        let (ok, prob) = accept(candidate.total() + prop_log_det - self.total() - log_det, g);
        if ok {
            block.accepted += 1;
            *self = candidate;
            (prob, prop)
        } else {
            (prob, x)
        }
    }
}

fn run_chain<M: HierarchicalModel + ?Sized>(model: &M, settings: &McmcSettings, start: &Start, chain: usize) -> Result<ChainOutput> {
    let mut g = rng::stream(settings.seed, "mcmc", chain as u64);
    let warmup = settings.warmup();
    let (global, units) = jittered_start(model, start, &mut g);
    let prior = model.log_prior(&global);
    let unit_ll: Vec<f64> = units.iter().enumerate().map(|(i, u)| model.unit_log_density(&global, i, u)).collect();
    let mut state = State { global, units, prior, unit_ll };
    if !state.total().is_finite() {
        return Err(Error::Numerical(format!("chain {chain}: log posterior is not finite at the starting state")));
    }
    let mut gblock = Block::new(&start.global_cov);
    let mut ublocks: Vec<Block> = start.unit_cov.iter().map(Block::new).collect();
    let mut jblock = start.joint_cov.as_ref().map(Block::new);
    let mut ncblock = start.noncentred_cov.as_ref().map(Block::new);
    let kept = settings.iters - warmup;
    let n_report = model.report_names().len();
    let mut draws = Vec::with_capacity(kept * n_report);

    for it in 0..settings.iters {
        let adapting = it < warmup;
        if it == warmup {
            for b in std::iter::once(&mut gblock).chain(ublocks.iter_mut()).chain(jblock.iter_mut()).chain(ncblock.iter_mut()) {
                b.accepted = 0;
                b.proposed = 0;
                b.history = Vec::new();
            }
        }
        for sweep in 0..settings.sweeps {
            let step = it * settings.sweeps + sweep;
            if !state.global.is_empty() {
                let prob = state.update_all(model, &mut gblock, false, &mut g);
                if adapting {
                    gblock.adapt(prob, step);
                    gblock.history.push(state.global.clone());
                }
            }
            for (i, block) in ublocks.iter_mut().enumerate() {
                let prop = block.propose(&state.units[i], &mut g);
                let ll = model.unit_log_density(&state.global, i, &prop);
                let (ok, prob) = accept(ll - state.unit_ll[i], &mut g);
                block.proposed += 1;
                if ok {
                    block.accepted += 1;
                    state.units[i] = prop;
                    state.unit_ll[i] = ll;
                }
                if adapting {
                    block.adapt(prob, step);
                    block.history.push(state.units[i].clone());
                }
            }
            if let Some(jb) = jblock.as_mut() {
                let prob = state.update_all(model, jb, true, &mut g);
                if adapting {
                    jb.adapt(prob, step);
                    jb.history.push(flatten(&state.global, &state.units));
                }
            }
            if let Some(nb) = ncblock.as_mut() {
                let (prob, x) = state.update_noncentred(model, nb, &mut g);
                if adapting && !x.is_empty() {
                    nb.adapt(prob, step);
                    nb.history.push(x);
                }
            }
        }
        if adapting && (it + 1) % REFRESH_EVERY == 0 {
            for b in std::iter::once(&mut gblock).chain(ublocks.iter_mut()).chain(jblock.iter_mut()).chain(ncblock.iter_mut()) {
                b.refresh();
            }
        }
        if !adapting {
            let row = model.report(&state.global, &state.units);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("chain {chain}: non-finite draw at iteration {it}")));
            }
            draws.extend(row);
        }
    }
    let global_rate = if state.global.is_empty() { 1.0 } else { gblock.rate() };
    let min_rate = ublocks.iter().map(Block::rate).fold(global_rate, f64::min);
    Ok(ChainOutput { draws, global_rate, min_rate })
}

/// Runs `settings.chains` independent chains in parallel; chain `c` draws
/// from its own random stream, so output does not depend on scheduling.
pub fn run_mcmc<M: HierarchicalModel + ?Sized>(model: &M, settings: &McmcSettings) -> Result<PosteriorSamples> {
    if settings.chains == 0 || settings.sweeps == 0 {
        return Err(Error::Validation("at least one chain and one sweep per iteration are required".into()));
    }
    if settings.iters <= settings.warmup() {
        return Err(Error::Validation(format!("iters ({}) must exceed warmup ({})", settings.iters, settings.warmup())));
    }
    let (global, units) = model.initial_state();
    let (global_cov, unit_cov) = model.initial_proposal();
    if global.len() != model.global_dim() || global_cov.nrows() != global.len() || unit_cov.len() != units.len() {
        return Err(Error::Validation("model initial state and proposal shapes disagree".into()));
    }
    let joint_cov = (!units.is_empty()).then(|| joint_proposal(model, &global, &units, &global_cov, &unit_cov));
    let noncentred_cov = if units.is_empty() { None } else { noncentred_proposal(model, &global, &units) };
    let start = Start { global, units, global_cov, unit_cov, joint_cov, noncentred_cov };
    let outputs = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_chain(model, settings, &start, c))
        .collect::<Result<Vec<_>>>()?;
    let diagnostics_failed = outputs.iter().any(|o| o.min_rate < 0.01);
    if diagnostics_failed {
        log::warn!("post-warm-up acceptance below 1% in at least one block");
    }
    Ok(PosteriorSamples {
        names: model.report_names(),
        n_chains: settings.chains,
        n_iter: settings.iters - settings.warmup(),
        acceptance: outputs.iter().map(|o| o.global_rate).collect(),
        draws: outputs.into_iter().flat_map(|o| o.draws).collect(),
        seed: settings.seed,
        diagnostics_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bivariate normal target without units.
    struct Gauss2 {
        chol_prec: [[f64; 2]; 2],
    }

    impl HierarchicalModel for Gauss2 {
        fn global_dim(&self) -> usize {
            2
        }
        fn unit_dim(&self) -> usize {
            0
        }
        fn unit_ids(&self) -> Vec<String> {
            vec![]
        }
        fn log_prior(&self, g: &[f64]) -> f64 {
            let p = self.chol_prec;
            let a = p[0][0] * g[0];
            let b = p[1][0] * g[0] + p[1][1] * g[1];
            -0.5 * (a * a + b * b)
        }
        fn unit_log_density(&self, _: &[f64], _: usize, _: &[f64]) -> f64 {
            0.0
        }
        fn initial_state(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
            (vec![0.0, 0.0], vec![])
        }
        fn initial_proposal(&self) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
            (DMatrix::identity(2, 2), vec![])
        }
        fn report_names(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn report(&self, g: &[f64], _: &[Vec<f64>]) -> Vec<f64> {
            g.to_vec()
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let m = Gauss2 { chol_prec: [[1.0, 0.0], [0.5, 2.0]] };
        let s = McmcSettings::new(2, 400, 400 / 2, 5);
        let a = run_mcmc(&m, &s).unwrap();
        let b = run_mcmc(&m, &s).unwrap();
        assert_eq!(a, b);
        let c = run_mcmc(&m, &McmcSettings { seed: 6, ..s }).unwrap();
        assert_ne!(a.draws, c.draws);
        assert_eq!(a.n_iter, 200);
    }

    #[test]
    fn csv_round_trip() {
        let m = Gauss2 { chol_prec: [[1.0, 0.0], [0.0, 1.0]] };
        let s = run_mcmc(&m, &McmcSettings::new(2, 20, 10, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.csv");
        s.write_csv(&p).unwrap();
        let back = PosteriorSamples::read_csv(&p).unwrap();
        assert_eq!(back.draws, s.draws);
        assert_eq!(back.names, s.names);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("chain,iter,param,value\n0,0,a,"));
    }

    #[test]
    fn rejects_bad_settings() {
        let m = Gauss2 { chol_prec: [[1.0, 0.0], [0.0, 1.0]] };
        assert!(run_mcmc(&m, &McmcSettings::new(2, 10, 10, 0)).is_err());
    }
}

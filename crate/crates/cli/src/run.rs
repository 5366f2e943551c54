//! Command pipelines. Every artifact is written to a temporary file in the
//! output directory and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use degrade_core::addt::{self, AddtFit, AddtOptions};
use degrade_core::bayes::coating::{self, CoatingModel, RulTarget};
use degrade_core::bayes::diagnostics::diagnostics;
use degrade_core::bayes::fatigue::{self, CycleTarget, FatigueModel};
use degrade_core::bayes::{run_mcmc, PosteriorSamples};
use degrade_core::curve::{format_f64, CdfCurve};
use degrade_core::data::{self, arrhenius_transform, AddtDataset, RmdtDataset};
use degrade_core::fit::FitResult;
use degrade_core::gpm::{self, GpmFitOptions, GpmParams, UnitDesign};
use degrade_core::nonparam::{self, EventTable};
use degrade_core::optim::OptimOptions;
use degrade_core::rng::child_seed;
use degrade_core::sp;

use crate::config::{
    AddtBlock, BayesBlock, BayesModel, Command, GpmBlock, ModelBlock, RunConfig, SimulateBlock, SpBlock,
};
use crate::CliError;

pub struct Outcome {
    pub summary: String,
    /// False when a fit or sampler failed its convergence checks; artifacts
    /// are still written and carry the flag.
    pub converged: bool,
}

struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&Path) -> degrade_core::Result<()>,
    {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let result = f(&tmp).map_err(CliError::from).and_then(|_| {
            std::fs::rename(&tmp, &target).map_err(|e| CliError::config(format!("cannot write {}: {e}", target.display())))
        });
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        result?;
        self.written.push(target.display().to_string());
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_with(name, |p| Ok(std::fs::write(p, text)?))
    }

    fn files(&self) -> String {
        self.written.join(", ")
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let seed = match command {
        Command::Km => cfg.seed.unwrap_or(0),
        _ => cfg.seed.ok_or_else(|| CliError::config(format!("`seed` is required for `{}`", command.name())))?,
    };
    let mut out = Output::new(cfg)?;
    match command {
        Command::Fit => fit(cfg, seed, &mut out),
        Command::PredictCdf => predict_cdf(cfg, seed, &mut out),
        Command::Rul => rul(cfg, seed, &mut out),
        Command::Ti => ti(cfg, seed, &mut out),
        Command::Km => km(cfg, &mut out),
        Command::Simulate => simulate(cfg, seed, &mut out),
    }
}

fn load_rmdt(cfg: &RunConfig) -> Result<RmdtDataset, CliError> {
    let d = cfg.data()?;
    let path = d.rmdt.as_ref().ok_or_else(|| CliError::config("`data.rmdt` is required for this model"))?;
    Ok(data::load_rmdt(path, &d.rmdt_schema)?)
}

fn load_addt(cfg: &RunConfig) -> Result<AddtDataset, CliError> {
    let d = cfg.data()?;
    let path = d.addt.as_ref().ok_or_else(|| CliError::config("`data.addt` is required for the addt model"))?;
    Ok(data::load_addt(path, &d.addt_schema)?)
}

fn fit_summary(label: &str, fit: &FitResult) -> String {
    format!("{label}: loglik={:.6} aic={:.6} converged={}", fit.loglik, fit.aic, fit.converged)
}

fn gpm_fit(block: &GpmBlock, data: &RmdtDataset, seed: u64) -> Result<FitResult, CliError> {
    let options = GpmFitOptions {
        optim: OptimOptions { seed: child_seed(seed, "fit", 0), ..block.fit.optim.clone() },
        start: block.fit.start.clone(),
    };
    Ok(gpm::fit_gpm(&block.model, data, &options)?)
}

fn sp_fit(block: &SpBlock, data: &RmdtDataset, seed: u64) -> Result<FitResult, CliError> {
    let options = OptimOptions { seed: child_seed(seed, "fit", 0), ..block.optim.clone() };
    Ok(sp::fit_sp(&block.model, data, &options)?)
}

fn addt_fit(block: &AddtBlock, data: &AddtDataset, seed: u64) -> Result<AddtFit, CliError> {
    let mut options: AddtOptions = block.options.clone();
    options.optim.seed = child_seed(seed, "fit", 0);
    options.semiparametric.seed = child_seed(seed, "bootstrap", 0);
    Ok(addt::fit_addt(block.method, data, &options)?)
}

struct Posterior {
    samples: PosteriorSamples,
    converged: bool,
    max_rhat: f64,
}

fn bayes_fit(block: &BayesBlock, data: &RmdtDataset, seed: u64) -> Result<Posterior, CliError> {
    let settings = degrade_core::bayes::McmcSettings { seed: child_seed(seed, "mcmc", 0), ..block.mcmc.clone() };
    let samples = match &block.model {
        BayesModel::Coating(spec) => {
            let model = CoatingModel::new(spec.clone(), data)?;
            let mut s = run_mcmc(&model, &settings)?;
            coating::attach_covariates(&mut s, &model);
            s
        }
        BayesModel::Fatigue(spec) => run_mcmc(&FatigueModel::new(spec.clone(), data)?, &settings)?,
    };
    let max_rhat = if samples.n_chains >= 2 {
        diagnostics(&samples).iter().map(|d| d.rhat).filter(|r| r.is_finite()).fold(1.0, f64::max)
    } else {
        f64::NAN
    };
    let converged = !samples.diagnostics_failed && !(max_rhat > 1.05);
    Ok(Posterior { samples, converged, max_rhat })
}

fn write_posterior(post: &Posterior, out: &mut Output) -> Result<(), CliError> {
    out.write_with("posterior.csv", |p| post.samples.write_csv(p))?;
    if post.samples.n_chains >= 2 {
        let diag = diagnostics(&post.samples);
        let json = serde_json::json!({
            "converged": post.converged,
            "diagnostics_failed": post.samples.diagnostics_failed,
            "acceptance": post.samples.acceptance,
            "parameters": diag,
        });
        out.write_text("diagnostics.json", &(serde_json::to_string_pretty(&json).expect("serializable") + "\n"))?;
    }
    Ok(())
}

fn write_fit(fit: &FitResult, out: &mut Output) -> Result<(), CliError> {
    out.write_with("fit.json", |p| fit.write_json(p))
}

fn write_unit_fits(block: &GpmBlock, data: &RmdtDataset, out: &mut Output) -> Result<(), CliError> {
    let fits = gpm::unit_least_squares(&block.model, data)?;
    let mut text = String::from("unit_id");
    for name in block.model.family.param_names() {
        let _ = write!(text, ",{name}");
    }
    text.push_str(",rss\n");
    for f in &fits {
        text.push_str(&f.unit_id);
        for v in &f.params {
            let _ = write!(text, ",{}", format_f64(*v));
        }
        let _ = writeln!(text, ",{}", format_f64(f.rss));
    }
    out.write_text("unit_fits.csv", &text)
}

fn fit(cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome, CliError> {
    let (summary, converged) = match cfg.require_model(Command::Fit)? {
        ModelBlock::Gpm(b) => {
            let data = load_rmdt(cfg)?;
            let f = gpm_fit(b, &data, seed)?;
            write_fit(&f, out)?;
            write_unit_fits(b, &data, out)?;
            (fit_summary("fit gpm", &f), f.converged)
        }
        ModelBlock::Sp(b) => {
            let f = sp_fit(b, &load_rmdt(cfg)?, seed)?;
            write_fit(&f, out)?;
            (fit_summary(&format!("fit sp/{}", b.model.process.label()), &f), f.converged)
        }
        ModelBlock::Addt(b) => {
            let f = addt_fit(b, &load_addt(cfg)?, seed)?;
            write_fit(&f.fit, out)?;
            let model = serde_json::to_string_pretty(&f.model).expect("serializable") + "\n";
            out.write_text("addt_model.json", &model)?;
            (fit_summary(&format!("fit {}", f.fit.model), &f.fit), f.fit.converged)
        }
        ModelBlock::Bayes(b) => {
            let post = bayes_fit(b, &load_rmdt(cfg)?, seed)?;
            write_posterior(&post, out)?;
            let s = format!(
                "fit bayes: draws={} max_rhat={:.4} converged={}",
                post.samples.n_draws(),
                post.max_rhat,
                post.converged
            );
            (s, post.converged)
        }
    };
    Ok(Outcome { summary: format!("{summary} -> {}", out.files()), converged })
}

fn write_curve(name: &str, curve: &CdfCurve, out: &mut Output) -> Result<(), CliError> {
    out.write_with(name, |p| curve.write_csv(p))
}

fn ecdf_curve(mut cycles: Vec<f64>, never: usize, times: &[f64]) -> CdfCurve {
    cycles.sort_by(f64::total_cmp);
    let n = (cycles.len() + never) as f64;
    let cdf = times.iter().map(|&t| cycles.partition_point(|&c| c <= t) as f64 / n).collect();
    CdfCurve::new(times.to_vec(), cdf)
}

fn predict_cdf(cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome, CliError> {
    let threshold = cfg.require_threshold()?;
    let times = cfg.require_times()?;
    let (label, converged) = match cfg.require_model(Command::PredictCdf)? {
        ModelBlock::Gpm(b) => {
            let data = load_rmdt(cfg)?;
            let f = gpm_fit(b, &data, seed)?;
            write_fit(&f, out)?;
            let curve = match &b.bootstrap {
                Some(opts) => {
                    let opts = gpm::BootstrapOptions {
                        seed: child_seed(seed, "bootstrap", 0),
                        use_condition: opts.use_condition.or(b.use_condition),
                        ..opts.clone()
                    };
                    let res = gpm::bootstrap_ci(&f, &b.model, &data, &threshold, &times, &opts)?;
                    if res.warning {
                        log::warn!("{} of {} bootstrap replicates dropped", res.dropped, res.attempted);
                    }
                    res.curve
                }
                None => {
                    let params = GpmParams::from_fit(&b.model, &f)?;
                    gpm::failure_cdf(&params, &b.model, &threshold, &times, b.draws, child_seed(seed, "predict", 0), b.use_condition)?
                }
            };
            write_curve("cdf.csv", &curve, out)?;
            ("predict-cdf gpm".to_string(), f.converged)
        }
        ModelBlock::Sp(b) => {
            let f = sp_fit(b, &load_rmdt(cfg)?, seed)?;
            write_fit(&f, out)?;
            let spec = sp::spec_from_fit(b.model.process, &f)?;
            write_curve("cdf.csv", &sp::sp_failure_cdf(&spec, threshold.value, &times)?, out)?;
            (format!("predict-cdf sp/{}", b.model.process.label()), f.converged)
        }
        ModelBlock::Addt(b) => {
            let d = cfg.data()?;
            let temp = b.use_condition_c.ok_or_else(|| CliError::config("`addt.use_condition_c` is required for predict-cdf"))?;
            let x = arrhenius_transform(temp, d.addt_schema.sign)?;
            let f = addt_fit(b, &load_addt(cfg)?, seed)?;
            write_fit(&f.fit, out)?;
            write_curve("cdf.csv", &addt::addt_failure_cdf(&f, threshold.value, x, &times), out)?;
            (format!("predict-cdf {} at {temp} °C", f.fit.model), f.fit.converged)
        }
        ModelBlock::Bayes(b) => {
            let post = bayes_fit(b, &load_rmdt(cfg)?, seed)?;
            write_posterior(&post, out)?;
            let curve = match &b.model {
                BayesModel::Coating(spec) => {
                    let x = b.new_unit.clone().unwrap_or_default();
                    coating::posterior_cdf(&post.samples, spec, &x, threshold.value, &times, cfg.level)?
                }
                BayesModel::Fatigue(spec) => {
                    let target = CycleTarget::NewUnit { seed: child_seed(seed, "predict", 0) };
                    let s = fatigue::cycles_to_threshold(&post.samples, spec, threshold.value, &target)?;
                    ecdf_curve(s.cycles, s.never, &times)
                }
            };
            write_curve("cdf.csv", &curve, out)?;
            ("predict-cdf bayes".to_string(), post.converged)
        }
    };
    Ok(Outcome { summary: format!("{label}: {} times, converged={converged} -> {}", times.len(), out.files()), converged })
}

fn rul(cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome, CliError> {
    let threshold = cfg.require_threshold()?;
    let ModelBlock::Bayes(b) = cfg.require_model(Command::Rul)? else {
        return Err(CliError::config("`rul` needs a `bayes` model block"));
    };
    let block = cfg.rul.as_ref().ok_or_else(|| CliError::config("missing `rul` block"))?;
    let post = bayes_fit(b, &load_rmdt(cfg)?, seed)?;
    write_posterior(&post, out)?;
    let detail = match &b.model {
        BayesModel::Coating(spec) => {
            let horizons = block.horizons.as_ref().ok_or_else(|| CliError::config("`rul.horizons` is required"))?.values()?;
            let target = match &block.unit {
                Some(id) => RulTarget::Unit(id.clone()),
                None => RulTarget::NewUnit(b.new_unit.clone().unwrap_or_default()),
            };
            let r = coating::rul_distribution(&post.samples, spec, &target, block.t0, &horizons, threshold.value, cfg.level)?;
            write_curve("rul.csv", &r.curve, out)?;
            format!("used={} excluded={}", r.used, r.excluded)
        }
        BayesModel::Fatigue(spec) => {
            let target = match &block.unit {
                Some(id) => CycleTarget::Unit(id.clone()),
                None => CycleTarget::NewUnit { seed: child_seed(seed, "rul", 0) },
            };
            let s = fatigue::cycles_to_threshold(&post.samples, spec, threshold.value, &target)?;
            let mut text = String::from("draw,cycles\n");
            for (i, c) in s.cycles.iter().enumerate() {
                let _ = writeln!(text, "{i},{}", format_f64(*c));
            }
            out.write_text("cycles.csv", &text)?;
            let median = if s.cycles.is_empty() { f64::NAN } else { degrade_core::stats::quantile(&s.cycles, 0.5) };
            format!("reached={} never={} median={median:.6}", s.cycles.len(), s.never)
        }
    };
    Ok(Outcome { summary: format!("rul bayes: {detail} converged={} -> {}", post.converged, out.files()), converged: post.converged })
}

fn ti(cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome, CliError> {
    let threshold = cfg.require_threshold()?;
    let ModelBlock::Addt(b) = cfg.require_model(Command::Ti)? else {
        return Err(CliError::config("`ti` needs an `addt` model block"));
    };
    let f = addt_fit(b, &load_addt(cfg)?, seed)?;
    write_fit(&f.fit, out)?;
    let mut options = cfg.ti.clone();
    options.sign = cfg.data()?.addt_schema.sign;
    let r = addt::thermal_index(&f, threshold.value, &options)?;
    out.write_with("ti.json", |p| r.write_json(p))?;
    out.write_with("mtf_curve.csv", |p| r.write_curve_csv(p))?;
    let summary = format!("ti {}: TI={:.3} °C at t_d={} h converged={} -> {}", f.fit.model, r.ti_c, r.td_hours, f.fit.converged, out.files());
    Ok(Outcome { summary, converged: f.fit.converged })
}

fn km(cfg: &RunConfig, out: &mut Output) -> Result<Outcome, CliError> {
    let threshold = cfg.require_threshold()?;
    let data = load_rmdt(cfg)?;
    let events = nonparam::extract_soft_failures(&data, &threshold);
    let mut text = String::from("unit_id,time,failed\n");
    for e in &events {
        let _ = writeln!(text, "{},{},{}", e.unit_id, format_f64(e.time), e.failed);
    }
    out.write_text("events.csv", &text)?;
    let table = EventTable::new(&events)?;
    let failures: usize = table.failures.iter().sum();
    let band = match nonparam::nair_scb_with(&table, cfg.km.level, cfg.km.range, cfg.km.transform) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("no simultaneous band: {e}");
            nonparam::kaplan_meier(&table)
        }
    };
    out.write_with("km.csv", |p| nonparam::write_band_csv(&band, p))?;
    let summary = format!("km: units={} failures={failures} -> {}", events.len(), out.files());
    Ok(Outcome { summary, converged: true })
}

fn simulate(cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome, CliError> {
    let block = cfg.simulate.as_ref().ok_or_else(|| CliError::config("missing `simulate` block"))?;
    let sim_seed = child_seed(seed, "simulate", 0);
    let summary = match block {
        SimulateBlock::Gpm(s) => {
            let truth = GpmParams::from_reported(&s.model, &s.truth)?;
            let times = s.times.values()?;
            if s.units == 0 {
                return Err(CliError::config("`units` must be positive"));
            }
            let design: Vec<UnitDesign> = (0..s.units)
                .map(|i| UnitDesign {
                    unit_id: format!("u{:04}", i + 1),
                    times: times.clone(),
                    covariates: s.covariates.iter().filter(|(_, v)| !v.is_empty()).map(|(k, v)| (k.clone(), v[i % v.len()])).collect(),
                })
                .collect();
            let data = gpm::simulate_rmdt(&s.model, &truth, &design, sim_seed)?;
            out.write_with("data.csv", |p| data::write_rmdt(&data, p))?;
            format!("simulate gpm: {} units x {} times", s.units, times.len())
        }
        SimulateBlock::Sp(s) => {
            let times = s.times.values()?;
            let data = sp::simulate_sp_dataset(&s.model, &times, s.units, sim_seed)?;
            out.write_with("data.csv", |p| data::write_rmdt(&data, p))?;
            format!("simulate sp/{}: {} units x {} times", s.model.process.label(), s.units, times.len())
        }
        SimulateBlock::Addt(s) => {
            let data = addt::simulate_addt(&s.truth, &s.design, sim_seed)?;
            out.write_with("data.csv", |p| data::write_addt(&data, p))?;
            format!("simulate addt: {} records", data.records.len())
        }
    };
    Ok(Outcome { summary: format!("{summary} -> {}", out.files()), converged: true })
}

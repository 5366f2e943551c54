use degrade_core::bayes::coating::*;
use degrade_core::bayes::fatigue::*;
use degrade_core::bayes::*;
use degrade_core::data::{RmdtDataset, UnitSeries};
use degrade_core::rng;
use degrade_core::stats;
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

/// y_k ~ N(θ, 1) with θ ~ N(0, τ²), no units.
struct NormalMean {
    y: Vec<f64>,
    tau: f64,
}

impl HierarchicalModel for NormalMean {
    fn global_dim(&self) -> usize {
        1
    }
    fn unit_dim(&self) -> usize {
        0
    }
    fn unit_ids(&self) -> Vec<String> {
        vec![]
    }
    fn log_prior(&self, g: &[f64]) -> f64 {
        stats::normal_logpdf(g[0], 0.0, self.tau) + self.y.iter().map(|y| stats::normal_logpdf(*y, g[0], 1.0)).sum::<f64>()
    }
    fn unit_log_density(&self, _: &[f64], _: usize, _: &[f64]) -> f64 {
        0.0
    }
    fn initial_state(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (vec![0.0], vec![])
    }
    fn initial_proposal(&self) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        (DMatrix::from_element(1, 1, 1.0), vec![])
    }
    fn report_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }
    fn report(&self, g: &[f64], _: &[Vec<f64>]) -> Vec<f64> {
        g.to_vec()
    }
}

struct Gaussian2 {
    prec: [[f64; 2]; 2],
}

impl HierarchicalModel for Gaussian2 {
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
        let p = self.prec;
        -0.5 * (p[0][0] * g[0] * g[0] + 2.0 * p[0][1] * g[0] * g[1] + p[1][1] * g[1] * g[1])
    }
    fn unit_log_density(&self, _: &[f64], _: usize, _: &[f64]) -> f64 {
        0.0
    }
    fn initial_state(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (vec![1.0, -1.0], vec![])
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
fn conjugate_normal_mean() {
    let mut g = rng::stream(1, "toy-data", 0);
    let y: Vec<f64> = (0..20).map(|_| Normal::new(1.5, 1.0).unwrap().sample(&mut g)).collect();
    let tau = 10.0;
    let model = NormalMean { y: y.clone(), tau };
    let prec = 1.0 / (tau * tau) + y.len() as f64;
    let (post_mean, post_sd) = (y.iter().sum::<f64>() / prec, prec.recip().sqrt());
    let s = run_mcmc(&model, &McmcSettings::new(4, 4000, 2000, 3)).unwrap();
    let d = &diagnostics(&s)[0];
    assert!(d.rhat < 1.01, "{d:?}");
    let theta = s.column("theta").unwrap();
    let (m, sd) = (stats::mean(&theta), stats::variance(&theta).sqrt());
    let se_mean = post_sd / d.ess.sqrt();
    let se_sd = post_sd / (2.0 * d.ess).sqrt();
    assert!((m - post_mean).abs() < 3.0 * se_mean, "mean {m} vs {post_mean} (se {se_mean})");
    assert!((sd - post_sd).abs() < 3.0 * se_sd, "sd {sd} vs {post_sd} (se {se_sd})");
    assert!(!s.diagnostics_failed);
}

#[test]
fn gaussian_target_covariance() {
    // Σ = [[1, 0.8], [0.8, 1]]
    let det = 1.0 - 0.64;
    let model = Gaussian2 { prec: [[1.0 / det, -0.8 / det], [-0.8 / det, 1.0 / det]] };
    let s = run_mcmc(&model, &McmcSettings::new(4, 27_000, 2000, 9)).unwrap();
    assert_eq!(s.n_draws(), 100_000);
    let (a, b) = (s.column("a").unwrap(), s.column("b").unwrap());
    let (ma, mb) = (stats::mean(&a), stats::mean(&b));
    let n = a.len() as f64;
    let c = |x: &[f64], mx: f64, y: &[f64], my: f64| x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / (n - 1.0);
    let emp = [c(&a, ma, &a, ma), c(&a, ma, &b, mb), c(&b, mb, &b, mb)];
    let diff = ((emp[0] - 1.0).powi(2) + 2.0 * (emp[1] - 0.8).powi(2) + (emp[2] - 1.0).powi(2)).sqrt();
    let norm = (1.0f64 + 2.0 * 0.64 + 1.0).sqrt();
    assert!(diff / norm < 0.05, "{emp:?}");
    let rate = stats::mean(&s.acceptance);
    assert!((rate - 0.234).abs() < 0.08, "acceptance {rate}");
}

struct FatigueTruth {
    mu: [f64; 2],
    sd: [f64; 2],
    rho: f64,
    sigma_eps: f64,
}

fn simulate_fatigue(truth: &FatigueTruth, n: usize, times: &[f64], seed: u64) -> (RmdtDataset, Vec<(f64, f64)>) {
    let spec = FatigueSpec::new(9.0);
    let mut units = Vec::new();
    let mut params = Vec::new();
    for i in 0..n {
        let mut g = rng::stream(seed, "fatigue-sim", i as u64);
        let z1: f64 = rand_distr::StandardNormal.sample(&mut g);
        let z2: f64 = rand_distr::StandardNormal.sample(&mut g);
        let a = truth.mu[0] + truth.sd[0] * z1;
        let b = truth.mu[1] + truth.sd[1] * (truth.rho * z1 + (1.0 - truth.rho * truth.rho).sqrt() * z2);
        let path = spec.path(a, b);
        let y = times
            .iter()
            .map(|&t| path.evaluate(t).unwrap() + truth.sigma_eps * { let e: f64 = rand_distr::StandardNormal.sample(&mut g); e })
            .collect();
        units.push(UnitSeries::new(format!("s{i}"), times.to_vec(), y).unwrap());
        params.push((a, b));
    }
    (RmdtDataset::new(units).unwrap(), params)
}

#[test]
fn fatigue_posterior_recovers_paths() {
    let truth = FatigueTruth { mu: [-8.5, 3.2], sd: [0.1, 0.05], rho: -0.5, sigma_eps: 0.2 };
    let times: Vec<f64> = (0..=36).map(|k| 5.0 * k as f64).collect();
    let (data, params) = simulate_fatigue(&truth, 5, &times, 21);
    let spec = FatigueSpec::new(9.0);
    let model = FatigueModel::new(spec.clone(), &data).unwrap();
    let s = run_mcmc(&model, &McmcSettings::new(4, 4000, 2000, 4)).unwrap();
    let diag = diagnostics(&s);
    let worst = diag.iter().map(|d| d.rhat).fold(0.0, f64::max);
    assert!(worst < 1.05, "{diag:#?}");
    assert!(!s.diagnostics_failed);

    let mut sq = 0.0;
    let mut count = 0.0;
    for (u, (a, b)) in data.units.iter().zip(&params) {
        let med = path_quantile(&s, &spec, &u.unit_id, &times, 0.5).unwrap();
        for (t, m) in times.iter().zip(med) {
            sq += (m - spec.path(*a, *b).evaluate(*t).unwrap()).powi(2);
            count += 1.0;
        }
    }
    let rmse = (sq / count).sqrt();
    assert!(rmse < 2.0 * truth.sigma_eps, "rmse {rmse}");

    let th = degrade_core::data::FailureThreshold::increasing(30.0);
    let mean_cross = spec.path(truth.mu[0], truth.mu[1]).first_crossing_time(&th).unwrap().unwrap();
    let cross = cycles_to_threshold(&s, &spec, 30.0, &CycleTarget::NewUnit { seed: 1 }).unwrap();
    assert_eq!(cross.never, 0);
    let (lo, hi) = (stats::quantile(&cross.cycles, 0.025), stats::quantile(&cross.cycles, 0.975));
    assert!(lo <= mean_cross && mean_cross <= hi, "{mean_cross} not in [{lo}, {hi}]");
}

fn simulate_coating(n: usize, seed: u64, order: &[usize]) -> RmdtDataset {
    // α = −0.5, μ = 4, β = 0.5, γ = 0.4, σ_w = 0.15, σ_ε = 0.005
    let times: Vec<f64> = (1..=10).map(|k| 15.0 * k as f64).collect();
    let mut units: Vec<UnitSeries> = (0..n)
        .map(|i| {
            let mut g = rng::stream(seed, "coating-sim", i as u64);
            let x = (i % 2) as f64;
            let w: f64 = 0.15 * { let z: f64 = rand_distr::StandardNormal.sample(&mut g); z };
            let y = times
                .iter()
                .map(|&t| {
                    let e: f64 = rand_distr::StandardNormal.sample(&mut g);
                    -0.5 * w.exp() / (1.0 + (-(f64::ln(t) - 4.0 - 0.5 * x) / 0.4).exp()) + 0.005 * e
                })
                .collect();
            UnitSeries::new(format!("u{i}"), times.clone(), y).unwrap().with_covariate("uv", x)
        })
        .collect();
    if !order.is_empty() {
        units = order.iter().map(|&k| units[k].clone()).collect();
    }
    RmdtDataset::new(units).unwrap()
}

fn coating_spec() -> CoatingSpec {
    CoatingSpec { covariates: vec!["uv".into()], priors: CoatingPriors::default() }
}

#[test]
fn coating_predictions() {
    let data = simulate_coating(10, 2, &[]);
    let model = CoatingModel::new(coating_spec(), &data).unwrap();
    let mut s = run_mcmc(&model, &McmcSettings::new(4, 4000, 2000, 8)).unwrap();
    attach_covariates(&mut s, &model);
    let diag = diagnostics(&s);
    assert!(diag.iter().filter(|d| !d.param.starts_with("x_")).all(|d| d.rhat < 1.05), "{diag:#?}");
    for (name, truth) in [("alpha", -0.5), ("mu", 4.0), ("beta_uv", 0.5), ("gamma", 0.4)] {
        let col = s.column(name).unwrap();
        let (lo, hi) = (stats::quantile(&col, 0.005), stats::quantile(&col, 0.995));
        assert!(lo < truth && truth < hi, "{name}: [{lo}, {hi}]");
    }

    let times: Vec<f64> = (1..=40).map(|k| 10.0 * k as f64).collect();
    let cdf = posterior_cdf(&s, &coating_spec(), &[1.0], -0.3, &times, 0.95).unwrap();
    assert!(cdf.is_nondecreasing());
    let (lo, hi) = (cdf.lower.as_ref().unwrap(), cdf.upper.as_ref().unwrap());
    assert!((0..times.len()).all(|k| lo[k] <= cdf.cdf[k] && cdf.cdf[k] <= hi[k]));

    // a fresh unit at age zero: remaining life is the failure-time distribution
    let rul = rul_distribution(&s, &coating_spec(), &RulTarget::NewUnit(vec![1.0]), 0.0, &times, -0.3, 0.95).unwrap();
    assert_eq!(rul.excluded, 0);
    assert!(rul.curve.sup_distance(&cdf) < 1e-12);

    // tested unit: conditioning on survival to t0
    let r = rul_distribution(&s, &coating_spec(), &RulTarget::Unit("u1".into()), 100.0, &times, -0.3, 0.95).unwrap();
    assert!(r.curve.is_nondecreasing());
    assert_eq!(r.used + r.excluded, s.n_draws());
}

#[test]
fn unit_order_does_not_change_the_posterior() {
    let a = simulate_coating(6, 5, &[]);
    let b = simulate_coating(6, 5, &[3, 0, 5, 1, 4, 2]);
    let settings = McmcSettings::new(4, 4000, 2000, 12);
    let sa = run_mcmc(&CoatingModel::new(coating_spec(), &a).unwrap(), &settings).unwrap();
    let sb = run_mcmc(&CoatingModel::new(coating_spec(), &b).unwrap(), &settings).unwrap();
    let da = diagnostics(&sa);
    for name in ["alpha", "mu", "gamma", "beta_uv", "sigma_eps", "sigma_w", "w[u2]"] {
        let (xa, xb) = (sa.column(name).unwrap(), sb.column(name).unwrap());
        let ess = da.iter().find(|d| d.param == name).unwrap().ess;
        let se = (stats::variance(&xa) / ess * 2.0).sqrt();
        assert!((stats::mean(&xa) - stats::mean(&xb)).abs() < 4.0 * se, "{name}");
    }
}

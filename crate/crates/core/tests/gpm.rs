use degrade_core::data::{ArrheniusSign, FailureThreshold, RmdtDataset, UnitSeries};
use degrade_core::gpm::*;
use degrade_core::optim::{self, OptimOptions};
use degrade_core::stats;
use std::collections::BTreeMap;

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn design(n: usize, times: &[f64]) -> Vec<UnitDesign> {
    (0..n).map(|i| UnitDesign { unit_id: format!("u{i:03}"), times: times.to_vec(), covariates: BTreeMap::new() }).collect()
}

fn log_rate_spec() -> GpmModelSpec {
    GpmModelSpec::new(GpmFamily::LinearLogRate, &["log_slope"])
}

fn log_rate_truth() -> BTreeMap<String, f64> {
    map(&[("intercept", 0.0), ("mu_log_slope", 0.0), ("sd_log_slope", 0.3), ("sigma_eps", 0.05)])
}

#[test]
fn quadrature_order_15_vs_31() {
    let spec = GpmModelSpec::new(GpmFamily::DeviceB { baseline_temp_c: 195.0 }, &["beta1", "beta2"])
        .with_accelerator("temp_c", ArrheniusSign::Positive);
    let truth = GpmParams::from_reported(
        &spec,
        &map(&[
            ("activation", 0.6),
            ("mu_beta1", -8.0),
            ("mu_beta2", 0.0),
            ("sd_beta1", 0.15),
            ("sd_beta2", 0.1),
            ("corr_beta1_beta2", 0.2),
            ("sigma_eps", 0.02),
        ]),
    )
    .unwrap();
    let mut d = design(12, &[500.0, 1000.0, 2000.0, 4000.0]);
    for (i, u) in d.iter_mut().enumerate() {
        u.covariates.insert("temp_c".into(), [150.0, 195.0, 237.0][i % 3]);
    }
    let data = simulate_rmdt(&spec, &truth, &d, 5).unwrap();
    let a = marginal_log_likelihood(&spec, &truth.to_internal(), &data).unwrap();
    let hi = GpmModelSpec { quadrature_order: 31, ..spec.clone() };
    let b = marginal_log_likelihood(&hi, &truth.to_internal(), &data).unwrap();
    assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");

    let spec = log_rate_spec();
    let truth = GpmParams::from_reported(&spec, &log_rate_truth()).unwrap();
    let data = simulate_rmdt(&spec, &truth, &design(20, &[0.5, 1.0, 1.5]), 8).unwrap();
    let a = marginal_log_likelihood(&spec, &truth.to_internal(), &data).unwrap();
    let hi = GpmModelSpec { quadrature_order: 31, ..spec };
    let b = marginal_log_likelihood(&hi, &truth.to_internal(), &data).unwrap();
    assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn fit_recovers_log_rate_model_and_gradient_is_step_robust() {
    let spec = log_rate_spec();
    let truth_map = log_rate_truth();
    let truth = GpmParams::from_reported(&spec, &truth_map).unwrap();
    let times: Vec<f64> = (1..=10).map(|j| 0.2 * j as f64).collect();
    let data = simulate_rmdt(&spec, &truth, &design(100, &times), 21).unwrap();
    let fit = fit_gpm(&spec, &data, &GpmFitOptions::default()).unwrap();
    assert!(fit.converged);
    for (name, (est, se)) in fit.parameters.iter().zip(fit.estimates.iter().zip(&fit.std_errors)) {
        assert!((est - truth_map[name]).abs() < 3.0 * se, "{name}: {est} ± {se}");
    }
    // two finite-difference steps agree at the optimum
    let nll = |th: &[f64]| -marginal_log_likelihood(&spec, th, &data).unwrap();
    let g5 = optim::gradient(&nll, &fit.internal, 1e-5);
    let g6 = optim::gradient(&nll, &fit.internal, 1e-6);
    let scale = g5.iter().chain(&g6).map(|g| g.abs()).fold(1e-4, f64::max);
    for (a, b) in g5.iter().zip(&g6) {
        assert!((a - b).abs() <= 1e-4 * scale.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn location_equivariance_of_the_linear_family() {
    let spec = GpmModelSpec::new(GpmFamily::Linear, &["slope"]);
    let truth = GpmParams::from_reported(&spec, &map(&[("intercept", 1.0), ("mu_slope", 0.8), ("sd_slope", 0.2), ("sigma_eps", 0.1)])).unwrap();
    let data = simulate_rmdt(&spec, &truth, &design(30, &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
    let shifted = RmdtDataset::new(
        data.units
            .iter()
            .map(|u| UnitSeries::new(u.unit_id.clone(), u.times.clone(), u.measurements.iter().map(|y| y + 7.5).collect()).unwrap())
            .collect(),
    )
    .unwrap();
    let a = fit_gpm(&spec, &data, &GpmFitOptions::default()).unwrap();
    let b = fit_gpm(&spec, &shifted, &GpmFitOptions::default()).unwrap();
    assert!((a.loglik - b.loglik).abs() < 1e-6, "{} vs {}", a.loglik, b.loglik);
    assert!((b.get("intercept").unwrap() - a.get("intercept").unwrap() - 7.5).abs() < 1e-5);
}

#[test]
fn simulated_means_follow_the_expected_path() {
    // E[a + e^b t] = a + exp(μ + σ²/2) t
    let spec = log_rate_spec();
    let truth = GpmParams::from_reported(&spec, &log_rate_truth()).unwrap();
    let times = [0.5, 1.0, 2.0];
    let data = simulate_rmdt(&spec, &truth, &design(100_000, &times), 4).unwrap();
    let slope_mean = (0.5f64 * 0.09).exp();
    let slope_var = ((0.09f64).exp() - 1.0) * (0.09f64).exp();
    for (j, t) in times.iter().enumerate() {
        let ys: Vec<f64> = data.units.iter().map(|u| u.measurements[j]).collect();
        let se = ((slope_var * t * t + 0.0025) / ys.len() as f64).sqrt();
        let m = stats::mean(&ys);
        assert!((m - slope_mean * t).abs() < 3.0 * se, "t={t}: {m}");
    }
}

fn fit_of(spec: &GpmModelSpec, params: &GpmParams) -> degrade_core::fit::FitResult {
    degrade_core::fit::FitResult {
        model: "gpm/linear_log_rate".into(),
        parameters: spec.reported_names(),
        estimates: params.reported(),
        std_errors: vec![f64::NAN; spec.reported_names().len()],
        covariance: vec![],
        loglik: f64::NAN,
        aic: f64::NAN,
        converged: true,
        iterations: 0,
        seed: 0,
        internal: params.to_internal(),
    }
}

#[test]
fn monte_carlo_matches_closed_form_and_is_seed_stable() {
    let spec = log_rate_spec();
    let params = GpmParams::from_reported(&spec, &map(&[("intercept", 0.2), ("mu_log_slope", -0.3), ("sd_log_slope", 0.6), ("sigma_eps", 0.05)])).unwrap();
    let fit = fit_of(&spec, &params);
    let grid: Vec<f64> = (1..=200).map(|i| 0.05 * i as f64).collect();
    let threshold = FailureThreshold::increasing(1.5);
    let exact = failure_cdf_linear(0.2, -0.3, 0.6, 1.5, &grid).unwrap();
    let a = failure_cdf_mc(&fit, &spec, &threshold, &grid, 1_000_000, 1, None).unwrap();
    let b = failure_cdf_mc(&fit, &spec, &threshold, &grid, 1_000_000, 2, None).unwrap();
    assert!(a.sup_distance(&exact) <= 0.005);
    assert!(a.sup_distance(&b) < 0.003);
    let again = failure_cdf_mc(&fit, &spec, &threshold, &grid, 1_000_000, 1, None).unwrap();
    assert_eq!(a, again);
}

#[test]
fn device_b_cdf_at_use_condition() {
    let spec = GpmModelSpec::new(GpmFamily::DeviceB { baseline_temp_c: 195.0 }, &["beta1", "beta2"])
        .with_accelerator("temp_c", ArrheniusSign::Positive);
    let params = GpmParams::from_reported(
        &spec,
        &map(&[("activation", 0.6), ("mu_beta1", -8.0), ("mu_beta2", 0.0), ("sd_beta1", 0.15), ("sd_beta2", 0.1), ("sigma_eps", 0.02)]),
    )
    .unwrap();
    let fit = fit_of(&spec, &params);
    let grid: Vec<f64> = (0..=50).map(|i| 2000.0 * i as f64).collect();
    let threshold = FailureThreshold::decreasing(-0.5);
    let hot = failure_cdf_mc(&fit, &spec, &threshold, &grid, 20_000, 3, Some(237.0)).unwrap();
    let use_80 = failure_cdf_mc(&fit, &spec, &threshold, &grid, 20_000, 3, Some(80.0)).unwrap();
    assert_eq!(hot.cdf[0], 0.0);
    assert!(hot.is_nondecreasing() && use_80.is_nondecreasing());
    // higher temperature fails sooner
    assert!(hot.cdf.iter().zip(&use_80.cdf).all(|(h, u)| h >= u));
    assert!(failure_cdf_mc(&fit, &spec, &threshold, &grid, 20_000, 3, None).is_err());
}

#[test]
fn bootstrap_bands_cover_the_truth() {
    let spec = log_rate_spec();
    let truth_map = log_rate_truth();
    let truth = GpmParams::from_reported(&spec, &truth_map).unwrap();
    let times: Vec<f64> = (1..=10).map(|j| 0.2 * j as f64).collect();
    let data = simulate_rmdt(&spec, &truth, &design(100, &times), 21).unwrap();
    let fit = fit_gpm(&spec, &data, &GpmFitOptions::default()).unwrap();
    let grid: Vec<f64> = (1..=16).map(|i| 0.5 + 0.1 * i as f64).collect();
    let threshold = FailureThreshold::increasing(1.0);
    let opts = BootstrapOptions { replicates: 200, level: 0.90, seed: 17, ..Default::default() };
    let out = bootstrap_ci(&fit, &spec, &data, &threshold, &grid, &opts).unwrap();
    let c = &out.curve;
    let (lo, hi) = (c.lower.as_ref().unwrap(), c.upper.as_ref().unwrap());
    for i in 0..c.len() {
        assert!(lo[i] <= c.cdf[i] && c.cdf[i] <= hi[i]);
    }
    let exact = failure_cdf_linear(0.0, 0.0, 0.3, 1.0, &grid).unwrap();
    let covered = (0..c.len()).filter(|&i| lo[i] <= exact.cdf[i] && exact.cdf[i] <= hi[i]).count();
    assert!(covered as f64 >= 0.8 * c.len() as f64, "covered {covered}/{}", c.len());
    assert!(!out.warning);
    let again = bootstrap_ci(&fit, &spec, &data, &threshold, &grid, &opts).unwrap();
    assert_eq!(out.curve, again.curve);
    assert!(bootstrap_ci(&fit, &spec, &data, &threshold, &grid, &BootstrapOptions { replicates: 50, ..opts }).is_err());
}

#[test]
fn paris_family_fits_noisy_crack_data() {
    let spec = GpmModelSpec::new(GpmFamily::Paris { initial: 9.0, stress: 1.0 }, &["log_theta1"]);
    let truth_map = map(&[("theta2", 2.5), ("mu_log_theta1", -6.0), ("sd_log_theta1", 0.1), ("sigma_eps", 0.1)]);
    let truth = GpmParams::from_reported(&spec, &truth_map).unwrap();
    let times: Vec<f64> = (1..=8).map(|j| 5.0 * j as f64).collect();
    let data = simulate_rmdt(&spec, &truth, &design(30, &times), 13).unwrap();
    let fit = fit_gpm(&spec, &data, &GpmFitOptions { optim: OptimOptions { restarts: 1, ..Default::default() }, start: None }).unwrap();
    for name in ["theta2", "mu_log_theta1"] {
        let (e, s) = (fit.get(name).unwrap(), fit.se(name).unwrap());
        assert!((e - truth_map[name]).abs() < 3.0 * s, "{name}: {e} ± {s}");
    }
}

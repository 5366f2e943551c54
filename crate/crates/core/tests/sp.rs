use degrade_core::gpm::ecdf_on_grid;
use degrade_core::optim::OptimOptions;
use degrade_core::sp::*;
use degrade_core::stats;

fn grid(n: usize, end: f64) -> Vec<f64> {
    (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn gamma_process_simulate_recover() {
    let truth = SpModelSpec::new(SpProcess::Gamma, 1.3, 2.0, 0.4);
    let data = simulate_sp_dataset(&truth, &grid(11, 10.0), 50, 7).unwrap();
    let template = SpModelSpec::new(SpProcess::Gamma, 1.0, 1.0, 1.0);
    let fit = fit_sp(&template, &data, &OptimOptions::default()).unwrap();
    assert!(fit.converged);
    for (name, value) in [("alpha1", 1.3), ("alpha2", 2.0), ("sigma", 0.4)] {
        let (e, s) = (fit.get(name).unwrap(), fit.se(name).unwrap());
        assert!((e - value).abs() < 3.0 * s, "{name}: {e} ± {s}");
    }
}

#[test]
fn wiener_scale_is_the_profile_mle() {
    let truth = SpModelSpec::new(SpProcess::Wiener, 1.0, 1.0, 0.3);
    let g = grid(101, 10.0);
    let data = simulate_sp_dataset(&truth, &g, 20, 3).unwrap();
    let fit = fit_sp(&SpModelSpec::new(SpProcess::Wiener, 0.8, 1.5, 1.0), &data, &OptimOptions::default()).unwrap();
    let fitted = spec_from_fit(SpProcess::Wiener, &fit).unwrap();
    // at the fitted trend, σ̂² = mean of (Δy − Δμ)²/Δμ
    let mut acc = Vec::new();
    for u in &data.units {
        for j in 1..u.len() {
            let dmu = fitted.trend(u.times[j]) - fitted.trend(u.times[j - 1]);
            let dy = u.measurements[j] - u.measurements[j - 1];
            acc.push((dy - dmu).powi(2) / dmu);
        }
    }
    let closed = stats::mean(&acc);
    assert!((fitted.sigma.powi(2) / closed - 1.0).abs() < 1e-5, "{} vs {closed}", fitted.sigma.powi(2));
    assert!((fitted.sigma - 0.3).abs() < 3.0 * fit.se("sigma").unwrap());
}

#[test]
fn path_means_track_the_trend() {
    let g = [0.0, 0.5, 1.0, 2.0];
    for process in [SpProcess::Wiener, SpProcess::Gamma, SpProcess::InverseGaussian] {
        let spec = SpModelSpec::new(process, 1.5, 1.0, 0.6);
        let data = simulate_sp_dataset(&spec, &g, 100_000, 11).unwrap();
        for (j, &t) in g.iter().enumerate().skip(1) {
            let m = spec.trend(t);
            let (mean, var) = match process {
                SpProcess::Wiener => (m, 0.36 * m),
                SpProcess::Gamma => (0.6 * m, 0.36 * m),
                SpProcess::InverseGaussian => (m, m.powi(3) / (0.6 * m * m)),
            };
            let ys: Vec<f64> = data.units.iter().map(|u| u.measurements[j]).collect();
            let se = (var / ys.len() as f64).sqrt();
            assert!((stats::mean(&ys) - mean).abs() < 3.0 * se, "{process:?} t={t}");
        }
    }
}

#[test]
fn wiener_unit_trend_is_the_classical_first_passage() {
    // α₁ = α₂ = 1: Brownian motion with unit drift, IG(D₀, D₀²/σ²) first passage
    let spec = SpModelSpec::new(SpProcess::Wiener, 1.0, 1.0, 0.8);
    let g = grid(1001, 6.0);
    let mut hits = simulate_first_passage(&spec, 2.0, &g, 20_000, 5).unwrap();
    hits.sort_by(f64::total_cmp);
    let emp = ecdf_on_grid(&hits, &g);
    let exact: Vec<f64> = g.iter().map(|&t| if t == 0.0 { 0.0 } else { stats::inverse_gaussian_cdf(t, 2.0, 4.0 / 0.64) }).collect();
    let sup = emp.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(sup < 0.02, "{sup}");
    let closed = sp_failure_cdf(&spec, 2.0, &g).unwrap();
    assert!(closed.cdf.iter().zip(&exact).all(|(a, b)| (a - b).abs() < 1e-12));
}

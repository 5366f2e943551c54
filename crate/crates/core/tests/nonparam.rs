use degrade_core::nonparam::*;
use rand_distr::{Distribution, Exp};

/// Fraction of replications whose band contains the true exponential CDF
/// everywhere on [t_l, t_u].
fn coverage(reps: usize, n: usize, censor_rate: f64, seed: u64, transform: BandTransform) -> f64 {
    let (t_l, t_u) = ((1.0f64 / 0.9).ln(), 5.0f64.ln());
    let life = Exp::new(1.0).unwrap();
    let cens = Exp::new(censor_rate).unwrap();
    let mut covered = 0;
    for r in 0..reps {
        let mut g = degrade_core::rng::stream(seed, "nair-coverage", r as u64);
        let events: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let t: f64 = life.sample(&mut g);
                let c: f64 = if censor_rate > 0.0 { cens.sample(&mut g) } else { f64::INFINITY };
                (t.min(c), t <= c)
            })
            .collect();
        let table = EventTable::from_pairs(&events).unwrap();
        let band = nair_scb_with(&table, 0.95, Some([t_l, t_u]), transform).unwrap();
        let (lo, hi) = (band.lower.unwrap(), band.upper.unwrap());
        let truth = |t: f64| 1.0 - (-t).exp();
        let ok = (0..band.times.len()).all(|k| {
            let start = band.times[k];
            let end = if k + 1 < band.times.len() { band.times[k + 1] } else { t_u };
            // the true CDF rises across the step: check both ends
            truth(start) >= lo[k] - 1e-12 && truth(end) <= hi[k] + 1e-12
        });
        covered += usize::from(ok);
    }
    covered as f64 / reps as f64
}

#[test]
fn equal_precision_band_coverage() {
    let uncensored = coverage(1000, 100, 0.0, 1, BandTransform::default());
    let censored = coverage(1000, 100, 0.25, 2, BandTransform::default());
    let linear = coverage(1000, 100, 0.0, 1, BandTransform::Linear);
    // the untransformed band under-covers at n = 100; reported, not asserted
    eprintln!("coverage: uncensored {uncensored:.3}, censored {censored:.3}, untransformed {linear:.3}");
    assert!(uncensored >= 0.92);
    assert!(censored >= 0.92);
}

#[test]
fn km_hand_fixture() {
    let table = EventTable::from_pairs(&[(1.0, true), (2.0, true), (3.0, false), (4.0, true)]).unwrap();
    let km = kaplan_meier(&table);
    assert_eq!(km.times, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(km.cdf, vec![0.25, 0.5, 0.5, 1.0]);
}

//! Convergence diagnostics: split-R̂ and effective sample size.
//!
//! `rhat` is the larger of the rank-normalized split-R̂ (itself the maximum
//! of the bulk and folded versions) and the classic split-R̂ on the raw
//! draws. Rank normalization bounds R̂ for completely separated chains
//! (about 1.8 for two groups), so the classic statistic is kept to flag
//! gross disagreement with its full magnitude.

use super::PosteriorSamples;
use crate::stats;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostics {
    pub param: String,
    pub rhat: f64,
    pub rhat_rank: f64,
    pub rhat_classic: f64,
    pub ess: f64,
}

/// Per-parameter diagnostics. Needs at least two chains of four draws.
pub fn diagnostics(samples: &PosteriorSamples) -> Vec<ParamDiagnostics> {
    (0..samples.n_params())
        .map(|p| {
            let chains: Vec<Vec<f64>> = (0..samples.n_chains).map(|c| samples.chain_column(p, c)).collect();
            let (rhat_rank, rhat_classic) = (rank_rhat(&chains), split_rhat(&split(&chains)));
            ParamDiagnostics {
                param: samples.names[p].clone(),
                rhat: rhat_rank.max(rhat_classic),
                rhat_rank,
                rhat_classic,
                ess: ess(&chains),
            }
        })
        .collect()
}

/// Splits every chain into two halves (dropping a middle draw if odd).
pub fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            vec![c[..h].to_vec(), c[c.len() - h..].to_vec()]
        })
        .collect()
}

/// Gelman–Rubin potential scale reduction of already-split chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let w = chains.iter().map(|c| stats::variance(c)).sum::<f64>() / m;
    let b = n * stats::variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Normal scores of pooled ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut flat: Vec<(f64, usize, usize)> =
        chains.iter().enumerate().flat_map(|(c, v)| v.iter().enumerate().map(move |(i, x)| (*x, c, i))).collect();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = flat.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut k = 0;
    while k < flat.len() {
        let mut e = k;
        while e + 1 < flat.len() && flat[e + 1].0 == flat[k].0 {
            e += 1;
        }
        let rank = (k + e) as f64 / 2.0 + 1.0;
        let z = stats::norm_ppf((rank - 0.375) / (s + 0.25));
        for item in &flat[k..=e] {
            out[item.1][item.2] = z;
        }
        k = e + 1;
    }
    out
}

/// Rank-normalized split-R̂: the maximum of the bulk and folded versions.
pub fn rank_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    let bulk = split_rhat(&rank_normalize(&halves));
    let all: Vec<f64> = halves.iter().flatten().copied().collect();
    let med = stats::quantile(&all, 0.5);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    bulk.max(split_rhat(&rank_normalize(&folded)))
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = stats::mean(x);
    (0..n)
        .map(|lag| (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64)
        .collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 { stats::variance(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| 1.0 - (w - acov.iter().map(|a| a[t]).sum::<f64>() / m) / var_plus;
    // sum autocorrelation pairs while positive, enforcing monotonicity
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / (m * nf).log10().max(1.0));
    m * nf / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_chains(seed: u64, shift: &[f64]) -> Vec<Vec<f64>> {
        shift
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let mut g = rng::stream(seed, "diag-test", c as u64);
                (0..1000).map(|_| s + { let z: f64 = StandardNormal.sample(&mut g); z }).collect()
            })
            .collect()
    }

    fn samples_of(chains: Vec<Vec<f64>>) -> PosteriorSamples {
        let n = chains[0].len();
        PosteriorSamples {
            names: vec!["x".into()],
            n_chains: chains.len(),
            n_iter: n,
            draws: chains.concat(),
            seed: 0,
            acceptance: vec![],
            diagnostics_failed: false,
        }
    }

    #[test]
    fn iid_chains_look_converged() {
        for seed in 0..5 {
            let d = &diagnostics(&samples_of(iid_chains(seed, &[0.0; 4])))[0];
            assert!(d.rhat >= 0.99 && d.rhat <= 1.05, "{d:?}");
            assert!(d.ess >= 0.8 * 4000.0, "{d:?}");
        }
    }

    #[test]
    fn separated_chains_are_flagged() {
        let d = &diagnostics(&samples_of(iid_chains(1, &[0.0, 0.0, 10.0, 10.0])))[0];
        assert!(d.rhat > 2.0, "{d:?}");
        assert!(d.rhat_rank > 1.5, "{d:?}");
    }

    #[test]
    fn autocorrelated_chain_has_small_ess() {
        // AR(1) with φ = 0.9: ESS ≈ N(1−φ)/(1+φ)
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let mut g = rng::stream(3, "ar1", c);
                let mut x = 0.0;
                (0..5000)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut g);
                        x = 0.9 * x + z;
                        x
                    })
                    .collect()
            })
            .collect();
        let e = ess(&chains);
        let expect = 20_000.0 * 0.1 / 1.9;
        assert!((e / expect - 1.0).abs() < 0.25, "{e} vs {expect}");
    }
}

//! Kaplan–Meier estimates and equal-precision simultaneous bands from
//! soft-failure times extracted from repeated-measures paths.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curve::{format_f64, CdfCurve};
use crate::data::{FailureThreshold, RmdtDataset};
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftFailure {
    pub unit_id: String,
    pub time: f64,
    pub failed: bool,
}

/// First threshold crossing of each observed path, linearly interpolated
/// between the bracketing observations. A path already past the threshold at
/// its first reading fails then; a path that never crosses is censored at its
/// last reading.
pub fn extract_soft_failures(data: &RmdtDataset, threshold: &FailureThreshold) -> Vec<SoftFailure> {
    data.units
        .iter()
        .filter(|u| !u.is_empty())
        .map(|u| {
            let (t, y) = (&u.times, &u.measurements);
            let hit = y.iter().position(|&v| threshold.reached(v));
            let (time, failed) = match hit {
                Some(0) => (t[0], true),
                Some(j) => {
                    let frac = (threshold.value - y[j - 1]) / (y[j] - y[j - 1]);
                    (t[j - 1] + frac * (t[j] - t[j - 1]), true)
                }
                None => (t[t.len() - 1], false),
            };
            SoftFailure { unit_id: u.unit_id.clone(), time, failed }
        })
        .collect()
}

/// Risk-set summary at each distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTable {
    pub times: Vec<f64>,
    pub failures: Vec<usize>,
    pub at_risk: Vec<usize>,
    /// Censorings at each time; a unit censored at a failure time is still at
    /// risk for that failure.
    pub censored: Vec<usize>,
}

impl EventTable {
    pub fn new(events: &[SoftFailure]) -> Result<Self> {
        let pairs: Vec<(f64, bool)> = events.iter().map(|e| (e.time, e.failed)).collect();
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(events: &[(f64, bool)]) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Validation("no events".into()));
        }
        if events.iter().any(|(t, _)| !t.is_finite()) {
            return Err(Error::Validation("non-finite event time".into()));
        }
        let mut sorted = events.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut table = EventTable { times: vec![], failures: vec![], at_risk: vec![], censored: vec![] };
        let mut remaining = sorted.len();
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i].0;
            let (mut d, mut c) = (0, 0);
            while i < sorted.len() && sorted[i].0 == t {
                if sorted[i].1 {
                    d += 1;
                } else {
                    c += 1;
                }
                i += 1;
            }
            table.times.push(t);
            table.failures.push(d);
            table.censored.push(c);
            table.at_risk.push(remaining);
            remaining -= d + c;
        }
        Ok(table)
    }

    pub fn n(&self) -> usize {
        self.at_risk.first().copied().unwrap_or(0)
    }

    /// Product-limit survival after each time.
    pub fn survival(&self) -> Vec<f64> {
        let mut s = 1.0;
        self.failures
            .iter()
            .zip(&self.at_risk)
            .map(|(&d, &y)| {
                s *= 1.0 - d as f64 / y as f64;
                s
            })
            .collect()
    }

    /// Greenwood sums `Σ d/(Y(Y−d))`, so that `Var Ŝ ≈ Ŝ²·σ²`. Infinite once
    /// the risk set is exhausted.
    pub fn greenwood(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.failures
            .iter()
            .zip(&self.at_risk)
            .map(|(&d, &y)| {
                acc += if d == 0 { 0.0 } else if d == y { f64::INFINITY } else { d as f64 / (y as f64 * (y - d) as f64) };
                acc
            })
            .collect()
    }
}

/// Kaplan–Meier failure-time CDF `1 − Ŝ` at the distinct observed times.
pub fn kaplan_meier(events: &EventTable) -> CdfCurve {
    CdfCurve::new(events.times.clone(), events.survival().iter().map(|s| 1.0 - s).collect())
}

/// Two-sided boundary-crossing probability of the standardized Brownian
/// bridge `|W⁰(x)|/√(x(1−x))` over `[a_l, a_u]` above `c` (Miller–Siegmund
/// approximation).
fn ep_exceedance(c: f64, a_l: f64, a_u: f64) -> f64 {
    let span = (a_u * (1.0 - a_l) / (a_l * (1.0 - a_u))).ln();
    let phi = stats::norm_pdf(c);
    4.0 * phi / c + phi * (c - 1.0 / c) * span
}

/// Equal-precision critical value for the variance-ratio range `[a_l, a_u]`.
pub fn ep_critical_value(level: f64, a_l: f64, a_u: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    if !(a_l > 0.0 && a_u < 1.0 && a_l < a_u) {
        return Err(Error::Domain(format!("variance-ratio range {a_l}..{a_u} must satisfy 0 < a_L < a_U < 1")));
    }
    let alpha = 1.0 - level;
    // the approximation decreases in c beyond the pointwise two-sided value
    let lo = stats::norm_ppf(1.0 - alpha / 2.0);
    crate::optim::bisect_root(|c| ep_exceedance(c, a_l, a_u) - alpha, lo, 20.0, 1e-12)
        .ok_or_else(|| Error::Numerical("no equal-precision critical value in range".into()))
}

/// Scale on which the equal-precision band is symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTransform {
    /// `Ŝ ± c·SE(Ŝ)`.
    Linear,
    /// Symmetric in `ln(−ln Ŝ)`.
    LogLog,
    /// Symmetric in `arcsin √Ŝ`; the best calibrated of the three at
    /// moderate sample sizes.
    #[default]
    Arcsine,
}

impl BandTransform {
    /// Survival band `(lower, upper)` at `s` with Greenwood sum `gw`.
    fn survival_band(self, s: f64, gw: f64, c: f64) -> (f64, f64) {
        let sd = gw.sqrt();
        match self {
            BandTransform::Linear => (s - c * sd * s, s + c * sd * s),
            BandTransform::LogLog => {
                if s <= 0.0 || s >= 1.0 {
                    return (s, s);
                }
                let theta = (c * sd / s.ln()).exp();
                (s.powf(1.0 / theta), s.powf(theta))
            }
            BandTransform::Arcsine => {
                let a = s.sqrt().asin();
                let h = 0.5 * c * sd * (s / (1.0 - s)).sqrt();
                let lo = (a - h).max(0.0).sin();
                let hi = (a + h).min(std::f64::consts::FRAC_PI_2).sin();
                (lo * lo, hi * hi)
            }
        }
    }
}

/// Simultaneous band for the failure-time CDF over `range` (default: first
/// to last failure with finite Greenwood variance) with the equal-precision
/// critical value `c` on the default [`BandTransform`], clipped to [0, 1]
/// and reported on the `1 − Ŝ` scale.
pub fn nair_scb(events: &EventTable, level: f64, range: Option<[f64; 2]>) -> Result<CdfCurve> {
    nair_scb_with(events, level, range, BandTransform::default())
}

pub fn nair_scb_with(events: &EventTable, level: f64, range: Option<[f64; 2]>, transform: BandTransform) -> Result<CdfCurve> {
    let s = events.survival();
    let gw = events.greenwood();
    let usable: Vec<usize> = (0..s.len()).filter(|&i| gw[i].is_finite() && gw[i] > 0.0).collect();
    let [t_l, t_u] = match range {
        Some(r) => r,
        None => match (usable.first(), usable.last()) {
            (Some(&a), Some(&b)) => [events.times[a], events.times[b]],
            _ => return Err(Error::Numerical("degenerate variance: no failures with finite Greenwood variance".into())),
        },
    };
    if !(t_u >= t_l) {
        return Err(Error::Domain(format!("band range {t_l}..{t_u} is empty")));
    }
    // KM step value in force at t
    let at = |t: f64| events.times.iter().rposition(|&x| x <= t);
    let mut idx: Vec<usize> = Vec::new();
    if let Some(i) = at(t_l) {
        idx.push(i);
    }
    idx.extend((0..s.len()).filter(|&i| events.times[i] > t_l && events.times[i] <= t_u));
    let idx: Vec<usize> = idx.into_iter().filter(|&i| gw[i].is_finite() && gw[i] > 0.0).collect();
    if idx.is_empty() {
        return Err(Error::Numerical("degenerate variance: no failures in band range".into()));
    }
    let n = events.n() as f64;
    let ratio = |i: usize| n * gw[i] / (1.0 + n * gw[i]);
    let a_l = ratio(idx[0]);
    let a_u = ratio(idx[idx.len() - 1]);
    // a single variance level still needs a nonempty range
    let (a_l, a_u) = if a_u > a_l { (a_l, a_u) } else { (a_l * (1.0 - 1e-9), a_u) };
    let c = ep_critical_value(level, a_l, a_u)?;
    let mut times = Vec::with_capacity(idx.len());
    let (mut cdf, mut lower, mut upper) = (vec![], vec![], vec![]);
    for (k, &i) in idx.iter().enumerate() {
        let (s_lo, s_hi) = transform.survival_band(s[i], gw[i], c);
        times.push(if k == 0 { t_l.max(events.times[i]) } else { events.times[i] });
        cdf.push(1.0 - s[i]);
        lower.push((1.0 - s_hi).clamp(0.0, 1.0));
        upper.push((1.0 - s_lo).clamp(0.0, 1.0));
    }
    Ok(CdfCurve::new(times, cdf).with_bounds(lower, upper, level))
}

/// Band CSV with header `time,km,lower,upper`; `km` is `1 − Ŝ`.
pub fn write_band_csv_to<W: std::io::Write>(band: &CdfCurve, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["time", "km", "lower", "upper"])?;
    for i in 0..band.len() {
        let b = |v: &Option<Vec<f64>>| v.as_ref().map(|v| format_f64(v[i])).unwrap_or_default();
        w.write_record([format_f64(band.times[i]), format_f64(band.cdf[i]), b(&band.lower), b(&band.upper)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_band_csv(band: &CdfCurve, path: impl AsRef<Path>) -> Result<()> {
    write_band_csv_to(band, std::fs::File::create(path)?)
}

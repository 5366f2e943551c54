use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AddtFit, AddtMethod};
use crate::data::{arrhenius_transform, ArrheniusSign};
use crate::{Error, Result};

/// Offset of the reciprocal-temperature scale on which the thermal index is
/// solved. It differs from the 273.15 used by the Arrhenius covariate; both
/// are kept as conventionally printed.
pub const TI_KELVIN_OFFSET: f64 = 273.16;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiOptions {
    pub td_hours: f64,
    /// Admissible temperature interval (°C) searched for the index.
    pub temp_range_c: [f64; 2],
    pub sign: ArrheniusSign,
    /// Temperatures for the time–temperature curve; defaults to 1 °C steps
    /// from 10 °C below the index to the top of `temp_range_c` or 100 °C,
    /// whichever is lower.
    pub curve_temps_c: Option<Vec<f64>>,
}

impl Default for TiOptions {
    fn default() -> Self {
        Self { td_hours: 100_000.0, temp_range_c: [-50.0, 400.0], sign: ArrheniusSign::Negative, curve_temps_c: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtfPoint {
    pub temp_c: f64,
    pub mtf_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalIndexResult {
    pub ti_c: f64,
    pub td_hours: f64,
    pub xd: f64,
    pub method: AddtMethod,
    pub d0: f64,
    #[serde(skip)]
    pub mtf_curve: Vec<MtfPoint>,
}

impl ThermalIndexResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn write_curve_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["temp_c", "mtf_hours"])?;
        for p in &self.mtf_curve {
            w.write_record([p.temp_c.to_string(), p.mtf_hours.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_curve_csv_to(std::fs::File::create(path)?)
    }
}

/// Solves `m(x_d) = t_d` for `x_d` on `[x_lo, x_hi]` by bisection on
/// `ln m`, where `m` is monotone in `x`. Returns `(TI, x_d)` with
/// `TI = 1/x_d − 273.16`.
pub fn solve_thermal_index<M: Fn(f64) -> Option<f64>>(m: M, td_hours: f64, x_range: [f64; 2]) -> Result<(f64, f64)> {
    if !(td_hours > 0.0) {
        return Err(Error::Domain(format!("target life must be positive, got {td_hours}")));
    }
    let [mut lo, mut hi] = x_range;
    let never = || Error::Domain("fitted mean path does not reach the threshold within the range the fit supports".into());
    let (m_lo, m_hi) = (m(lo).ok_or_else(never)?, m(hi).ok_or_else(never)?);
    let (low, high) = (m_lo.min(m_hi), m_lo.max(m_hi));
    if !(td_hours >= low && td_hours <= high) {
        return Err(Error::Extrapolation { message: format!("target life {td_hours} h not attainable in the admissible temperature range"), low, high });
    }
    let target = td_hours.ln();
    let rising = m_hi > m_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = m(mid).ok_or_else(never)?.ln();
        if (v < target) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * mid.abs() {
            break;
        }
    }
    let xd = 0.5 * (lo + hi);
    Ok((1.0 / xd - TI_KELVIN_OFFSET, xd))
}

/// Mean time for the fitted mean path to reach `d0`, as a function of
/// temperature in °C.
fn mtf(fit: &AddtFit, d0: f64, temp_c: f64, sign: ArrheniusSign) -> Option<f64> {
    let x = arrhenius_transform(temp_c, sign).ok()?;
    fit.model.mean_time_to(d0, x)
}

/// The temperature at which the mean time to reach `d0` equals
/// `options.td_hours`.
pub fn thermal_index(fit: &AddtFit, d0: f64, options: &TiOptions) -> Result<ThermalIndexResult> {
    let [t_lo, t_hi] = options.temp_range_c;
    if !(t_hi > t_lo && t_lo > -TI_KELVIN_OFFSET) {
        return Err(Error::Domain(format!("invalid temperature range {t_lo}..{t_hi} °C")));
    }
    let to_temp = |u: f64| 1.0 / u - TI_KELVIN_OFFSET;
    let u_range = [1.0 / (t_hi + TI_KELVIN_OFFSET), 1.0 / (t_lo + TI_KELVIN_OFFSET)];
    let (ti_c, xd) = solve_thermal_index(|u| mtf(fit, d0, to_temp(u), options.sign), options.td_hours, u_range)?;
    let temps = options.curve_temps_c.clone().unwrap_or_else(|| {
        let start = (ti_c - 10.0).floor().max(t_lo);
        let stop = t_hi.min(100.0).max(start);
        (0..=(stop - start) as usize).map(|i| start + i as f64).collect()
    });
    let mtf_curve = temps
        .into_iter()
        .filter_map(|temp_c| mtf(fit, d0, temp_c, options.sign).map(|mtf_hours| MtfPoint { temp_c, mtf_hours }))
        .collect();
    Ok(ThermalIndexResult { ti_c, td_hours: options.td_hours, xd, method: fit.model.method(), d0, mtf_curve })
}

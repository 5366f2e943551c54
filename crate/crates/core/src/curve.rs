//! Failure-time CDF curves on a time grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub times: Vec<f64>,
    pub cdf: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Confidence or credible level of the bounds.
    pub level: Option<f64>,
}

impl CdfCurve {
    pub fn new(times: Vec<f64>, cdf: Vec<f64>) -> Self {
        Self { times, cdf, lower: None, upper: None, level: None }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>, level: f64) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self.level = Some(level);
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.cdf.windows(2).all(|w| w[1] >= w[0])
    }

    /// Largest absolute difference between two curves on the same grid.
    pub fn sup_distance(&self, other: &CdfCurve) -> f64 {
        self.cdf.iter().zip(&other.cdf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `time,cdf,lower,upper`; absent bounds are left empty.
    pub fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["time", "cdf", "lower", "upper"])?;
        for i in 0..self.len() {
            let bound = |b: &Option<Vec<f64>>| b.as_ref().map(|v| format_f64(v[i])).unwrap_or_default();
            w.write_record([format_f64(self.times[i]), format_f64(self.cdf[i]), bound(&self.lower), bound(&self.upper)])?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let (mut times, mut cdf, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut bounded = true;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<Option<f64>> {
                let s = rec.get(i).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|_| Error::Schema(format!("bad number {s:?} in curve CSV")))
            };
            times.push(field(0)?.ok_or_else(|| Error::Schema("missing time".into()))?);
            cdf.push(field(1)?.ok_or_else(|| Error::Schema("missing cdf".into()))?);
            match (field(2)?, field(3)?) {
                (Some(l), Some(u)) => {
                    lower.push(l);
                    upper.push(u);
                }
                _ => bounded = false,
            }
        }
        let mut curve = CdfCurve::new(times, cdf);
        if bounded && !curve.is_empty() {
            curve.lower = Some(lower);
            curve.upper = Some(upper);
        }
        Ok(curve)
    }
}

/// Shortest representation that round-trips, so CSV output is byte-stable.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

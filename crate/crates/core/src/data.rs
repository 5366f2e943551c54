//! Degradation dataset containers and CSV ingestion.
//!
//! Three layouts are supported:
//!
//! - repeated-measures (RMDT): `unit_id,time,response[,<covariate>...]`, one
//!   row per measurement, any number of rows per unit;
//! - destructive (ADDT): `condition_c,time,response[,batch]`, one row per
//!   tested unit;
//! - long-format covariate histories: `unit_id,time,name,value`.
//!
//! All readers reject `NaN`/`inf` tokens. Datasets are immutable after load.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Boltzmann constant reciprocal in kelvin per electron-volt, as used by the
/// Arrhenius transform.
pub const ARRHENIUS_CONSTANT: f64 = 11605.0;
pub const KELVIN_OFFSET: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Increasing => Direction::Decreasing,
            Direction::Decreasing => Direction::Increasing,
        }
    }
}

/// Soft-failure definition: the unit fails once its degradation reaches
/// `value` in the given direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureThreshold {
    pub value: f64,
    pub direction: Direction,
}

impl FailureThreshold {
    pub fn increasing(value: f64) -> Self {
        Self { value, direction: Direction::Increasing }
    }

    pub fn decreasing(value: f64) -> Self {
        Self { value, direction: Direction::Decreasing }
    }

    /// Whether a degradation level counts as failed.
    pub fn reached(&self, level: f64) -> bool {
        match self.direction {
            Direction::Increasing => level >= self.value,
            Direction::Decreasing => level <= self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSeries {
    pub unit_id: String,
    pub times: Vec<f64>,
    pub measurements: Vec<f64>,
    pub static_covariates: BTreeMap<String, f64>,
    /// Field start offset in days, for units entering service at different dates.
    pub start_time: Option<f64>,
}

impl UnitSeries {
    pub fn new(unit_id: impl Into<String>, times: Vec<f64>, measurements: Vec<f64>) -> Result<Self> {
        let unit = Self {
            unit_id: unit_id.into(),
            times,
            measurements,
            static_covariates: BTreeMap::new(),
            start_time: None,
        };
        unit.validate()?;
        Ok(unit)
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: f64) -> Self {
        self.static_covariates.insert(name.into(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::Validation(format!("unit {} has no measurements", self.unit_id)));
        }
        if self.times.len() != self.measurements.len() {
            return Err(Error::Validation(format!(
                "unit {}: {} times but {} measurements",
                self.unit_id,
                self.times.len(),
                self.measurements.len()
            )));
        }
        if self.times.iter().chain(&self.measurements).any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("unit {} has non-finite values", self.unit_id)));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "unit {}: measurement times must be strictly increasing",
                self.unit_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn covariate(&self, name: &str) -> Result<f64> {
        self.static_covariates
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unit {} lacks covariate '{name}'", self.unit_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmdtDataset {
    pub units: Vec<UnitSeries>,
    pub time_unit: String,
    pub response_unit: String,
}

impl RmdtDataset {
    pub fn new(units: Vec<UnitSeries>) -> Result<Self> {
        let d = Self { units, time_unit: "time".into(), response_unit: "response".into() };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::Validation("dataset has no units".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &self.units {
            u.validate()?;
            if !seen.insert(u.unit_id.as_str()) {
                return Err(Error::Validation(format!("duplicate unit id {}", u.unit_id)));
            }
        }
        Ok(())
    }

    pub fn n_observations(&self) -> usize {
        self.units.iter().map(UnitSeries::len).sum()
    }

    pub fn unit(&self, id: &str) -> Option<&UnitSeries> {
        self.units.iter().find(|u| u.unit_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddtRecord {
    /// Transformed stress, e.g. `−11605/(temp + 273.15)`.
    pub condition: f64,
    /// Stress as recorded, e.g. temperature in °C.
    pub raw_condition: f64,
    pub time: f64,
    pub batch_id: String,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddtDataset {
    pub records: Vec<AddtRecord>,
}

impl AddtDataset {
    pub fn new(records: Vec<AddtRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("ADDT dataset has no records".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if !(r.time >= 0.0) {
                return Err(Error::Validation(format!("record {i}: negative time {}", r.time)));
            }
            if ![r.condition, r.raw_condition, r.time, r.response].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("record {i}: non-finite value")));
            }
        }
        Ok(Self { records })
    }

    /// Measurements taken before any exposure (time zero).
    pub fn baseline_records(&self) -> Vec<&AddtRecord> {
        self.records.iter().filter(|r| r.time == 0.0).collect()
    }

    /// Records grouped by (condition, time, batch), in first-appearance order.
    /// Each group shares one equicorrelated error block.
    pub fn batches(&self) -> Vec<Vec<&AddtRecord>> {
        let mut index: HashMap<(u64, u64, &str), usize> = HashMap::new();
        let mut groups: Vec<Vec<&AddtRecord>> = Vec::new();
        for r in &self.records {
            let key = (r.condition.to_bits(), r.time.to_bits(), r.batch_id.as_str());
            let slot = *index.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(r);
        }
        groups
    }

    /// Distinct transformed stress levels, ascending.
    pub fn conditions(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.records.iter().map(|r| r.condition).collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateHistory {
    pub unit_id: String,
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CovariateHistory {
    pub fn new(unit_id: impl Into<String>, name: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let h = Self { unit_id: unit_id.into(), name: name.into(), times, values };
        if h.times.is_empty() || h.times.len() != h.values.len() {
            return Err(Error::Validation(format!(
                "history {}/{}: times and values must be nonempty and equal length",
                h.unit_id, h.name
            )));
        }
        if h.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "history {}/{}: times must be strictly increasing",
                h.unit_id, h.name
            )));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrheniusSign {
    Positive,
    Negative,
}

/// `sign · 11605 / (temp_c + 273.15)`.
pub fn arrhenius_transform(temp_c: f64, sign: ArrheniusSign) -> Result<f64> {
    if !(temp_c > -KELVIN_OFFSET) || !temp_c.is_finite() {
        return Err(Error::Domain(format!("temperature {temp_c} °C is at or below absolute zero")));
    }
    let x = ARRHENIUS_CONSTANT / (temp_c + KELVIN_OFFSET);
    Ok(match sign {
        ArrheniusSign::Positive => x,
        ArrheniusSign::Negative => -x,
    })
}

/// Inverse of [`arrhenius_transform`].
pub fn arrhenius_to_celsius(x: f64, sign: ArrheniusSign) -> f64 {
    let x = match sign {
        ArrheniusSign::Positive => x,
        ArrheniusSign::Negative => -x,
    };
    ARRHENIUS_CONSTANT / x - KELVIN_OFFSET
}

/// Datasets whose responses can be negated to flip the degradation direction.
pub trait Responses {
    fn negate_responses(&mut self);
}

impl Responses for RmdtDataset {
    fn negate_responses(&mut self) {
        for u in &mut self.units {
            for y in &mut u.measurements {
                *y = -*y;
            }
        }
    }
}

impl Responses for AddtDataset {
    fn negate_responses(&mut self) {
        for r in &mut self.records {
            r.response = -r.response;
        }
    }
}

/// Maps a decreasing-degradation analysis onto the increasing convention by
/// negating every response and the threshold. Increasing input passes through.
pub fn canonicalize_direction<D: Responses>(mut data: D, threshold: FailureThreshold) -> (D, FailureThreshold) {
    match threshold.direction {
        Direction::Increasing => (data, threshold),
        Direction::Decreasing => {
            data.negate_responses();
            (data, FailureThreshold { value: -threshold.value, direction: Direction::Increasing })
        }
    }
}

/// Column names for the repeated-measures CSV layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmdtSchema {
    pub unit_id: String,
    pub time: String,
    pub response: String,
    pub start_time: Option<String>,
    pub time_unit: String,
    pub response_unit: String,
}

impl Default for RmdtSchema {
    fn default() -> Self {
        Self {
            unit_id: "unit_id".into(),
            time: "time".into(),
            response: "response".into(),
            start_time: None,
            time_unit: "time".into(),
            response_unit: "response".into(),
        }
    }
}

/// Column names and stress transform for the destructive-test CSV layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddtSchema {
    pub condition: String,
    pub time: String,
    pub response: String,
    pub batch: String,
    pub sign: ArrheniusSign,
}

impl Default for AddtSchema {
    fn default() -> Self {
        Self {
            condition: "condition_c".into(),
            time: "time".into(),
            response: "response".into(),
            batch: "batch".into(),
            sign: ArrheniusSign::Negative,
        }
    }
}

fn parse_finite(token: &str, what: &str, row: usize) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("row {row}: cannot parse {what} '{token}'")))?;
    if !v.is_finite() {
        return Err(Error::Validation(format!("row {row}: non-finite {what} '{token}'")));
    }
    Ok(v)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
}

/// Reads a repeated-measures CSV. Rows are grouped by unit (in order of first
/// appearance) and sorted by time; every column not named in the schema is a
/// static covariate and must be constant within a unit.
pub fn load_rmdt(path: impl AsRef<Path>, schema: &RmdtSchema) -> Result<RmdtDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let uid = column(&headers, &schema.unit_id)?;
    let tcol = column(&headers, &schema.time)?;
    let ycol = column(&headers, &schema.response)?;
    let scol = schema.start_time.as_deref().map(|s| column(&headers, s)).transpose()?;
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != uid && *i != tcol && *i != ycol && Some(*i) != scol)
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let mut covs: HashMap<String, BTreeMap<String, f64>> = HashMap::new();
    let mut starts: HashMap<String, f64> = HashMap::new();
    let mut dropped = 0usize;

    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let id = rec.get(uid).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Validation(format!("row {row}: empty unit id")));
        }
        let response = rec.get(ycol).unwrap_or("");
        if response.is_empty() {
            dropped += 1;
            continue;
        }
        let t = parse_finite(rec.get(tcol).unwrap_or(""), "time", row)?;
        let y = parse_finite(response, "response", row)?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id.clone()).or_default().push((t, y));

        let unit_covs = covs.entry(id.clone()).or_default();
        for (c, name) in &cov_cols {
            let v = parse_finite(rec.get(*c).unwrap_or(""), name, row)?;
            match unit_covs.get(name) {
                Some(prev) if *prev != v => {
                    return Err(Error::Validation(format!(
                        "unit {id}: covariate '{name}' varies across rows ({prev} vs {v})"
                    )))
                }
                _ => {
                    unit_covs.insert(name.clone(), v);
                }
            }
        }
        if let Some(s) = scol {
            starts.insert(id.clone(), parse_finite(rec.get(s).unwrap_or(""), "start_time", row)?);
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with empty response");
    }

    let mut units = Vec::with_capacity(order.len());
    for id in order {
        let mut obs = rows.remove(&id).unwrap_or_default();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if obs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!("unit {id}: duplicate measurement times")));
        }
        let (times, measurements) = obs.into_iter().unzip();
        units.push(UnitSeries {
            static_covariates: covs.remove(&id).unwrap_or_default(),
            start_time: starts.get(&id).copied(),
            unit_id: id,
            times,
            measurements,
        });
    }
    let d = RmdtDataset {
        units,
        time_unit: schema.time_unit.clone(),
        response_unit: schema.response_unit.clone(),
    };
    d.validate()?;
    Ok(d)
}

/// Writes the repeated-measures CSV layout read by [`load_rmdt`].
pub fn write_rmdt(data: &RmdtDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_rmdt_to(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_rmdt_to<W: std::io::Write>(data: &RmdtDataset, w: &mut csv::Writer<W>) -> Result<()> {
    let cov_names: Vec<String> = data
        .units
        .first()
        .map(|u| u.static_covariates.keys().cloned().collect())
        .unwrap_or_default();
    let has_start = data.units.iter().any(|u| u.start_time.is_some());
    let mut header = vec!["unit_id".to_string(), "time".into(), "response".into()];
    if has_start {
        header.push("start_time".into());
    }
    header.extend(cov_names.iter().cloned());
    w.write_record(&header)?;
    for u in &data.units {
        for (t, y) in u.times.iter().zip(&u.measurements) {
            let mut row = vec![u.unit_id.clone(), t.to_string(), y.to_string()];
            if has_start {
                row.push(u.start_time.map(|s| s.to_string()).unwrap_or_default());
            }
            for name in &cov_names {
                row.push(u.covariate(name)?.to_string());
            }
            w.write_record(&row)?;
        }
    }
    Ok(())
}

/// Reads a destructive-test CSV. Without a batch column every record forms
/// its own singleton batch.
pub fn load_addt(path: impl AsRef<Path>, schema: &AddtSchema) -> Result<AddtDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let ccol = column(&headers, &schema.condition)?;
    let tcol = column(&headers, &schema.time)?;
    let ycol = column(&headers, &schema.response)?;
    let bcol = column(&headers, &schema.batch).ok();
    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let response = rec.get(ycol).unwrap_or("");
        if response.is_empty() {
            dropped += 1;
            continue;
        }
        let raw = parse_finite(rec.get(ccol).unwrap_or(""), "condition", row)?;
        let time = parse_finite(rec.get(tcol).unwrap_or(""), "time", row)?;
        if time < 0.0 {
            return Err(Error::Validation(format!("row {row}: negative time {time}")));
        }
        let batch_id = match bcol {
            Some(b) => rec.get(b).unwrap_or("").to_string(),
            None => format!("row{row}"),
        };
        records.push(AddtRecord {
            condition: arrhenius_transform(raw, schema.sign)?,
            raw_condition: raw,
            time,
            batch_id,
            response: parse_finite(response, "response", row)?,
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with empty response");
    }
    AddtDataset::new(records)
}

pub fn write_addt(data: &AddtDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_addt_to(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_addt_to<W: std::io::Write>(data: &AddtDataset, w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(["condition_c", "time", "response", "batch"])?;
    for r in &data.records {
        w.write_record([r.raw_condition.to_string(), r.time.to_string(), r.response.to_string(), r.batch_id.clone()])?;
    }
    Ok(())
}

/// Reads long-format covariate histories `unit_id,time,name,value`.
pub fn load_covariates(path: impl AsRef<Path>) -> Result<Vec<CovariateHistory>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let ucol = column(&headers, "unit_id")?;
    let tcol = column(&headers, "time")?;
    let ncol = column(&headers, "name")?;
    let vcol = column(&headers, "value")?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut series: HashMap<(String, String), Vec<(f64, f64)>> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let key = (rec.get(ucol).unwrap_or("").to_string(), rec.get(ncol).unwrap_or("").to_string());
        let t = parse_finite(rec.get(tcol).unwrap_or(""), "time", row)?;
        let v = parse_finite(rec.get(vcol).unwrap_or(""), "value", row)?;
        if !series.contains_key(&key) {
            order.push(key.clone());
        }
        series.entry(key).or_default().push((t, v));
    }
    order
        .into_iter()
        .map(|key| {
            let mut pts = series.remove(&key).unwrap_or_default();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (times, values) = pts.into_iter().unzip();
            CovariateHistory::new(key.0, key.1, times, values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_unit_three_rows() {
        let f = write_tmp("unit_id,time,response\nA,0,0.1\nA,1,0.2\nA,2,0.4\n");
        let d = load_rmdt(f.path(), &RmdtSchema::default()).unwrap();
        assert_eq!(d.units.len(), 1);
        assert_eq!(d.units[0].len(), 3);
    }

    #[test]
    fn interleaved_units_are_grouped_and_sorted() {
        let f = write_tmp("unit_id,time,response,temp\nA,2,0.3,150\nB,1,0.1,195\nA,1,0.2,150\nB,0,0.0,195\n");
        let d = load_rmdt(f.path(), &RmdtSchema::default()).unwrap();
        assert_eq!(d.units.len(), 2);
        assert_eq!(d.units[0].unit_id, "A");
        assert_eq!(d.units[0].times, vec![1.0, 2.0]);
        assert_eq!(d.units[1].times, vec![0.0, 1.0]);
        assert_eq!(d.units[1].covariate("temp").unwrap(), 195.0);
    }

    #[test]
    fn missing_response_column_is_schema_error() {
        let f = write_tmp("unit_id,time,value\nA,0,1\n");
        assert!(matches!(load_rmdt(f.path(), &RmdtSchema::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn duplicate_times_name_the_unit() {
        let f = write_tmp("unit_id,time,response\nU7,1,0.1\nU7,1,0.2\n");
        match load_rmdt(f.path(), &RmdtSchema::default()) {
            Err(Error::Validation(m)) => assert!(m.contains("U7")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_tokens_rejected() {
        let f = write_tmp("unit_id,time,response\nA,0,NaN\n");
        assert!(load_rmdt(f.path(), &RmdtSchema::default()).is_err());
        let f = write_tmp("unit_id,time,response\nA,inf,1\n");
        assert!(load_rmdt(f.path(), &RmdtSchema::default()).is_err());
    }

    #[test]
    fn empty_responses_are_dropped() {
        let f = write_tmp("unit_id,time,response\nA,0,0.1\nA,1,\nA,2,0.3\n");
        let d = load_rmdt(f.path(), &RmdtSchema::default()).unwrap();
        assert_eq!(d.units[0].times, vec![0.0, 2.0]);
    }

    #[test]
    fn addt_baseline_and_singleton_batches() {
        let mut csv = String::from("condition_c,time,response\n");
        for _ in 0..8 {
            csv.push_str("25,0,4.5\n");
        }
        csv.push_str("50,336,4.2\n60,336,4.0\n");
        let f = write_tmp(&csv);
        let d = load_addt(f.path(), &AddtSchema::default()).unwrap();
        assert_eq!(d.baseline_records().len(), 8);
        assert_eq!(d.batches().len(), 10);
        assert!(d.records[0].condition < 0.0);
    }

    #[test]
    fn addt_negative_time_rejected() {
        let f = write_tmp("condition_c,time,response\n50,-1,4.0\n");
        assert!(matches!(load_addt(f.path(), &AddtSchema::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn arrhenius_values() {
        assert_relative_eq!(arrhenius_transform(195.0, ArrheniusSign::Positive).unwrap(), 24.789, epsilon = 5e-4);
        assert_relative_eq!(arrhenius_transform(80.0, ArrheniusSign::Positive).unwrap(), 32.861, epsilon = 5e-4);
        assert_eq!(
            arrhenius_transform(60.0, ArrheniusSign::Negative).unwrap(),
            -arrhenius_transform(60.0, ArrheniusSign::Positive).unwrap()
        );
        assert!(matches!(arrhenius_transform(-273.15, ArrheniusSign::Positive), Err(Error::Domain(_))));
        assert_relative_eq!(
            arrhenius_to_celsius(arrhenius_transform(37.5, ArrheniusSign::Negative).unwrap(), ArrheniusSign::Negative),
            37.5,
            epsilon = 1e-10
        );
    }

    #[test]
    fn canonicalize_negates_decreasing() {
        let u = UnitSeries::new("A", vec![1.0, 2.0], vec![-0.1, -0.3]).unwrap();
        let d = RmdtDataset::new(vec![u]).unwrap();
        let (c, th) = canonicalize_direction(d.clone(), FailureThreshold::decreasing(-0.45));
        assert_eq!(c.units[0].measurements, vec![0.1, 0.3]);
        assert_eq!(th, FailureThreshold::increasing(0.45));
        let (same, th2) = canonicalize_direction(d.clone(), FailureThreshold::increasing(1.0));
        assert_eq!(same, d);
        assert_eq!(th2, FailureThreshold::increasing(1.0));
    }

    #[test]
    fn covariate_history_long_format() {
        let f = write_tmp("unit_id,time,name,value\nA,1,uv,3\nA,0,uv,2\nA,0,temp,20\n");
        let h = load_covariates(f.path()).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].times, vec![0.0, 1.0]);
        assert_eq!(h[0].values, vec![2.0, 3.0]);
    }
}

//! Coinciding-outage counts and the standardized design matrix.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::ingest::{fmt_f64, OutageRecord};
use crate::kv::KvFile;

/// One boundary event of the sweep: `+1` at an outage start, `-1` at its end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub time: i64,
    pub delta_outages: i8,
    pub delta_customers: i64,
    /// Position of the outage in the input.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Coinciding {
    pub outages: u32,
    pub customers: u64,
}

/// Per-record number of active outages (and their customers) at the record's
/// start time, counting the record itself.
pub fn coinciding_counts(records: &[OutageRecord]) -> Vec<Coinciding> {
    let intervals: Vec<(i64, i64, u64)> = records
        .iter()
        .map(|r| (r.outage.start_time, r.outage.end_time, r.outage.customers_interrupted))
        .collect();
    coinciding_counts_intervals(&intervals)
}

/// Sweep over half-open intervals `[start, end)` with customer weights.
///
/// At a shared timestamp all end events are applied before any start event, and
/// every start at that timestamp sees every other start at that timestamp.
pub fn coinciding_counts_intervals(intervals: &[(i64, i64, u64)]) -> Vec<Coinciding> {
    let mut events: Vec<SweepPoint> = Vec::with_capacity(2 * intervals.len());
    for (index, &(start, end, customers)) in intervals.iter().enumerate() {
        let customers = customers as i64;
        events.push(SweepPoint { time: start, delta_outages: 1, delta_customers: customers, index });
        events.push(SweepPoint { time: end, delta_outages: -1, delta_customers: -customers, index });
    }
    events.sort_unstable_by_key(|e| (e.time, e.delta_outages, e.index));

    let mut out = vec![Coinciding::default(); intervals.len()];
    let (mut active, mut customers) = (0i64, 0i64);
    let mut i = 0;
    while i < events.len() {
        let time = events[i].time;
        while i < events.len() && events[i].time == time && events[i].delta_outages < 0 {
            active -= 1;
            customers += events[i].delta_customers;
            i += 1;
        }
        let first_start = i;
        while i < events.len() && events[i].time == time {
            active += 1;
            customers += events[i].delta_customers;
            i += 1;
        }
        for e in &events[first_start..i] {
            out[e.index] = Coinciding { outages: active as u32, customers: customers as u64 };
        }
    }
    out
}

/// The feature catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    HourOfDay,
    DayOfWeek,
    Month,
    CustomersInterrupted,
    CauseKey,
    EquipmentCauseKey,
    Temp,
    Precip,
    Wind,
    WeatherCondition,
    CoincidingOutages,
    CoincidingCustomers,
}

impl Feature {
    pub const ALL: [Feature; 12] = [
        Feature::HourOfDay,
        Feature::DayOfWeek,
        Feature::Month,
        Feature::CustomersInterrupted,
        Feature::CauseKey,
        Feature::EquipmentCauseKey,
        Feature::Temp,
        Feature::Precip,
        Feature::Wind,
        Feature::WeatherCondition,
        Feature::CoincidingOutages,
        Feature::CoincidingCustomers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::HourOfDay => "hour_of_day",
            Feature::DayOfWeek => "day_of_week",
            Feature::Month => "month",
            Feature::CustomersInterrupted => "customers_interrupted",
            Feature::CauseKey => "cause_key",
            Feature::EquipmentCauseKey => "equipment_cause_key",
            Feature::Temp => "temp",
            Feature::Precip => "precip",
            Feature::Wind => "wind",
            Feature::WeatherCondition => "weather_condition",
            Feature::CoincidingOutages => "coinciding_outages",
            Feature::CoincidingCustomers => "coinciding_customers",
        }
    }

    fn is_code(self) -> bool {
        matches!(self, Feature::CauseKey | Feature::EquipmentCauseKey)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown feature `{}`", s.trim())))
    }
}

/// Encoding of the cause / equipment-cause codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CodeEncoding {
    #[default]
    Ordinal,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub features: Vec<Feature>,
    pub code_encoding: CodeEncoding,
    /// Offset of local time from UTC for the calendar features, in seconds.
    pub utc_offset_secs: i64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            features: vec![
                Feature::HourOfDay,
                Feature::CustomersInterrupted,
                Feature::CauseKey,
                Feature::EquipmentCauseKey,
                Feature::Temp,
                Feature::Precip,
                Feature::Wind,
                Feature::WeatherCondition,
                Feature::CoincidingOutages,
                Feature::CoincidingCustomers,
            ],
            code_encoding: CodeEncoding::Ordinal,
            utc_offset_secs: 0,
        }
    }
}

impl FeatureSpec {
    /// Comma-separated feature names in column order.
    pub fn parse_list(list: &str) -> Result<Vec<Feature>> {
        list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
    }
}

/// Per-column `(mean, std)` pairs fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(rows)?;
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(rows)?;
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }

    fn check(&self, rows: ArrayView2<f64>) -> Result<()> {
        if rows.ncols() != self.mean.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} feature columns, got {}",
                self.mean.len(),
                rows.ncols()
            )));
        }
        Ok(())
    }
}

/// Re-applies fitted parameters to new rows; never refits.
pub fn apply_standardization(rows: ArrayView2<f64>, standardization: &Standardization) -> Result<Array2<f64>> {
    standardization.apply(rows)
}

/// How records map to raw (pre-standardization) columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub spec: FeatureSpec,
    /// One-hot levels for cause and equipment-cause codes (empty when ordinal).
    pub cause_levels: Vec<i64>,
    pub equipment_levels: Vec<i64>,
    /// Every raw column this feature set produces, before constant columns are dropped.
    pub raw_columns: Vec<String>,
    /// Indices into `raw_columns` that survive.
    pub kept: Vec<usize>,
}

impl FeatureLayout {
    fn new(spec: &FeatureSpec, records: &[OutageRecord]) -> Self {
        let levels = |f: fn(&OutageRecord) -> i64| {
            let mut v: Vec<i64> = records.iter().map(f).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let one_hot = spec.code_encoding == CodeEncoding::OneHot;
        let cause_levels = if one_hot { levels(|r| r.outage.cause_key) } else { Vec::new() };
        let equipment_levels = if one_hot { levels(|r| r.outage.equipment_cause_key) } else { Vec::new() };
        let mut raw_columns = Vec::new();
        for &f in &spec.features {
            match (f, one_hot) {
                (Feature::CauseKey, true) => {
                    raw_columns.extend(cause_levels.iter().map(|l| format!("{}={l}", f.name())))
                }
                (Feature::EquipmentCauseKey, true) => {
                    raw_columns.extend(equipment_levels.iter().map(|l| format!("{}={l}", f.name())))
                }
                _ => raw_columns.push(f.name().to_string()),
            }
        }
        let kept = (0..raw_columns.len()).collect();
        FeatureLayout { spec: spec.clone(), cause_levels, equipment_levels, raw_columns, kept }
    }

    /// Raw values of every column in `raw_columns`. Coinciding counts are
    /// computed within the given batch of records.
    pub fn raw_rows(&self, records: &[OutageRecord]) -> Array2<f64> {
        let counts = if self.spec.features.iter().any(|f| {
            matches!(f, Feature::CoincidingOutages | Feature::CoincidingCustomers)
        }) {
            coinciding_counts(records)
        } else {
            vec![Coinciding::default(); records.len()]
        };
        let mut out = Array2::zeros((records.len(), self.raw_columns.len()));
        for (i, (rec, c)) in records.iter().zip(&counts).enumerate() {
            let local = DateTime::from_timestamp(rec.outage.start_time + self.spec.utc_offset_secs, 0)
                .unwrap_or_default();
            let mut j = 0;
            let mut push = |v: f64| {
                out[[i, j]] = v;
                j += 1;
            };
            for &f in &self.spec.features {
                if f.is_code() && self.spec.code_encoding == CodeEncoding::OneHot {
                    let (levels, code) = if f == Feature::CauseKey {
                        (&self.cause_levels, rec.outage.cause_key)
                    } else {
                        (&self.equipment_levels, rec.outage.equipment_cause_key)
                    };
                    for &l in levels {
                        push(if l == code { 1.0 } else { 0.0 });
                    }
                    continue;
                }
                push(match f {
                    Feature::HourOfDay => local.hour() as f64,
                    Feature::DayOfWeek => local.weekday().num_days_from_monday() as f64,
                    Feature::Month => local.month() as f64,
                    Feature::CustomersInterrupted => rec.outage.customers_interrupted as f64,
                    Feature::CauseKey => rec.outage.cause_key as f64,
                    Feature::EquipmentCauseKey => rec.outage.equipment_cause_key as f64,
                    Feature::Temp => rec.weather.temp,
                    Feature::Precip => rec.weather.precip,
                    Feature::Wind => rec.weather.wind,
                    Feature::WeatherCondition => f64::from(rec.weather.condition.code()),
                    Feature::CoincidingOutages => f64::from(c.outages),
                    Feature::CoincidingCustomers => c.customers as f64,
                });
            }
        }
        out
    }

    /// Raw values of the kept columns only.
    pub fn kept_rows(&self, records: &[OutageRecord]) -> Array2<f64> {
        let raw = self.raw_rows(records);
        raw.select(ndarray::Axis(1), &self.kept)
    }
}

/// Layout and scale of a fitted matrix, without the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub layout: FeatureLayout,
    pub standardization: Standardization,
}

impl FeatureTransform {
    pub fn apply(&self, records: &[OutageRecord]) -> Result<Array2<f64>> {
        self.standardization.apply(self.layout.kept_rows(records).view())
    }
}

/// Standardized design matrix with its target and column metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub feature_names: Vec<String>,
    pub standardization: Standardization,
    /// Constant columns removed before standardization.
    pub dropped: Vec<String>,
    /// Restoration time in minutes, one per row.
    pub target: Vec<f64>,
    pub record_ids: Vec<usize>,
    pub layout: FeatureLayout,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Standardized rows for new records, using the fitted layout and scale.
    pub fn transform(&self, records: &[OutageRecord]) -> Result<Array2<f64>> {
        self.standardization.apply(self.layout.kept_rows(records).view())
    }

    pub fn fitted(&self) -> FeatureTransform {
        FeatureTransform { layout: self.layout.clone(), standardization: self.standardization.clone() }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["record_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push("target".into());
        csv.write_record(&header)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![self.record_ids[i].to_string()];
            rec.extend(row.iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(self.target[i]));
            csv.write_record(&rec)?;
        }
        csv.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    /// Sidecar metadata in `key = value` form, preceded by a version line.
    pub fn sidecar(&self) -> String {
        let mut kv = KvFile::default();
        let names = |v: &[Feature]| v.iter().map(|f| f.name()).collect::<Vec<_>>().join(",");
        kv.push("features", names(&self.layout.spec.features));
        kv.push("code_encoding", format!("{:?}", self.layout.spec.code_encoding).to_lowercase());
        kv.push("utc_offset_secs", self.layout.spec.utc_offset_secs);
        kv.push("columns", self.feature_names.join(","));
        kv.push("dropped", self.dropped.join(","));
        let join = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(",");
        kv.push("levels.cause_key", join(&self.layout.cause_levels));
        kv.push("levels.equipment_cause_key", join(&self.layout.equipment_levels));
        for (j, name) in self.standardization.columns.iter().enumerate() {
            kv.push(format!("mean.{name}"), fmt_f64(self.standardization.mean[j]));
            kv.push(format!("std.{name}"), fmt_f64(self.standardization.std[j]));
        }
        format!("{}\n{}", artifact::version_line("features"), kv.render())
    }
}

/// Builds and standardizes the design matrix. Standardization uses the
/// population standard deviation; constant columns are dropped.
pub fn build_matrix(records: &[OutageRecord], spec: &FeatureSpec) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot build a feature matrix from zero records".into()));
    }
    if spec.features.is_empty() {
        return Err(Error::Config("feature list is empty".into()));
    }
    let mut layout = FeatureLayout::new(spec, records);
    let raw = layout.raw_rows(records);
    let m = raw.nrows() as f64;

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for (j, col) in raw.columns().into_iter().enumerate() {
        let mu = col.sum() / m;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        if !sd.is_finite() || !mu.is_finite() {
            return Err(Error::InvalidInput(format!("column `{}` has non-finite values", layout.raw_columns[j])));
        }
        if sd <= 1e-12 * mu.abs().max(1.0) {
            dropped.push(layout.raw_columns[j].clone());
        } else {
            kept.push(j);
            mean.push(mu);
            std.push(sd);
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidInput("every feature column is constant".into()));
    }
    layout.kept = kept;
    let feature_names: Vec<String> = layout.kept.iter().map(|&j| layout.raw_columns[j].clone()).collect();
    let standardization = Standardization { columns: feature_names.clone(), mean, std };
    let values = standardization.apply(raw.select(ndarray::Axis(1), &layout.kept).view())?;
    Ok(FeatureMatrix {
        values,
        feature_names,
        standardization,
        dropped,
        target: records.iter().map(|r| r.outage.restoration_time_min).collect(),
        record_ids: records.iter().map(|r| r.outage.id).collect(),
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CleanOutage, WeatherCondition, WeatherObs};
    use ndarray::array;

    fn brute(intervals: &[(i64, i64, u64)]) -> Vec<Coinciding> {
        intervals
            .iter()
            .map(|&(t, _, _)| {
                let active = intervals.iter().filter(|&&(s, e, _)| s <= t && t < e);
                Coinciding {
                    outages: active.clone().count() as u32,
                    customers: active.map(|&(_, _, c)| c).sum(),
                }
            })
            .collect()
    }

    #[test]
    fn three_interval_example() {
        let iv = [(0, 10, 1), (5, 15, 2), (20, 30, 4)];
        let got = coinciding_counts_intervals(&iv);
        let outages: Vec<u32> = got.iter().map(|c| c.outages).collect();
        assert_eq!(outages, vec![1, 2, 1]);
        assert_eq!(got[1].customers, 3);
        assert_eq!(got, brute(&iv));
    }

    #[test]
    fn disjoint_and_identical_intervals() {
        let disjoint: Vec<_> = (0..6).map(|i| (i * 10, i * 10 + 5, 1)).collect();
        assert!(coinciding_counts_intervals(&disjoint).iter().all(|c| c.outages == 1));
        let same = vec![(3, 9, 2); 7];
        assert!(coinciding_counts_intervals(&same).iter().all(|c| c.outages == 7 && c.customers == 14));
    }

    #[test]
    fn back_to_back_outages_do_not_coincide() {
        let iv = [(0, 10, 1), (10, 20, 1)];
        assert!(coinciding_counts_intervals(&iv).iter().all(|c| c.outages == 1));
    }

    pub(crate) fn record(id: usize, start: i64, customers: u64, precip: f64, rt: f64) -> OutageRecord {
        OutageRecord {
            outage: CleanOutage {
                id,
                start_time: start,
                end_time: start + 7200,
                customers_interrupted: customers,
                repair_time_min: rt / 2.0,
                restoration_time_min: rt,
                cause_key: (id % 3) as i64,
                equipment_cause_key: (id % 2) as i64 + 10,
                location_id: "l".into(),
                circuit_id: "c".into(),
            },
            weather: WeatherObs { temp: id as f64 * 1.5, precip, wind: 2.0 + id as f64, condition: WeatherCondition::Normal },
        }
    }

    fn five() -> Vec<OutageRecord> {
        (0..5).map(|i| record(i, 1_400_000_000 + i as i64 * 5000, 10 + 7 * i as u64, 0.0, 30.0 + i as f64)).collect()
    }

    #[test]
    fn matrix_shape_follows_spec() {
        let spec = FeatureSpec {
            features: vec![Feature::CustomersInterrupted, Feature::Temp, Feature::Wind],
            ..FeatureSpec::default()
        };
        let fm = build_matrix(&five(), &spec).unwrap();
        assert_eq!(fm.values.dim(), (5, 3));
        assert_eq!(fm.standardization.mean.len(), 3);
        assert_eq!(fm.feature_names, vec!["customers_interrupted", "temp", "wind"]);
        assert_eq!(fm.target, vec![30.0, 31.0, 32.0, 33.0, 34.0]);
        for col in fm.values.columns() {
            let mean = col.sum() / 5.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
            assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_column_is_dropped() {
        let spec = FeatureSpec { features: vec![Feature::Precip, Feature::Temp], ..FeatureSpec::default() };
        let fm = build_matrix(&five(), &spec).unwrap();
        assert_eq!(fm.dropped, vec!["precip"]);
        assert_eq!(fm.feature_names, vec!["temp"]);
    }

    #[test]
    fn standardization_round_trip_and_centering() {
        let fm = build_matrix(&five(), &FeatureSpec::default()).unwrap();
        let raw = fm.layout.kept_rows(&five());
        let back = fm.standardization.invert(fm.values.view()).unwrap();
        for (a, b) in raw.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let mean_row = ndarray::Array2::from_shape_vec((1, fm.ncols()), fm.standardization.mean.clone()).unwrap();
        assert!(apply_standardization(mean_row.view(), &fm.standardization).unwrap().iter().all(|v| v.abs() < 1e-15));
        let again = fm.transform(&five()).unwrap();
        assert_eq!(again, fm.values);
        assert_eq!(fm.transform(&five()).unwrap(), again);
        assert!(apply_standardization(array![[1.0]].view(), &fm.standardization).is_err());
    }

    #[test]
    fn unknown_feature_and_empty_records() {
        assert!("wind_gust".parse::<Feature>().is_err());
        assert!(build_matrix(&[], &FeatureSpec::default()).is_err());
    }

    #[test]
    fn one_hot_codes_expand_columns() {
        let spec = FeatureSpec {
            features: vec![Feature::CauseKey, Feature::Temp],
            code_encoding: CodeEncoding::OneHot,
            utc_offset_secs: 0,
        };
        let fm = build_matrix(&five(), &spec).unwrap();
        assert_eq!(fm.feature_names, vec!["cause_key=0", "cause_key=1", "cause_key=2", "temp"]);
    }

    #[test]
    fn sidecar_has_version_and_scale() {
        let fm = build_matrix(&five(), &FeatureSpec::default()).unwrap();
        let text = fm.sidecar();
        assert!(text.starts_with("restoretime-features v1\n"));
        let kv = KvFile::parse(text.split_once('\n').unwrap().1).unwrap();
        assert_eq!(kv.get("mean.temp").unwrap().parse::<f64>().unwrap(), fm.standardization.mean[4]);
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("record_id,hour_of_day"));
    }
}

//! Outage and weather CSV ingestion, cleaning and weather alignment.
//!
//! Timestamps are held as UTC epoch seconds. Source files may use naive local
//! timestamps; the schema map carries the fixed UTC offset applied at parse time.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvFile;

/// Default gross-error ceiling: 14 days, in minutes.
pub const DEFAULT_CEILING_MIN: f64 = 20_160.0;

const NAIVE_FORMATS: [&str; 3] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y/%m/%d %H:%M:%S"];

/// A parsed outage row before cleaning. Any attribute may be absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawOutageRow {
    /// 1-based line in the source file (the header is line 1).
    pub line: usize,
    pub start_time: Option<i64>,
    pub end_time: Option<i64>,
    pub customers_interrupted: Option<u64>,
    pub repair_time_min: Option<f64>,
    pub restoration_time_min: Option<f64>,
    pub cause_key: Option<i64>,
    pub equipment_cause_key: Option<i64>,
    pub location_id: Option<String>,
    pub circuit_id: Option<String>,
}

/// A fully populated, logically consistent outage (no weather yet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanOutage {
    pub id: usize,
    pub start_time: i64,
    pub end_time: i64,
    pub customers_interrupted: u64,
    pub repair_time_min: f64,
    pub restoration_time_min: f64,
    pub cause_key: i64,
    pub equipment_cause_key: i64,
    pub location_id: String,
    pub circuit_id: String,
}

impl CleanOutage {
    pub fn span_minutes(&self) -> f64 {
        (self.end_time - self.start_time) as f64 / 60.0
    }
}

impl From<&CleanOutage> for RawOutageRow {
    fn from(o: &CleanOutage) -> Self {
        RawOutageRow {
            line: o.id,
            start_time: Some(o.start_time),
            end_time: Some(o.end_time),
            customers_interrupted: Some(o.customers_interrupted),
            repair_time_min: Some(o.repair_time_min),
            restoration_time_min: Some(o.restoration_time_min),
            cause_key: Some(o.cause_key),
            equipment_cause_key: Some(o.equipment_cause_key),
            location_id: Some(o.location_id.clone()),
            circuit_id: Some(o.circuit_id.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeatherCondition {
    Normal,
    Snowstorm,
    Lightning,
    HighWind,
    Flood,
}

impl WeatherCondition {
    pub const ALL: [WeatherCondition; 5] = [
        WeatherCondition::Normal,
        WeatherCondition::Snowstorm,
        WeatherCondition::Lightning,
        WeatherCondition::HighWind,
        WeatherCondition::Flood,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherCondition::Normal => "normal",
            WeatherCondition::Snowstorm => "snowstorm",
            WeatherCondition::Lightning => "lightning",
            WeatherCondition::HighWind => "high_wind",
            WeatherCondition::Flood => "flood",
        }
    }
}

impl fmt::Display for WeatherCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u8>() {
            return WeatherCondition::ALL
                .get(code as usize)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("weather condition code {code} out of range 0..=4")));
        }
        WeatherCondition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown weather condition `{s}`")))
    }
}

/// One hourly weather observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub hour_start: i64,
    pub temp: f64,
    pub precip: f64,
    pub wind: f64,
    pub condition: WeatherCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherObs {
    pub temp: f64,
    pub precip: f64,
    pub wind: f64,
    pub condition: WeatherCondition,
}

impl From<&WeatherRow> for WeatherObs {
    fn from(w: &WeatherRow) -> Self {
        WeatherObs { temp: w.temp, precip: w.precip, wind: w.wind, condition: w.condition }
    }
}

/// A cleaned outage joined with the weather of its start hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageRecord {
    pub outage: CleanOutage,
    pub weather: WeatherObs,
}

/// Canonical outage fields that a schema map can rename.
pub const OUTAGE_FIELDS: [&str; 9] = [
    "start_time",
    "end_time",
    "customers_interrupted",
    "repair_time_min",
    "restoration_time_min",
    "cause_key",
    "equipment_cause_key",
    "location_id",
    "circuit_id",
];

/// How to read timestamps: optional explicit strftime format plus a fixed UTC offset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeParse {
    pub format: Option<String>,
    /// Offset of the source's local time from UTC, in seconds (UTC-5 is -18000).
    pub utc_offset_secs: i64,
}

impl TimeParse {
    pub fn parse(&self, text: &str) -> Option<i64> {
        let text = text.trim();
        if let Some(fmt) = &self.format {
            return NaiveDateTime::parse_from_str(text, fmt)
                .ok()
                .map(|dt| dt.and_utc().timestamp() - self.utc_offset_secs);
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Some(dt.timestamp());
        }
        for fmt in NAIVE_FORMATS {
            if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
                return Some(dt.and_utc().timestamp() - self.utc_offset_secs);
            }
        }
        if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit() || b == b'-') {
            return text.parse().ok();
        }
        None
    }
}

/// Maps canonical outage fields to the header names of a particular export.
///
/// Text form, one entry per line:
/// ```text
/// start_time = OUT_START
/// restoration_time_min = RESTORE_MIN
/// timezone = -05:00
/// timestamp_format = %m/%d/%Y %H:%M:%S
/// ```
/// Fields not listed map to their canonical name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMap {
    pub columns: Vec<(String, String)>,
    pub time: TimeParse,
}

impl Default for SchemaMap {
    fn default() -> Self {
        SchemaMap {
            columns: OUTAGE_FIELDS.iter().map(|f| (f.to_string(), f.to_string())).collect(),
            time: TimeParse::default(),
        }
    }
}

impl SchemaMap {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let mut schema = SchemaMap::default();
        for (key, value) in &kv.entries {
            match key.as_str() {
                "timezone" => schema.time.utc_offset_secs = parse_utc_offset(value)?,
                "timestamp_format" => schema.time.format = Some(value.clone()),
                field => {
                    let slot = schema
                        .columns
                        .iter_mut()
                        .find(|(canonical, _)| canonical == field)
                        .ok_or_else(|| Error::Config(format!("schema map: unknown field `{field}`")))?;
                    slot.1 = value.clone();
                }
            }
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns
            .iter()
            .find(|(c, _)| c == canonical)
            .map(|(_, h)| h.as_str())
            .unwrap_or(canonical)
    }
}

/// Parses `UTC`, `Z`, `+05:30`, `-0500` or a bare hour count like `-5`.
pub fn parse_utc_offset(text: &str) -> Result<i64> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("utc") || t == "Z" {
        return Ok(0);
    }
    let bad = || Error::Config(format!("cannot parse timezone offset `{text}`"));
    let (sign, rest) = match t.as_bytes().first() {
        Some(b'+') => (1, &t[1..]),
        Some(b'-') => (-1, &t[1..]),
        _ => (1, t),
    };
    let (hours, minutes) = if let Some((h, m)) = rest.split_once(':') {
        (h.parse::<i64>().map_err(|_| bad())?, m.parse::<i64>().map_err(|_| bad())?)
    } else if rest.len() == 4 {
        (rest[..2].parse::<i64>().map_err(|_| bad())?, rest[2..].parse::<i64>().map_err(|_| bad())?)
    } else {
        (rest.parse::<i64>().map_err(|_| bad())?, 0)
    };
    if hours > 14 || minutes >= 60 {
        return Err(bad());
    }
    Ok(sign * (hours * 3600 + minutes * 60))
}

/// A row-level problem found while parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedOutages {
    pub rows: Vec<RawOutageRow>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn parse_outage_csv(path: &Path, schema: &SchemaMap) -> Result<ParsedOutages> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_outage_reader(file, schema)
}

pub fn parse_outage_reader<R: std::io::Read>(reader: R, schema: &SchemaMap) -> Result<ParsedOutages> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Schema("outage file has no header row".into()));
    }
    let mut index = [0usize; 9];
    for (slot, field) in index.iter_mut().zip(OUTAGE_FIELDS) {
        let name = schema.header_for(field);
        *slot = headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            Error::Schema(format!("header is missing column `{name}` (mapped from `{field}`)"))
        })?;
    }

    let mut out = ParsedOutages::default();
    for result in csv.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.diagnostics.push(Diagnostic { line, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: usize| record.get(index[i]).map(str::trim).filter(|s| !s.is_empty());
        match parse_row(line, cell, &schema.time) {
            Ok(row) => out.rows.push(row),
            Err(message) => out.diagnostics.push(Diagnostic { line, message }),
        }
    }
    Ok(out)
}

fn parse_row<'a>(
    line: usize,
    cell: impl Fn(usize) -> Option<&'a str>,
    time: &TimeParse,
) -> std::result::Result<RawOutageRow, String> {
    fn num<T: FromStr>(field: &str, v: Option<&str>) -> std::result::Result<Option<T>, String> {
        v.map(|s| s.parse::<T>().map_err(|_| format!("{field}: cannot parse `{s}`"))).transpose()
    }
    fn non_negative(field: &str, v: Option<f64>) -> std::result::Result<Option<f64>, String> {
        match v {
            Some(x) if !x.is_finite() || x < 0.0 => Err(format!("{field}: expected a non-negative number, got {x}")),
            other => Ok(other),
        }
    }
    let stamp = |i: usize| -> std::result::Result<Option<i64>, String> {
        cell(i)
            .map(|s| time.parse(s).ok_or_else(|| format!("{}: unparseable timestamp `{s}`", OUTAGE_FIELDS[i])))
            .transpose()
    };
    Ok(RawOutageRow {
        line,
        start_time: stamp(0)?,
        end_time: stamp(1)?,
        customers_interrupted: num(OUTAGE_FIELDS[2], cell(2))?,
        repair_time_min: non_negative(OUTAGE_FIELDS[3], num(OUTAGE_FIELDS[3], cell(3))?)?,
        restoration_time_min: non_negative(OUTAGE_FIELDS[4], num(OUTAGE_FIELDS[4], cell(4))?)?,
        cause_key: num(OUTAGE_FIELDS[5], cell(5))?,
        equipment_cause_key: num(OUTAGE_FIELDS[6], cell(6))?,
        location_id: cell(7).map(str::to_string),
        circuit_id: cell(8).map(str::to_string),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    /// At least one attribute is empty.
    Missing,
    /// Restoration longer than the outage itself, or a non-positive span.
    Logic,
    /// Restoration time at or above the gross-error ceiling.
    Gross,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Missing => "missing",
            RejectReason::Logic => "logic",
            RejectReason::Gross => "gross",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct CleanOutcome {
    pub retained: Vec<CleanOutage>,
    pub rejected: Vec<Rejection>,
}

pub fn clean(rows: &[RawOutageRow], ceiling_min: f64) -> Result<CleanOutcome> {
    if !(ceiling_min > 0.0) {
        return Err(Error::Config(format!("gross-error ceiling must be positive, got {ceiling_min}")));
    }
    let mut out = CleanOutcome::default();
    for row in rows {
        match clean_row(row, ceiling_min) {
            Ok(o) => out.retained.push(o),
            Err(reason) => out.rejected.push(Rejection { line: row.line, reason }),
        }
    }
    Ok(out)
}

fn clean_row(row: &RawOutageRow, ceiling_min: f64) -> std::result::Result<CleanOutage, RejectReason> {
    let (
        Some(start_time),
        Some(end_time),
        Some(customers_interrupted),
        Some(repair_time_min),
        Some(restoration_time_min),
        Some(cause_key),
        Some(equipment_cause_key),
        Some(location_id),
        Some(circuit_id),
    ) = (
        row.start_time,
        row.end_time,
        row.customers_interrupted,
        row.repair_time_min,
        row.restoration_time_min,
        row.cause_key,
        row.equipment_cause_key,
        row.location_id.as_ref(),
        row.circuit_id.as_ref(),
    )
    else {
        return Err(RejectReason::Missing);
    };
    let outage = CleanOutage {
        id: row.line,
        start_time,
        end_time,
        customers_interrupted,
        repair_time_min,
        restoration_time_min,
        cause_key,
        equipment_cause_key,
        location_id: location_id.clone(),
        circuit_id: circuit_id.clone(),
    };
    if end_time <= start_time || restoration_time_min > outage.span_minutes() {
        return Err(RejectReason::Logic);
    }
    if restoration_time_min >= ceiling_min {
        return Err(RejectReason::Gross);
    }
    Ok(outage)
}

pub fn hour_of(ts: i64) -> i64 {
    ts.div_euclid(3600) * 3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinError {
    pub line: usize,
    pub start_time: i64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct JoinOutcome {
    pub records: Vec<OutageRecord>,
    pub errors: Vec<JoinError>,
}

/// Attaches the weather row whose hour contains each outage's start time.
pub fn join_weather(outages: &[CleanOutage], weather: &[WeatherRow]) -> Result<JoinOutcome> {
    let mut by_hour: HashMap<i64, &WeatherRow> = HashMap::with_capacity(weather.len());
    for w in weather {
        if by_hour.insert(w.hour_start, w).is_some() {
            return Err(Error::InvalidInput(format!("weather hour {} appears more than once", w.hour_start)));
        }
    }
    let mut out = JoinOutcome::default();
    for o in outages {
        match by_hour.get(&hour_of(o.start_time)) {
            Some(w) => out.records.push(OutageRecord { outage: o.clone(), weather: WeatherObs::from(*w) }),
            None => out.errors.push(JoinError {
                line: o.id,
                start_time: o.start_time,
                message: format!("no weather row for hour starting {}", hour_of(o.start_time)),
            }),
        }
    }
    Ok(out)
}

pub const WEATHER_HEADER: [&str; 5] = ["hour_start", "temp", "precip", "wind", "condition"];

pub fn parse_weather_csv(path: &Path, time: &TimeParse) -> Result<Vec<WeatherRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_weather_reader(file, time)
}

/// Weather rows must all parse; hours are truncated and must be unique.
pub fn parse_weather_reader<R: std::io::Read>(reader: R, time: &TimeParse) -> Result<Vec<WeatherRow>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(WEATHER_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("weather header is missing column `{name}`")))?;
    }
    let mut rows: Vec<WeatherRow> = Vec::new();
    let mut seen = HashMap::new();
    for result in csv.records() {
        let rec = result?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
        let bad = |what: &str| Error::InvalidInput(format!("weather line {line}: {what}"));
        let hour_start = hour_of(time.parse(get(0)).ok_or_else(|| bad("unparseable hour_start"))?);
        let number = |i: usize| get(i).parse::<f64>().map_err(|_| bad(&format!("cannot parse {}", WEATHER_HEADER[i])));
        let row = WeatherRow {
            hour_start,
            temp: number(1)?,
            precip: number(2)?,
            wind: number(3)?,
            condition: get(4).parse()?,
        };
        if row.precip < 0.0 || row.wind < 0.0 {
            return Err(bad("precipitation and wind must be non-negative"));
        }
        if let Some(prev) = seen.insert(hour_start, line) {
            return Err(bad(&format!("hour already given on line {prev}")));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_weather_csv<W: std::io::Write>(writer: W, rows: &[WeatherRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(WEATHER_HEADER)?;
    for w in rows {
        csv.write_record([
            format_timestamp(w.hour_start),
            fmt_f64(w.temp),
            fmt_f64(w.precip),
            fmt_f64(w.wind),
            w.condition.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<weather csv>", e))?;
    Ok(())
}

/// Raw outage rows in the canonical schema with `YYYY-MM-DD HH:MM:SS` UTC timestamps.
pub fn write_raw_outage_csv<W: std::io::Write>(writer: W, rows: &[RawOutageRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(OUTAGE_FIELDS)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        csv.write_record([
            opt(r.start_time.map(format_timestamp)),
            opt(r.end_time.map(format_timestamp)),
            opt(r.customers_interrupted.map(|v| v.to_string())),
            opt(r.repair_time_min.map(fmt_f64)),
            opt(r.restoration_time_min.map(fmt_f64)),
            opt(r.cause_key.map(|v| v.to_string())),
            opt(r.equipment_cause_key.map(|v| v.to_string())),
            opt(r.location_id.clone()),
            opt(r.circuit_id.clone()),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<outage csv>", e))?;
    Ok(())
}

/// Column order of the cleaned-record CSV. Timestamps are UTC epoch seconds.
pub const CLEANED_HEADER: [&str; 14] = [
    "id",
    "start_time",
    "end_time",
    "customers_interrupted",
    "repair_time_min",
    "restoration_time_min",
    "cause_key",
    "equipment_cause_key",
    "location_id",
    "circuit_id",
    "weather_temp",
    "weather_precip",
    "weather_wind",
    "weather_condition",
];

pub fn write_cleaned_csv<W: std::io::Write>(writer: W, records: &[OutageRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(CLEANED_HEADER)?;
    for r in records {
        let o = &r.outage;
        csv.write_record([
            o.id.to_string(),
            o.start_time.to_string(),
            o.end_time.to_string(),
            o.customers_interrupted.to_string(),
            fmt_f64(o.repair_time_min),
            fmt_f64(o.restoration_time_min),
            o.cause_key.to_string(),
            o.equipment_cause_key.to_string(),
            o.location_id.clone(),
            o.circuit_id.clone(),
            fmt_f64(r.weather.temp),
            fmt_f64(r.weather.precip),
            fmt_f64(r.weather.wind),
            r.weather.condition.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<cleaned csv>", e))?;
    Ok(())
}

pub fn read_cleaned_csv<R: std::io::Read>(reader: R) -> Result<Vec<OutageRecord>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.iter().map(str::trim).ne(CLEANED_HEADER) {
        return Err(Error::Schema(format!(
            "cleaned outage CSV must have header `{}`",
            CLEANED_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for result in csv.records() {
        let rec = result?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |i: usize| Error::InvalidInput(format!("cleaned CSV line {line}: bad {}", CLEANED_HEADER[i]));
        let f = |i: usize| rec.get(i).unwrap_or("").trim();
        let int = |i: usize| f(i).parse::<i64>().map_err(|_| bad(i));
        let real = |i: usize| f(i).parse::<f64>().map_err(|_| bad(i));
        out.push(OutageRecord {
            outage: CleanOutage {
                id: f(0).parse().map_err(|_| bad(0))?,
                start_time: int(1)?,
                end_time: int(2)?,
                customers_interrupted: f(3).parse().map_err(|_| bad(3))?,
                repair_time_min: real(4)?,
                restoration_time_min: real(5)?,
                cause_key: int(6)?,
                equipment_cause_key: int(7)?,
                location_id: f(8).to_string(),
                circuit_id: f(9).to_string(),
            },
            weather: WeatherObs { temp: real(10)?, precip: real(11)?, wind: real(12)?, condition: f(13).parse()? },
        });
    }
    Ok(out)
}

/// One line per dropped row: `parse`, `missing`, `logic`, `gross` or `weather`.
pub fn write_rejections_csv<W: std::io::Write>(
    writer: W,
    diagnostics: &[Diagnostic],
    rejections: &[Rejection],
    join_errors: &[JoinError],
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["line", "reason", "detail"])?;
    for d in diagnostics {
        csv.write_record([d.line.to_string(), "parse".to_string(), d.message.clone()])?;
    }
    for r in rejections {
        csv.write_record([r.line.to_string(), r.reason.as_str().to_string(), String::new()])?;
    }
    for j in join_errors {
        csv.write_record([j.line.to_string(), "weather".to_string(), j.message.clone()])?;
    }
    csv.flush().map_err(|e| Error::io("<rejection csv>", e))?;
    Ok(())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|dt| dt.format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Shortest decimal text that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "start_time,end_time,customers_interrupted,repair_time_min,restoration_time_min,cause_key,equipment_cause_key,location_id,circuit_id\n";

    fn parse(body: &str) -> ParsedOutages {
        parse_outage_reader(format!("{HEADER}{body}").as_bytes(), &SchemaMap::default()).unwrap()
    }

    fn full_row(line: usize, start: i64, span_min: i64, restoration: f64) -> RawOutageRow {
        RawOutageRow {
            line,
            start_time: Some(start),
            end_time: Some(start + span_min * 60),
            customers_interrupted: Some(12),
            repair_time_min: Some(restoration / 2.0),
            restoration_time_min: Some(restoration),
            cause_key: Some(4),
            equipment_cause_key: Some(2),
            location_id: Some("L1".into()),
            circuit_id: Some("C9".into()),
        }
    }

    #[test]
    fn well_formed_file_parses_every_row() {
        let parsed = parse(
            "2015-04-15 10:00:00,2015-04-15 11:00:00,10,20,45,3,1,L1,C1\n\
             2015-04-15 12:00:00,2015-04-15 12:30:00,5,10,20,4,2,L2,C1\n\
             2015-04-15 13:00:00,2015-04-15 15:00:00,1,30,90,5,3,L3,C2\n",
        );
        assert_eq!(parsed.rows.len(), 3);
        assert!(parsed.diagnostics.is_empty());
        assert_eq!(parsed.rows[0].line, 2);
        assert_eq!(parsed.rows[2].line, 4);
        assert_eq!(parsed.rows[0].start_time, Some(1_429_092_000));
        assert_eq!(parsed.rows[1].circuit_id.as_deref(), Some("C1"));
    }

    #[test]
    fn empty_field_is_absent_not_an_error() {
        let parsed = parse("2015-04-15 10:00:00,2015-04-15 11:00:00,,20,45,3,1,L1,C1\n");
        assert_eq!(parsed.rows.len(), 1);
        assert_eq!(parsed.rows[0].customers_interrupted, None);
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn malformed_timestamp_yields_a_diagnostic() {
        let parsed = parse(
            "2015-04-15 10:00:00,2015-04-15 11:00:00,3,20,45,3,1,L1,C1\n\
             2015-04-15 10:00:00,not-a-time,3,20,45,3,1,L1,C1\n",
        );
        assert_eq!(parsed.rows.len(), 1);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].line, 3);
        assert!(parsed.diagnostics[0].message.contains("end_time"));
    }

    #[test]
    fn schema_map_renames_and_shifts_timezone() {
        let schema = SchemaMap::parse("start_time = BEGIN\nend_time=FINISH\ntimezone = -05:00\n").unwrap();
        let text = "BEGIN,FINISH,customers_interrupted,repair_time_min,restoration_time_min,cause_key,equipment_cause_key,location_id,circuit_id\n\
                    2015-04-15 10:00:00,2015-04-15 11:00:00,1,1,1,1,1,a,b\n";
        let parsed = parse_outage_reader(text.as_bytes(), &schema).unwrap();
        assert_eq!(parsed.rows[0].start_time, Some(1_429_092_000 + 5 * 3600));
    }

    #[test]
    fn missing_mapped_column_is_an_error() {
        let schema = SchemaMap::parse("circuit_id = FEEDER").unwrap();
        let err = parse_outage_reader(HEADER.as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("FEEDER"));
        assert!(SchemaMap::parse("not_a_field = x").is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(
            parse_outage_csv(Path::new("/definitely/not/here.csv"), &SchemaMap::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn utc_offsets() {
        assert_eq!(parse_utc_offset("UTC").unwrap(), 0);
        assert_eq!(parse_utc_offset("+05:30").unwrap(), 19_800);
        assert_eq!(parse_utc_offset("-0500").unwrap(), -18_000);
        assert_eq!(parse_utc_offset("-5").unwrap(), -18_000);
        assert!(parse_utc_offset("+25:00").is_err());
    }

    #[test]
    fn restoration_longer_than_outage_is_a_logic_rejection() {
        let out = clean(&[full_row(2, 0, 60, 120.0)], DEFAULT_CEILING_MIN).unwrap();
        assert!(out.retained.is_empty());
        assert_eq!(out.rejected, vec![Rejection { line: 2, reason: RejectReason::Logic }]);
    }

    #[test]
    fn consistent_row_is_retained_unchanged() {
        let row = full_row(7, 1_000_000, 90, 80.0);
        let out = clean(std::slice::from_ref(&row), DEFAULT_CEILING_MIN).unwrap();
        assert_eq!(out.retained.len(), 1);
        assert_eq!(RawOutageRow::from(&out.retained[0]), row);
    }

    #[test]
    fn gross_values_are_rejected() {
        let row = full_row(3, 0, 2_000_000, 1.0e6);
        let out = clean(&[row], 1.0e4).unwrap();
        assert_eq!(out.rejected[0].reason, RejectReason::Gross);
    }

    #[test]
    fn empty_entries_are_rejected() {
        let mut row = full_row(4, 0, 60, 30.0);
        row.location_id = None;
        let out = clean(&[row], DEFAULT_CEILING_MIN).unwrap();
        assert_eq!(out.rejected[0].reason, RejectReason::Missing);
        assert!(clean(&[], 0.0).is_err());
    }

    fn weather(hour: i64, temp: f64) -> WeatherRow {
        WeatherRow { hour_start: hour, temp, precip: 0.0, wind: 3.0, condition: WeatherCondition::Normal }
    }

    fn outage(id: usize, start: i64) -> CleanOutage {
        CleanOutage {
            id,
            start_time: start,
            end_time: start + 3600,
            customers_interrupted: 3,
            repair_time_min: 10.0,
            restoration_time_min: 30.0,
            cause_key: 1,
            equipment_cause_key: 1,
            location_id: "x".into(),
            circuit_id: "y".into(),
        }
    }

    #[test]
    fn weather_join_truncates_to_the_hour() {
        let base = 1_429_092_000; // 2015-04-15 10:00 UTC
        let w = vec![weather(base + 4 * 3600, 11.0), weather(base + 5 * 3600, 12.0)];
        let o = vec![outage(2, base + 4 * 3600 + 37 * 60), outage(3, base + 4 * 3600 + 59 * 60), outage(4, base)];
        let joined = join_weather(&o, &w).unwrap();
        assert_eq!(joined.records.len(), 2);
        assert_eq!(joined.records[0].weather.temp, 11.0);
        assert_eq!(joined.records[0].weather, joined.records[1].weather);
        assert_eq!(joined.records[0].outage, o[0]);
        assert_eq!(joined.errors.len(), 1);
        assert_eq!(joined.errors[0].line, 4);
    }

    #[test]
    fn duplicate_weather_hours_are_rejected() {
        let text = "hour_start,temp,precip,wind,condition\n2015-01-01 10:05:00,1,0,2,normal\n2015-01-01 10:40:00,1,0,2,snowstorm\n";
        assert!(parse_weather_reader(text.as_bytes(), &TimeParse::default()).is_err());
        let ok = "hour_start,temp,precip,wind,condition\n2015-01-01 10:05:00,1,0,2,normal\n2015-01-01 11:00:00,1,0.5,2,3\n";
        let rows = parse_weather_reader(ok.as_bytes(), &TimeParse::default()).unwrap();
        assert_eq!(rows[0].hour_start % 3600, 0);
        assert_eq!(rows[1].condition, WeatherCondition::HighWind);
    }

    #[test]
    fn cleaned_csv_round_trips() {
        let rec = OutageRecord {
            outage: outage(9, 1_429_092_000),
            weather: WeatherObs { temp: -3.25, precip: 0.1, wind: 7.5, condition: WeatherCondition::Flood },
        };
        let mut buf = Vec::new();
        write_cleaned_csv(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back = read_cleaned_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }
}

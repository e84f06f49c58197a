use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::clock::DstRule;
use crate::error::{Error, Result};

/// One delivery hour. `None` marks a gap (missing or unparseable cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    pub price: Option<f64>,
    pub load_forecast: Option<f64>,
    pub renewable_forecast: Option<f64>,
}

impl HourlyRecord {
    pub fn is_complete(&self) -> bool {
        self.price.is_some() && self.load_forecast.is_some() && self.renewable_forecast.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub records: Vec<HourlyRecord>,
    pub dst: DstRule,
}

impl MarketSeries {
    pub fn gaps(&self) -> impl Iterator<Item = &HourlyRecord> {
        self.records.iter().filter(|r| !r.is_complete())
    }
}

/// Header names for the four input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub price: String,
    pub load_forecast: String,
    pub renewable_forecast: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            price: "price".into(),
            load_forecast: "load_forecast".into(),
            renewable_forecast: "renewable_forecast".into(),
        }
    }
}

impl ColumnSchema {
    /// Parses `timestamp=ts,price=p,...` overrides on top of the defaults.
    pub fn parse_overrides(spec: &str) -> Result<Self> {
        let mut schema = Self::default();
        for pair in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("schema entry `{pair}` is not key=value")))?;
            let value = value.trim().to_string();
            match key.trim() {
                "timestamp" => schema.timestamp = value,
                "price" => schema.price = value,
                "load_forecast" => schema.load_forecast = value,
                "renewable_forecast" => schema.renewable_forecast = value,
                other => return Err(Error::Config(format!("unknown schema key `{other}`"))),
            }
        }
        Ok(schema)
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnSchema, dst: DstRule) -> Result<MarketSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema, dst)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &ColumnSchema, dst: DstRule) -> Result<MarketSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = col(&schema.timestamp)?;
    let price_col = col(&schema.price)?;
    let load_col = col(&schema.load_forecast)?;
    let ren_col = col(&schema.renewable_forecast)?;

    let mut records: Vec<HourlyRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let raw_ts = row.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(raw_ts)?;
        let field = |i: usize| row.get(i).and_then(parse_number);
        let record = HourlyRecord {
            timestamp,
            price: field(price_col),
            load_forecast: field(load_col),
            renewable_forecast: field(ren_col),
        };
        if let Some(prev) = records.last() {
            if record.timestamp == prev.timestamp {
                if !dst.is_fall_back_hour(record.timestamp) {
                    return Err(Error::DuplicateTimestamp(record.timestamp.to_string()));
                }
            } else if record.timestamp < prev.timestamp {
                return Err(Error::NonMonotone(
                    record.timestamp.to_string(),
                    prev.timestamp.to_string(),
                ));
            }
        }
        records.push(record);
    }
    Ok(MarketSeries { records, dst })
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() || s == "-" {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Accepts ISO-8601 local timestamps with or without seconds, with `T` or a
/// space separator. A trailing UTC offset is accepted and discarded; the
/// wall-clock part is kept as market local time.
pub(crate) fn parse_timestamp(raw: &str) -> Result<NaiveDateTime> {
    let s = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.naive_local());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt);
        }
    }
    Err(Error::BadTimestamp(raw.to_string()))
}

/// Writes a series back out with the default column names.
pub fn write_series<W: Write>(series: &MarketSeries, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["timestamp", "price", "load_forecast", "renewable_forecast"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &series.records {
        wtr.write_record([
            r.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            fmt(r.price),
            fmt(r.load_forecast),
            fmt(r.renewable_forecast),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<series output>", e))?;
    Ok(())
}

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::ingest::{HourlyRecord, MarketSeries};
use crate::error::{Error, Result};
use crate::HOURS;

/// Daylight-saving convention of the market's local clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DstRule {
    /// Central European rule (Europe/Berlin): 02:00 is skipped on the last
    /// Sunday of March and repeated on the last Sunday of October.
    #[default]
    EuCentral,
    /// No clock changes.
    None,
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let first_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month");
    let mut d = first_next.pred_opt().expect("valid date");
    while d.weekday() != Weekday::Sun {
        d = d.pred_opt().expect("valid date");
    }
    d
}

impl DstRule {
    /// Local hour skipped on `date`, if any.
    pub fn spring_gap(&self, date: NaiveDate) -> Option<u32> {
        match self {
            DstRule::EuCentral if date == last_sunday(date.year(), 3) => Some(2),
            _ => None,
        }
    }

    /// Local hour repeated on `date`, if any.
    pub fn fall_back(&self, date: NaiveDate) -> Option<u32> {
        match self {
            DstRule::EuCentral if date == last_sunday(date.year(), 10) => Some(2),
            _ => None,
        }
    }

    pub fn is_fall_back_hour(&self, ts: NaiveDateTime) -> bool {
        self.fall_back(ts.date()) == Some(ts.hour())
    }
}

fn mean2(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(0.5 * (a? + b?))
}

fn average(a: &HourlyRecord, b: &HourlyRecord, timestamp: NaiveDateTime) -> HourlyRecord {
    HourlyRecord {
        timestamp,
        price: mean2(a.price, b.price),
        load_forecast: mean2(a.load_forecast, b.load_forecast),
        renewable_forecast: mean2(a.renewable_forecast, b.renewable_forecast),
    }
}

fn gap(timestamp: NaiveDateTime) -> HourlyRecord {
    HourlyRecord {
        timestamp,
        price: None,
        load_forecast: None,
        renewable_forecast: None,
    }
}

/// Repairs daylight-saving anomalies so every retained day has exactly 24
/// hourly records.
///
/// The skipped spring hour becomes the mean of its neighbours and the
/// repeated autumn hour becomes the mean of its two values. Hours missing
/// for any other reason are filled with gap records.
pub fn normalize_clock(series: &MarketSeries) -> Result<MarketSeries> {
    let mut days: BTreeMap<NaiveDate, Vec<Vec<HourlyRecord>>> = BTreeMap::new();
    for r in &series.records {
        let slots = days
            .entry(r.timestamp.date())
            .or_insert_with(|| vec![Vec::new(); HOURS]);
        slots[r.timestamp.hour() as usize].push(*r);
    }

    let mut out = Vec::with_capacity(days.len() * HOURS);
    for (date, slots) in days {
        let ts = |h: u32| date.and_time(NaiveTime::from_hms_opt(h, 0, 0).expect("hour < 24"));
        let duplicated: Vec<usize> = (0..HOURS).filter(|&h| slots[h].len() > 1).collect();
        if !duplicated.is_empty() {
            let allowed = series.dst.fall_back(date);
            let ok = duplicated.len() == 1
                && slots[duplicated[0]].len() == 2
                && allowed == Some(duplicated[0] as u32);
            if !ok {
                if allowed.is_some() {
                    return Err(Error::AmbiguousFallBack(date.to_string()));
                }
                return Err(Error::DuplicateTimestamp(ts(duplicated[0] as u32).to_string()));
            }
        }
        let spring = series.dst.spring_gap(date);
        let mut day: Vec<HourlyRecord> = Vec::with_capacity(HOURS);
        for h in 0..HOURS {
            let rec = match slots[h].as_slice() {
                [single] => *single,
                [a, b] => average(a, b, ts(h as u32)),
                [] if spring == Some(h as u32) && h > 0 && h + 1 < HOURS => {
                    match (slots[h - 1].first(), slots[h + 1].first()) {
                        (Some(prev), Some(next)) => average(prev, next, ts(h as u32)),
                        _ => gap(ts(h as u32)),
                    }
                }
                _ => gap(ts(h as u32)),
            };
            day.push(rec);
        }
        out.extend(day);
    }
    Ok(MarketSeries {
        records: out,
        dst: series.dst,
    })
}

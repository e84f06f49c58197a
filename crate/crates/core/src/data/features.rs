use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use super::ingest::MarketSeries;
use crate::error::{Error, Result};
use crate::{HOURS, NUM_FEATURES};

/// Day lags of the price block, in feature order.
pub const FEATURE_LAGS: [i64; 4] = [1, 2, 3, 7];

const LOAD_OFFSET: usize = 96;
const RENEWABLE_OFFSET: usize = 120;
const WEEKDAY_OFFSET: usize = 144;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One delivery day: 151 inputs and the 24 hourly prices to predict.
///
/// Feature layout: prices of d-1, d-2, d-3 and d-7 (24 each), the day's
/// load forecasts (24), renewable forecasts (24), weekday dummies Mon..Sun.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRow {
    pub date: NaiveDate,
    pub features: Vec<f64>,
    pub targets: [f64; HOURS],
    pub split: Option<Split>,
}

impl DailyRow {
    /// Price of day `date - lag` at `hour`, for `lag` in [`FEATURE_LAGS`].
    pub fn lagged_price(&self, lag: i64, hour: usize) -> Option<f64> {
        let block = FEATURE_LAGS.iter().position(|&l| l == lag)?;
        Some(self.features[block * HOURS + hour])
    }

    pub fn load(&self, hour: usize) -> f64 {
        self.features[LOAD_OFFSET + hour]
    }

    pub fn renewable(&self, hour: usize) -> f64 {
        self.features[RENEWABLE_OFFSET + hour]
    }

    pub fn weekday_dummies(&self) -> &[f64] {
        &self.features[WEEKDAY_OFFSET..WEEKDAY_OFFSET + 7]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl SplitRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            if r.start > r.end {
                return Err(Error::BadSplit(format!("{name} range ends before it starts")));
            }
        }
        if self.train.end >= self.validation.start {
            return Err(Error::BadSplit("train must end before validation starts".into()));
        }
        if self.validation.end >= self.test.start {
            return Err(Error::BadSplit("validation must end before test starts".into()));
        }
        Ok(())
    }

    pub fn label(&self, d: NaiveDate) -> Option<Split> {
        if self.train.contains(d) {
            Some(Split::Train)
        } else if self.validation.contains(d) {
            Some(Split::Validation)
        } else if self.test.contains(d) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureDataset {
    pub rows: Vec<DailyRow>,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Position of the row for `date`.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.rows.binary_search_by_key(&date, |r| r.date).ok()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&DailyRow> {
        self.index_of(date).map(|i| &self.rows[i])
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &DailyRow> {
        self.rows.iter().filter(move |r| r.split == Some(split))
    }

    pub fn split_dates(&self, split: Split) -> Vec<NaiveDate> {
        self.split_rows(split).map(|r| r.date).collect()
    }

    /// Labels every row; rows outside all three ranges are dropped.
    pub fn split_by_dates(&self, ranges: &SplitRanges) -> Result<FeatureDataset> {
        ranges.validate()?;
        let rows = self
            .rows
            .iter()
            .filter_map(|r| {
                ranges.label(r.date).map(|s| DailyRow {
                    split: Some(s),
                    ..r.clone()
                })
            })
            .collect();
        Ok(FeatureDataset { rows })
    }
}

#[derive(Clone, Copy)]
struct DayValues {
    price: [Option<f64>; HOURS],
    load: [Option<f64>; HOURS],
    renewable: [Option<f64>; HOURS],
}

fn complete(v: &[Option<f64>; HOURS]) -> Option<[f64; HOURS]> {
    let mut out = [0.0; HOURS];
    for (o, x) in out.iter_mut().zip(v) {
        *o = (*x)?;
    }
    Some(out)
}

/// Builds the daily design matrix from a clock-normalised series.
///
/// A day is emitted only when its own prices and exogenous forecasts and the
/// prices of all lag days are complete.
pub fn build_features(series: &MarketSeries) -> Result<FeatureDataset> {
    let mut days: BTreeMap<NaiveDate, DayValues> = BTreeMap::new();
    for r in &series.records {
        let e = days.entry(r.timestamp.date()).or_insert(DayValues {
            price: [None; HOURS],
            load: [None; HOURS],
            renewable: [None; HOURS],
        });
        let h = r.timestamp.hour() as usize;
        e.price[h] = r.price;
        e.load[h] = r.load_forecast;
        e.renewable[h] = r.renewable_forecast;
    }
    let need = *FEATURE_LAGS.iter().max().expect("non-empty") as usize + 1;
    let span = match (days.keys().next(), days.keys().next_back()) {
        (Some(a), Some(b)) => (*b - *a).num_days() as usize + 1,
        _ => 0,
    };
    if span < need {
        return Err(Error::SeriesTooShort { need, have: span });
    }

    let prices: BTreeMap<NaiveDate, Option<[f64; HOURS]>> =
        days.iter().map(|(d, v)| (*d, complete(&v.price))).collect();

    let mut rows = Vec::new();
    for (&date, values) in &days {
        let Some(targets) = prices.get(&date).copied().flatten() else {
            continue;
        };
        let (Some(load), Some(renewable)) = (complete(&values.load), complete(&values.renewable))
        else {
            continue;
        };
        let mut features = Vec::with_capacity(NUM_FEATURES);
        let mut ok = true;
        for lag in FEATURE_LAGS {
            match prices.get(&(date - Duration::days(lag))).copied().flatten() {
                Some(p) => features.extend_from_slice(&p),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        features.extend_from_slice(&load);
        features.extend_from_slice(&renewable);
        let wd = date.weekday().num_days_from_monday() as usize;
        features.extend((0..7).map(|i| if i == wd { 1.0 } else { 0.0 }));
        debug_assert_eq!(features.len(), NUM_FEATURES);
        rows.push(DailyRow {
            date,
            features,
            targets,
            split: None,
        });
    }
    Ok(FeatureDataset { rows })
}

fn feature_header() -> Vec<String> {
    let mut h = vec!["date".to_string()];
    h.extend((0..NUM_FEATURES).map(|i| format!("f{i:03}")));
    h.extend((0..HOURS).map(|i| format!("t{i:02}")));
    h
}

/// Writes `date, f000..f150, t00..t23` rows. Floats use the shortest
/// round-tripping representation, so output is byte-stable.
pub fn write_dataset<W: Write>(ds: &FeatureDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(feature_header())?;
    for r in &ds.rows {
        let mut rec = Vec::with_capacity(1 + NUM_FEATURES + HOURS);
        rec.push(r.date.to_string());
        rec.extend(r.features.iter().map(|v| v.to_string()));
        rec.extend(r.targets.iter().map(|v| v.to_string()));
        wtr.write_record(rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset output>", e))?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<FeatureDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != feature_header() {
        return Err(Error::Invalid("dataset header does not match the fixed layout".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|_| Error::BadTimestamp(rec[0].to_string()))?;
        let nums: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("dataset row {date}: {e}")))?;
        let mut targets = [0.0; HOURS];
        targets.copy_from_slice(&nums[NUM_FEATURES..]);
        rows.push(DailyRow {
            date,
            features: nums[..NUM_FEATURES].to_vec(),
            targets,
            split: None,
        });
    }
    Ok(FeatureDataset { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DstRule, HourlyRecord};
    use chrono::NaiveTime;

    fn series(days: i64, start: NaiveDate, hole: Option<(i64, usize)>) -> MarketSeries {
        let mut records = Vec::new();
        for d in 0..days {
            let date = start + Duration::days(d);
            for h in 0..HOURS {
                let missing = hole == Some((d, h));
                records.push(HourlyRecord {
                    timestamp: date.and_time(NaiveTime::from_hms_opt(h as u32, 0, 0).unwrap()),
                    price: if missing { None } else { Some(d as f64 * 100.0 + h as f64) },
                    load_forecast: Some(1000.0 + h as f64),
                    renewable_forecast: Some(500.0 + d as f64),
                });
            }
        }
        MarketSeries {
            records,
            dst: DstRule::None,
        }
    }

    // 2024-01-01 is a Monday.
    fn monday() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
    }

    #[test]
    fn ten_days_give_three_rows() {
        let ds = build_features(&series(10, monday(), None)).unwrap();
        assert_eq!(ds.len(), 3);
        for r in &ds.rows {
            assert_eq!(r.features.len(), NUM_FEATURES);
            assert_eq!(r.weekday_dummies().iter().sum::<f64>(), 1.0);
        }
        let first = &ds.rows[0];
        assert_eq!(first.date, monday() + Duration::days(7));
        assert_eq!(first.lagged_price(1, 5), Some(605.0));
        assert_eq!(first.lagged_price(7, 5), Some(5.0));
        assert_eq!(first.targets[3], 703.0);
        assert_eq!(first.load(2), 1002.0);
        assert_eq!(first.renewable(0), 507.0);
    }

    #[test]
    fn monday_dummy() {
        let ds = build_features(&series(10, monday(), None)).unwrap();
        // day index 7 is again a Monday
        assert_eq!(ds.rows[0].weekday_dummies(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ds.rows[1].weekday_dummies(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_in_lag_week_drops_row() {
        // a hole on day 1 removes day 8 (its d-7) and day 2,3,4 style lags
        let ds = build_features(&series(10, monday(), Some((1, 11)))).unwrap();
        let dates: Vec<_> = ds.rows.iter().map(|r| r.date).collect();
        assert!(!dates.contains(&(monday() + Duration::days(8))));
        assert_eq!(dates, vec![monday() + Duration::days(7), monday() + Duration::days(9)]);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            build_features(&series(7, monday(), None)),
            Err(Error::SeriesTooShort { need: 8, have: 7 })
        ));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let s = series(20, monday(), None);
        let a = build_features(&s).unwrap();
        let b = build_features(&s).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_dataset(&a, &mut ba).unwrap();
        write_dataset(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(read_dataset(ba.as_slice()).unwrap(), a);
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn split_ranges() {
        let s = series(30, monday(), None);
        let ds = build_features(&s).unwrap();
        let ranges = SplitRanges {
            train: DateRange::new(d(2024, 1, 9), d(2024, 1, 18)),
            validation: DateRange::new(d(2024, 1, 19), d(2024, 1, 24)),
            test: DateRange::new(d(2024, 1, 25), d(2024, 1, 30)),
        };
        let split = ds.split_by_dates(&ranges).unwrap();
        // 2024-01-08 is before train start and is excluded
        assert!(split.get(d(2024, 1, 8)).is_none());
        assert_eq!(split.split_rows(Split::Train).count(), 10);
        assert_eq!(split.split_rows(Split::Validation).count(), 6);
        assert_eq!(split.split_rows(Split::Test).count(), 6);
        assert!(split.rows.iter().all(|r| r.split.is_some()));

        let reversed = SplitRanges {
            train: ranges.test,
            validation: ranges.validation,
            test: ranges.train,
        };
        assert!(matches!(ds.split_by_dates(&reversed), Err(Error::BadSplit(_))));
    }
}

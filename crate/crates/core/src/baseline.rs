//! Naive weekday-rule forecasts and Gaussian historical simulation around
//! them.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, Split};
pub use crate::distribution::DailyPrices;
use crate::distribution::{grid_prob, norm_ppf, PointDay, QuantileDay, QuantileGrid, NUM_QUANTILES};
use crate::error::{Error, Result};
use crate::HOURS;

/// Minimum number of errors for a historical-simulation fit.
pub const MIN_HS_ERRORS: usize = 30;

/// Collects every fully known day from a feature dataset: the target
/// prices of each row plus the lagged prices carried in its features.
pub fn daily_prices(ds: &FeatureDataset) -> DailyPrices {
    let mut out = DailyPrices::new();
    for row in &ds.rows {
        for lag in crate::data::FEATURE_LAGS {
            let date = row.date - Days::new(lag as u64);
            let p: [f64; HOURS] =
                std::array::from_fn(|h| row.lagged_price(lag, h).expect("known lag"));
            out.entry(date).or_insert(p);
        }
    }
    for row in &ds.rows {
        out.insert(row.date, row.targets);
    }
    out
}

/// Reference day of the naive rule: the previous day on Tuesday to Friday,
/// one week back on Monday and weekends.
pub fn naive_reference(day: NaiveDate) -> NaiveDate {
    match day.weekday() {
        Weekday::Tue | Weekday::Wed | Weekday::Thu | Weekday::Fri => day - Days::new(1),
        Weekday::Mon | Weekday::Sat | Weekday::Sun => day - Days::new(7),
    }
}

pub fn naive_forecast(prices: &DailyPrices, day: NaiveDate) -> Result<PointDay> {
    let reference = naive_reference(day);
    let values = prices
        .get(&reference)
        .ok_or_else(|| Error::MissingData(format!("reference day {reference} for naive forecast of {day}")))?;
    Ok(PointDay {
        date: day,
        values: *values,
    })
}

/// Gaussian fitted to point-forecast errors (actual minus forecast).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoricalSimulation {
    pub error_mean: f64,
    pub error_std: f64,
    pub source_split: Split,
}

pub fn fit_hs(errors: &[f64], source_split: Split) -> Result<HistoricalSimulation> {
    if errors.len() < MIN_HS_ERRORS {
        return Err(Error::SeriesTooShort {
            need: MIN_HS_ERRORS,
            have: errors.len(),
        });
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("historical-simulation errors"));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::Degenerate("historical-simulation errors have zero variance".into()));
    }
    Ok(HistoricalSimulation {
        error_mean: mean,
        error_std: std,
        source_split,
    })
}

/// `ŷ + mean + std·Φ⁻¹(q/100)`.
pub fn hs_quantiles(point: f64, hs: &HistoricalSimulation) -> QuantileGrid {
    let mut g = [0.0; NUM_QUANTILES];
    for (i, slot) in g.iter_mut().enumerate() {
        *slot = point + hs.error_mean + hs.error_std * norm_ppf(grid_prob(i));
    }
    g
}

/// One pooled distribution, or one per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsModel {
    pub per_hour: bool,
    pub hours: Vec<HistoricalSimulation>,
}

impl HsModel {
    pub fn get(&self, hour: usize) -> &HistoricalSimulation {
        if self.per_hour {
            &self.hours[hour]
        } else {
            &self.hours[0]
        }
    }

    pub fn predict(&self, point: &PointDay) -> QuantileDay {
        let mut hours = [[0.0; NUM_QUANTILES]; HOURS];
        for (h, grid) in hours.iter_mut().enumerate() {
            *grid = hs_quantiles(point.values[h], self.get(h));
        }
        QuantileDay {
            date: point.date,
            hours,
        }
    }
}

/// Fits historical simulation on naive-forecast errors over the days of
/// `split`. Days whose reference day is unknown are skipped.
pub fn fit_naive_hs(ds: &FeatureDataset, split: Split, per_hour: bool) -> Result<HsModel> {
    let prices = daily_prices(ds);
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); HOURS];
    for row in ds.split_rows(split) {
        let Ok(f) = naive_forecast(&prices, row.date) else {
            continue;
        };
        for h in 0..HOURS {
            errors[h].push(row.targets[h] - f.values[h]);
        }
    }
    let hours = if per_hour {
        errors
            .iter()
            .map(|e| fit_hs(e, split))
            .collect::<Result<Vec<_>>>()?
    } else {
        let pooled: Vec<f64> = errors.concat();
        vec![fit_hs(&pooled, split)?]
    };
    Ok(HsModel { per_hour, hours })
}

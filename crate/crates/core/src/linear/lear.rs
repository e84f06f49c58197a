use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::lasso::{GramSystem, LassoModel, LassoOptions};
use crate::data::{DailyRow, FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::{HOURS, NUM_FEATURES};

/// Calibration windows (days) of the four LEAR members.
pub const FULL_WINDOWS: [usize; 4] = [56, 84, 1092, 1461];

#[derive(Debug, Clone, PartialEq)]
pub struct LearConfig {
    pub windows: Vec<usize>,
    pub lambda: f64,
    pub lasso: LassoOptions,
}

impl Default for LearConfig {
    fn default() -> Self {
        Self {
            windows: FULL_WINDOWS.to_vec(),
            lambda: 1e-3,
            lasso: LassoOptions::default(),
        }
    }
}

/// Member forecasts (one per window) and their average for one day, in the
/// units of the dataset's targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LearDayForecast {
    pub date: NaiveDate,
    pub windows: Vec<usize>,
    pub members: Vec<[f64; HOURS]>,
    pub mean: [f64; HOURS],
}

/// Rows dated in `[as_of - window_days, as_of)`.
fn window_rows(ds: &FeatureDataset, as_of: NaiveDate, window_days: usize) -> Result<Vec<&DailyRow>> {
    let start = as_of - Duration::days(window_days as i64);
    let first = ds.rows.first().ok_or(Error::Empty("dataset"))?;
    if first.date > start {
        return Err(Error::InsufficientHistory {
            need: window_days,
            as_of: as_of.to_string(),
            first: first.date.to_string(),
        });
    }
    let lo = ds.rows.partition_point(|r| r.date < start);
    let hi = ds.rows.partition_point(|r| r.date < as_of);
    let rows: Vec<&DailyRow> = ds.rows[lo..hi].iter().collect();
    if rows.is_empty() {
        return Err(Error::InsufficientHistory {
            need: window_days,
            as_of: as_of.to_string(),
            first: first.date.to_string(),
        });
    }
    Ok(rows)
}

fn gram_for(rows: &[&DailyRow], opts: &LassoOptions) -> Result<GramSystem> {
    let x: Vec<&[f64]> = rows.iter().map(|r| r.features.as_slice()).collect();
    GramSystem::new(&x, opts.standardize)
}

/// LASSO for delivery hour `hour` on the `window_days` calendar days before
/// `as_of`.
pub fn fit_lear_hour(
    ds: &FeatureDataset,
    hour: usize,
    window_days: usize,
    as_of: NaiveDate,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoModel> {
    if hour >= HOURS {
        return Err(Error::Invalid(format!("hour {hour} out of range")));
    }
    let rows = window_rows(ds, as_of, window_days)?;
    let sys = gram_for(&rows, opts)?;
    let y: Vec<f64> = rows.iter().map(|r| r.targets[hour]).collect();
    sys.fit(&y, lambda, opts, hour)
}

/// Refits every (window, hour) model on data strictly before `day` and
/// averages the member predictions for `day`.
pub fn lear_point_forecast(ds: &FeatureDataset, day: NaiveDate, cfg: &LearConfig) -> Result<LearDayForecast> {
    lear_day(ds, day, cfg, &mut Vec::new())
}

/// One day of [`lear_point_forecast`]; `warm[w][h]` holds the previous
/// solution of window `w` and hour `h` and is updated in place.
fn lear_day(
    ds: &FeatureDataset,
    day: NaiveDate,
    cfg: &LearConfig,
    warm: &mut Vec<Vec<Option<Vec<f64>>>>,
) -> Result<LearDayForecast> {
    if cfg.windows.is_empty() {
        return Err(Error::Empty("LEAR window list"));
    }
    let target = ds
        .get(day)
        .ok_or_else(|| Error::MissingData(format!("feature row for {day}")))?;
    warm.resize_with(cfg.windows.len(), || vec![None; HOURS]);
    let mut members = Vec::with_capacity(cfg.windows.len());
    for (wi, &w) in cfg.windows.iter().enumerate() {
        let rows = window_rows(ds, day, w)?;
        let sys = gram_for(&rows, &cfg.lasso)?;
        let mut pred = [0.0; HOURS];
        for (h, p) in pred.iter_mut().enumerate() {
            let y: Vec<f64> = rows.iter().map(|r| r.targets[h]).collect();
            let started = warm[wi][h]
                .as_deref()
                .and_then(|b| sys.solve(&y, cfg.lambda, &cfg.lasso, Some(b)).ok());
            let fit = match started {
                Some(f) => f,
                None => sys.solve_path(&y, cfg.lambda, &cfg.lasso)?,
            };
            *p = sys.unscale(&fit, &y, cfg.lambda, h).predict(&target.features);
            warm[wi][h] = Some(fit.scaled);
        }
        members.push(pred);
    }
    let m = members.len() as f64;
    let mut mean = [0.0; HOURS];
    for (h, v) in mean.iter_mut().enumerate() {
        *v = members.iter().map(|p| p[h]).sum::<f64>() / m;
    }
    Ok(LearDayForecast {
        date: day,
        windows: cfg.windows.clone(),
        members,
        mean,
    })
}

/// Days per block of [`lear_rolling`]; each block starts cold and warm
/// starts every later day from the day before.
const ROLLING_BLOCK: usize = 28;

/// Rolling-window forecasts for each of `days`, refitting every day.
/// Blocks of days run in parallel; the result does not depend on the
/// number of threads.
pub fn lear_rolling(ds: &FeatureDataset, days: &[NaiveDate], cfg: &LearConfig) -> Result<Vec<LearDayForecast>> {
    let blocks: Vec<Vec<LearDayForecast>> = days
        .par_chunks(ROLLING_BLOCK)
        .map(|block| {
            let mut warm = Vec::new();
            block.iter().map(|d| lear_day(ds, *d, cfg, &mut warm)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub lambda: f64,
    pub mae: f64,
    /// Every evaluated (penalty, validation MAE) pair in sampling order.
    pub trials: Vec<(f64, f64)>,
}

/// Seeded log-uniform random search for the penalty, scored by validation
/// MAE of the `window_days` model. `hour_scale` converts target units to
/// prices (per-hour standard deviations for a standardised dataset).
pub fn tune_lambda(
    ds: &FeatureDataset,
    range: (f64, f64),
    trials: usize,
    seed: u64,
    window_days: usize,
    opts: &LassoOptions,
    hour_scale: Option<&[f64; HOURS]>,
) -> Result<TuneResult> {
    let (lo, hi) = range;
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::Invalid(format!("empty penalty range [{lo}, {hi}]")));
    }
    if trials == 0 {
        return Err(Error::Invalid("at least one trial is required".into()));
    }
    let val_days = ds.split_dates(Split::Validation);
    if val_days.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambdas: Vec<f64> = (0..trials)
        .map(|_| {
            if lo == hi {
                lo
            } else {
                (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
            }
        })
        .collect();
    // solve along a descending path for warm starts
    let mut order: Vec<usize> = (0..trials).collect();
    order.sort_by(|a, b| lambdas[*b].total_cmp(&lambdas[*a]));

    let per_day: Vec<Vec<f64>> = val_days
        .par_iter()
        .map(|&day| -> Result<Vec<f64>> {
            let rows = window_rows(ds, day, window_days)?;
            let sys = gram_for(&rows, opts)?;
            let target = ds.get(day).expect("validation day present");
            let mut err = vec![0.0; trials];
            for h in 0..HOURS {
                let y: Vec<f64> = rows.iter().map(|r| r.targets[h]).collect();
                let scale = hour_scale.map_or(1.0, |s| s[h]);
                let mut from = sys.lambda_max(&y);
                let mut warm: Option<Vec<f64>> = None;
                for &t in &order {
                    let fit = match sys.solve_path_from(&y, from, warm.as_deref(), lambdas[t], opts) {
                        Ok(f) => f,
                        Err(_) => sys.solve_path(&y, lambdas[t], opts)?,
                    };
                    from = lambdas[t];
                    let m = sys.unscale(&fit, &y, lambdas[t], h);
                    err[t] += scale * (m.predict(&target.features) - target.targets[h]).abs();
                    warm = Some(fit.scaled);
                }
            }
            Ok(err)
        })
        .collect::<Result<_>>()?;

    let cells = (val_days.len() * HOURS) as f64;
    let maes: Vec<f64> = (0..trials)
        .map(|t| per_day.iter().map(|e| e[t]).sum::<f64>() / cells)
        .collect();
    let best = (0..trials)
        .min_by(|a, b| maes[*a].total_cmp(&maes[*b]).then(a.cmp(b)))
        .expect("trials > 0");
    Ok(TuneResult {
        lambda: lambdas[best],
        mae: maes[best],
        trials: lambdas.into_iter().zip(maes).collect(),
    })
}

/// One serialised hourly model of one member window.
#[derive(Debug, Clone, PartialEq)]
pub struct LearModelRecord {
    pub horizon: usize,
    pub model: LassoModel,
}

/// Fits and returns all (window, hour) models as of `day`.
pub fn fit_lear_models(ds: &FeatureDataset, day: NaiveDate, cfg: &LearConfig) -> Result<Vec<LearModelRecord>> {
    let mut out = Vec::new();
    for &w in &cfg.windows {
        let rows = window_rows(ds, day, w)?;
        let sys = gram_for(&rows, &cfg.lasso)?;
        for h in 0..HOURS {
            let y: Vec<f64> = rows.iter().map(|r| r.targets[h]).collect();
            out.push(LearModelRecord {
                horizon: w,
                model: sys.fit(&y, cfg.lambda, &cfg.lasso, h)?,
            });
        }
    }
    Ok(out)
}

/// CSV layout: `hour, horizon, intercept, c000..c150, lambda`.
pub fn write_lear_models<W: Write>(models: &[LearModelRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["hour".to_string(), "horizon".into(), "intercept".into()];
    header.extend((0..NUM_FEATURES).map(|i| format!("c{i:03}")));
    header.push("lambda".into());
    wtr.write_record(&header)?;
    for rec in models {
        let mut row = vec![
            rec.model.hour.to_string(),
            rec.horizon.to_string(),
            rec.model.intercept.to_string(),
        ];
        row.extend(rec.model.coefficients.iter().map(|c| c.to_string()));
        row.push(rec.model.penalty.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<lear output>", e))?;
    Ok(())
}

pub fn read_lear_models<R: Read>(reader: R) -> Result<Vec<LearModelRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != NUM_FEATURES + 4 {
            return Err(Error::Invalid(format!("LEAR model row has {} fields", rec.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Invalid(format!("LEAR model value `{s}`: {e}")))
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Invalid(format!("LEAR model index `{s}`: {e}")))
        };
        let coefficients = (3..3 + NUM_FEATURES)
            .map(|i| num(&rec[i]))
            .collect::<Result<Vec<_>>>()?;
        out.push(LearModelRecord {
            horizon: int(&rec[1])?,
            model: LassoModel {
                hour: int(&rec[0])?,
                intercept: num(&rec[2])?,
                coefficients,
                penalty: num(&rec[NUM_FEATURES + 3])?,
            },
        });
    }
    Ok(out)
}

//! Point and probabilistic forecast evaluation and the Diebold-Mariano
//! test on daily losses.

use std::io::Write;

use crate::distribution::{norm_cdf, DailyPrices, PointDay, QuantileDay, QuantileGrid, NUM_QUANTILES};
use crate::error::{Error, Result};
use crate::HOURS;

/// Interval levels in percent: 2, 4, ..., 98.
pub fn levels() -> impl Iterator<Item = u32> + Clone {
    (1..=49).map(|i| 2 * i)
}

/// Central interval `(L, U)` at `level` percent from a percentile grid.
pub fn interval(grid: &QuantileGrid, level: u32) -> Result<(f64, f64)> {
    if level == 0 || level >= 100 || !level.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "interval level {level}% is not on the 2:98:2 grid"
        )));
    }
    let lo = ((100 - level) / 2) as usize;
    Ok((grid[lo - 1], grid[100 - lo - 1]))
}

fn actual_for(actual: &DailyPrices, date: chrono::NaiveDate) -> Result<&[f64; HOURS]> {
    actual
        .get(&date)
        .ok_or_else(|| Error::MissingData(format!("realised prices for {date}")))
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn mae_rmse(pred: &[PointDay], actual: &DailyPrices) -> Result<(f64, f64)> {
    if pred.is_empty() {
        return Err(Error::Empty("point forecast"));
    }
    let (mut abs, mut sq) = (0.0, 0.0);
    for p in pred {
        let y = actual_for(actual, p.date)?;
        check_finite(&p.values, "point forecast")?;
        for h in 0..HOURS {
            let e = p.values[h] - y[h];
            abs += e.abs();
            sq += e * e;
        }
    }
    let n = (pred.len() * HOURS) as f64;
    Ok((abs / n, (sq / n).sqrt()))
}

/// Percentage of realised prices inside the closed central interval.
pub fn picp(qf: &[QuantileDay], actual: &DailyPrices, level: u32) -> Result<f64> {
    if qf.is_empty() {
        return Err(Error::Empty("quantile forecast"));
    }
    let mut inside = 0usize;
    for day in qf {
        let y = actual_for(actual, day.date)?;
        for h in 0..HOURS {
            let (l, u) = interval(&day.hours[h], level)?;
            if y[h] >= l && y[h] <= u {
                inside += 1;
            }
        }
    }
    Ok(100.0 * inside as f64 / (qf.len() * HOURS) as f64)
}

/// Mean interval width.
pub fn mpiw(qf: &[QuantileDay], level: u32) -> Result<f64> {
    if qf.is_empty() {
        return Err(Error::Empty("quantile forecast"));
    }
    let mut total = 0.0;
    for day in qf {
        for grid in &day.hours {
            let (l, u) = interval(grid, level)?;
            total += u - l;
        }
    }
    Ok(total / (qf.len() * HOURS) as f64)
}

/// Mean absolute deviation of PICP from nominal coverage over 2:98:2.
pub fn maace(picps: &[(u32, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for level in levels() {
        let p = picps
            .iter()
            .find(|(l, _)| *l == level)
            .ok_or_else(|| Error::MissingData(format!("PICP at level {level}%")))?;
        total += (p.1 - level as f64).abs();
    }
    Ok(total / 49.0)
}

/// Pinball score of quantile forecast `q` at probability `tau`.
#[inline]
fn pinball_score(q: f64, y: f64, tau: f64) -> f64 {
    if y < q {
        (1.0 - tau) * (q - y)
    } else {
        tau * (y - q)
    }
}

/// Average pinball loss over the 99 percentiles for one cell.
pub fn cell_crps(grid: &QuantileGrid, y: f64) -> Result<f64> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Invalid("quantile grid is not monotone".into()));
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &q)| pinball_score(q, y, (i + 1) as f64 / 100.0))
        .sum::<f64>()
        / NUM_QUANTILES as f64)
}

/// Mean CRPS over the 24 hours of each day.
pub fn daily_crps(qf: &[QuantileDay], actual: &DailyPrices) -> Result<Vec<f64>> {
    qf.iter()
        .map(|day| {
            let y = actual_for(actual, day.date)?;
            let mut s = 0.0;
            for h in 0..HOURS {
                s += cell_crps(&day.hours[h], y[h])?;
            }
            Ok(s / HOURS as f64)
        })
        .collect()
}

pub fn crps_pinball(qf: &[QuantileDay], actual: &DailyPrices) -> Result<f64> {
    if qf.is_empty() {
        return Err(Error::Empty("quantile forecast"));
    }
    let d = daily_crps(qf, actual)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// All headline metrics of one forecaster over one period. The
/// probabilistic fields are empty for point-only forecasters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub crps: Option<f64>,
    pub maace: Option<f64>,
    /// `(level %, PICP %)` over 2:98:2.
    pub picp: Vec<(u32, f64)>,
    /// `(level %, MPIW)` over 2:98:2.
    pub mpiw: Vec<(u32, f64)>,
}

pub fn evaluate(point: &[PointDay], qf: &[QuantileDay], actual: &DailyPrices) -> Result<MetricsReport> {
    let (mae, rmse) = mae_rmse(point, actual)?;
    let crps = crps_pinball(qf, actual)?;
    let picp = levels()
        .map(|l| Ok((l, picp(qf, actual, l)?)))
        .collect::<Result<Vec<_>>>()?;
    let mpiw = levels()
        .map(|l| Ok((l, mpiw(qf, l)?)))
        .collect::<Result<Vec<_>>>()?;
    let maace = maace(&picp)?;
    Ok(MetricsReport {
        mae,
        rmse,
        crps: Some(crps),
        maace: Some(maace),
        picp,
        mpiw,
    })
}

pub fn evaluate_point(point: &[PointDay], actual: &DailyPrices) -> Result<MetricsReport> {
    let (mae, rmse) = mae_rmse(point, actual)?;
    Ok(MetricsReport {
        mae,
        rmse,
        crps: None,
        maace: None,
        picp: Vec::new(),
        mpiw: Vec::new(),
    })
}

/// Outcome of a Diebold-Mariano comparison of losses `a - b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_diff: f64,
    /// Zero long-run variance with a nonzero mean difference.
    pub degenerate: bool,
}

/// Newey-West long-run variance with Bartlett weights.
pub fn newey_west(d: &[f64], lag: usize) -> f64 {
    let t = d.len() as f64;
    let mean = d.iter().sum::<f64>() / t;
    let gamma = |k: usize| {
        d[k..]
            .iter()
            .zip(d)
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / t
    };
    let mut v = gamma(0);
    for k in 1..=lag.min(d.len() - 1) {
        v += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * gamma(k);
    }
    v
}

pub fn dm_test(loss_a: &[f64], loss_b: &[f64]) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::Invalid(format!(
            "loss series lengths differ: {} vs {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    if loss_a.len() < 2 {
        return Err(Error::SeriesTooShort {
            need: 2,
            have: loss_a.len(),
        });
    }
    check_finite(loss_a, "DM loss series")?;
    check_finite(loss_b, "DM loss series")?;
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let t = d.len() as f64;
    let mean = d.iter().sum::<f64>() / t;
    let lag = t.cbrt().floor() as usize;
    let var = newey_west(&d, lag).max(0.0) / t;
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var <= 1e-24 * scale.max(1e-300).powi(2) {
        if mean == 0.0 || mean.abs() <= 1e-15 * scale {
            return Ok(DmResult {
                statistic: 0.0,
                p_value: 1.0,
                mean_diff: 0.0,
                degenerate: false,
            });
        }
        return Ok(DmResult {
            statistic: mean.signum() * f64::INFINITY,
            p_value: 0.0,
            mean_diff: mean,
            degenerate: true,
        });
    }
    let statistic = mean / var.sqrt();
    Ok(DmResult {
        statistic,
        p_value: (2.0 * norm_cdf(-statistic.abs())).min(1.0),
        mean_diff: mean,
        degenerate: false,
    })
}

/// Pairwise DM statistics and p-values; entry `[i][j]` tests model `i`
/// against model `j` (positive statistic: `j` has lower loss). The
/// diagonal is empty.
pub struct DmMatrix {
    pub names: Vec<String>,
    pub statistic: Vec<Vec<Option<f64>>>,
    pub p_value: Vec<Vec<Option<f64>>>,
}

pub fn dm_matrix(names: &[String], losses: &[Vec<f64>]) -> Result<DmMatrix> {
    let n = names.len();
    if losses.len() != n {
        return Err(Error::Invalid("one loss series per model required".into()));
    }
    let mut statistic = vec![vec![None; n]; n];
    let mut p_value = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = dm_test(&losses[i], &losses[j])?;
                statistic[i][j] = Some(r.statistic);
                p_value[i][j] = Some(r.p_value);
            }
        }
    }
    Ok(DmMatrix {
        names: names.to_vec(),
        statistic,
        p_value,
    })
}

impl DmMatrix {
    /// Writes one matrix (`statistic` or `p_value`) as CSV.
    pub fn write_csv<W: Write>(&self, which: &[Vec<Option<f64>>], writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![String::from("model")];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for (i, row) in which.iter().enumerate() {
            let mut rec = vec![self.names[i].clone()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| format!("{x:.6}"))));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<dm output>", e))?;
        Ok(())
    }
}

/// Per-model metric mean and standard deviation across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub runs: usize,
    pub mae: (f64, f64),
    pub rmse: (f64, f64),
    pub crps: Option<(f64, f64)>,
    pub maace: Option<(f64, f64)>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    // identical values must report exactly zero spread
    if let Some(&first) = xs.first() {
        if xs.iter().all(|x| *x == first) {
            return (first, 0.0);
        }
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub fn summarize(model: &str, reports: &[MetricsReport]) -> Result<SummaryRow> {
    if reports.is_empty() {
        return Err(Error::Empty("metric reports"));
    }
    let col = |f: fn(&MetricsReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let opt = |f: fn(&MetricsReport) -> Option<f64>| {
        reports
            .iter()
            .map(f)
            .collect::<Option<Vec<_>>>()
            .map(|v| mean_std(&v))
    };
    Ok(SummaryRow {
        model: model.to_string(),
        runs: reports.len(),
        mae: col(|r| r.mae),
        rmse: col(|r| r.rmse),
        crps: opt(|r| r.crps),
        maace: opt(|r| r.maace),
    })
}

/// Results table: one row per model with mean and deviation columns.
pub fn write_summary<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "model", "runs", "mae", "mae_std", "rmse", "rmse_std", "crps", "crps_std", "maace", "maace_std",
    ])?;
    for r in rows {
        let f = |x: f64| format!("{x:.3}");
        let g = |x: Option<f64>| x.map_or(String::new(), f);
        wtr.write_record(&[
            r.model.clone(),
            r.runs.to_string(),
            f(r.mae.0),
            f(r.mae.1),
            f(r.rmse.0),
            f(r.rmse.1),
            g(r.crps.map(|c| c.0)),
            g(r.crps.map(|c| c.1)),
            g(r.maace.map(|c| c.0)),
            g(r.maace.map(|c| c.1)),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<summary output>", e))?;
    Ok(())
}

/// Level-indexed curve (`level, value`) for plotting.
pub fn write_curve<W: Write>(columns: &[(&str, &[(u32, f64)])], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["level".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    wtr.write_record(&header)?;
    for level in levels() {
        let mut rec = vec![level.to_string()];
        for (_, c) in columns {
            let v = c.iter().find(|(l, _)| *l == level).map(|p| p.1);
            rec.push(v.map_or(String::new(), |x| format!("{x:.6}")));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<curve output>", e))?;
    Ok(())
}

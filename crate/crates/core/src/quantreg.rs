//! Quantile regression averaging: per-hour, per-percentile linear quantile
//! regressions on the LEAR member forecasts.
//!
//! Each fit runs a majorize-minimize IRLS on the pinball loss with an
//! annealed smoothing floor, then polishes the result into an exact
//! linear-programming vertex by exchanging interpolated observations.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::distribution::{sort_grid, QuantileDay, QuantileGrid, NUM_QUANTILES};
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::linear::LearDayForecast;
use crate::HOURS;

/// Pinball (check) loss of residual `r = y - ŷ` at level `tau`.
#[inline]
pub fn pinball(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Intercept and slopes of one linear quantile regression.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl QuantileFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Total pinball loss on a sample.
    pub fn objective<R: AsRef<[f64]>>(&self, x: &[R], y: &[f64], tau: f64) -> f64 {
        x.iter()
            .zip(y)
            .map(|(r, yi)| pinball(yi - self.predict(r.as_ref()), tau))
            .sum()
    }
}

fn objective_of(beta: &[f64], rows: &[Vec<f64>], y: &[f64], tau: f64) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, yi)| pinball(yi - dot(beta, r), tau))
        .sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the `tau`-quantile regression of `y` on `x` with an intercept.
pub fn fit_quantile<R: AsRef<[f64]>>(x: &[R], y: &[f64], tau: f64) -> Result<QuantileFit> {
    let n = x.len();
    if n < 5 {
        return Err(Error::Invalid(format!("quantile regression needs >= 5 rows, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Invalid("x and y lengths differ".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Invalid(format!("quantile level {tau} outside (0, 1)")));
    }
    let k = x[0].as_ref().len();
    if x.iter().any(|r| r.as_ref().len() != k) {
        return Err(Error::Invalid("ragged regressor matrix".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("quantile regression input"));
    }
    for j in 0..k {
        let first = x[0].as_ref()[j];
        if x.iter().all(|r| r.as_ref()[j] == first) {
            return Err(Error::Degenerate(format!(
                "regressor column {j} is constant and collinear with the intercept"
            )));
        }
    }
    let d = k + 1;
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.as_ref().iter().copied()).collect())
        .collect();

    let beta = irls(&rows, y, tau, d);
    let beta = polish(&rows, y, tau, d, beta);
    Ok(QuantileFit {
        intercept: beta[0],
        weights: beta[1..].to_vec(),
    })
}

/// Majorize-minimize IRLS on the pinball loss written as
/// `|r|/2 + (tau - 1/2) r`, majorizing `|r|` by a quadratic at the current
/// residual with floor `eps`.
fn irls(rows: &[Vec<f64>], y: &[f64], tau: f64, d: usize) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let scale = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);

    // start from least squares
    let mut beta = weighted_step(rows, y, &vec![1.0; y.len()], 0.0, d).unwrap_or_else(|| {
        let mut b = vec![0.0; d];
        b[0] = mean;
        b
    });
    let lin = 0.5 * (tau - 0.5);
    let mut eps = 1e-2 * scale;
    while eps >= 1e-8 * scale {
        for _ in 0..100 {
            let w: Vec<f64> = rows
                .iter()
                .zip(y)
                .map(|(r, yi)| 1.0 / (4.0 * (yi - dot(&beta, r)).abs().max(eps)))
                .collect();
            let Some(next) = weighted_step(rows, y, &w, lin, d) else {
                break;
            };
            let change = next
                .iter()
                .zip(&beta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            beta = next;
            if change <= 1e-10 * scale {
                break;
            }
        }
        eps *= 0.1;
    }
    beta
}

/// Solves `XᵀWX β = XᵀWy + lin·Xᵀ1`.
fn weighted_step(rows: &[Vec<f64>], y: &[f64], w: &[f64], lin: f64, d: usize) -> Option<Vec<f64>> {
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for ((r, yi), wi) in rows.iter().zip(y).zip(w) {
        for j in 0..d {
            b[j] += r[j] * (wi * yi + lin);
            for k in 0..=j {
                a[j * d + k] += wi * r[j] * r[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            a[k * d + j] = a[j * d + k];
        }
    }
    solve_dense(&mut a, &mut b, d)?;
    Some(b)
}

fn interpolate(rows: &[Vec<f64>], y: &[f64], basis: &[usize], d: usize) -> Option<Vec<f64>> {
    let mut a = Vec::with_capacity(d * d);
    let mut b = Vec::with_capacity(d);
    for &i in basis {
        a.extend_from_slice(&rows[i]);
        b.push(y[i]);
    }
    solve_dense(&mut a, &mut b, d)?;
    Some(b)
}

/// Candidate observations considered for entering the basis.
const EXCHANGE_CANDIDATES: usize = 40;

/// Moves from the IRLS estimate to an exact vertex: start from the basis of
/// the `d` smallest residuals and apply improving single exchanges.
fn polish(rows: &[Vec<f64>], y: &[f64], tau: f64, d: usize, start: Vec<f64>) -> Vec<f64> {
    let n = y.len();
    let start_obj = objective_of(&start, rows, y, tau);
    let mut order: Vec<usize> = (0..n).collect();
    let resid = |b: &[f64], i: usize| (y[i] - dot(b, &rows[i])).abs();
    order.sort_by(|&a, &b| resid(&start, a).total_cmp(&resid(&start, b)).then(a.cmp(&b)));

    // greedily pick a non-singular basis from the smallest residuals
    let mut basis: Vec<usize> = Vec::with_capacity(d);
    for &i in &order {
        basis.push(i);
        if basis.len() == d {
            if interpolate(rows, y, &basis, d).is_some() {
                break;
            }
            basis.pop();
        } else if basis.len() < d && !independent(rows, &basis) {
            basis.pop();
        }
    }
    let Some(mut beta) = (basis.len() == d)
        .then(|| interpolate(rows, y, &basis, d))
        .flatten()
    else {
        return start;
    };
    let mut obj = objective_of(&beta, rows, y, tau);

    for _ in 0..(10 * n).max(100) {
        let mut cand: Vec<usize> = (0..n).filter(|i| !basis.contains(i)).collect();
        cand.sort_by(|&a, &b| resid(&beta, a).total_cmp(&resid(&beta, b)).then(a.cmp(&b)));
        cand.truncate(EXCHANGE_CANDIDATES);
        let mut best: Option<(f64, usize, usize, Vec<f64>)> = None;
        for slot in 0..d {
            for &e in &cand {
                let mut trial = basis.clone();
                trial[slot] = e;
                if let Some(b) = interpolate(rows, y, &trial, d) {
                    let o = objective_of(&b, rows, y, tau);
                    if o < best.as_ref().map_or(obj, |t| t.0) - 1e-13 * obj.abs().max(1e-300) {
                        best = Some((o, slot, e, b));
                    }
                }
            }
        }
        match best {
            Some((o, slot, e, b)) => {
                basis[slot] = e;
                beta = b;
                obj = o;
            }
            None => break,
        }
    }
    if obj <= start_obj {
        beta
    } else {
        start
    }
}

fn independent(rows: &[Vec<f64>], basis: &[usize]) -> bool {
    let m = basis.len();
    let mut g = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            g[a * m + b] = dot(&rows[basis[a]], &rows[basis[b]]);
        }
    }
    let mut rhs = vec![0.0; m];
    solve_dense(&mut g, &mut rhs, m).is_some()
}

/// QRA model for one hour and percentile on the member forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct QraModel {
    pub hour: usize,
    pub percentile: usize,
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl QraModel {
    pub fn predict(&self, members: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(members).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// All hourly percentile models, indexed `[hour][percentile - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QraSet {
    pub models: Vec<QraModel>,
}

impl QraSet {
    fn lookup(&self) -> Result<Vec<Vec<&QraModel>>> {
        let mut table: Vec<Vec<Option<&QraModel>>> = vec![vec![None; NUM_QUANTILES]; HOURS];
        for m in &self.models {
            if m.hour < HOURS && (1..=NUM_QUANTILES).contains(&m.percentile) {
                table[m.hour][m.percentile - 1] = Some(m);
            }
        }
        table
            .into_iter()
            .enumerate()
            .map(|(h, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(q, m)| {
                        m.ok_or_else(|| {
                            Error::MissingData(format!("QRA model for hour {h}, percentile {}", q + 1))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// Fits the 24 x 99 QRA models from member forecasts and realised prices
/// (both in price units) on the calibration days.
pub fn fit_qra(members: &[LearDayForecast], actual: &[[f64; HOURS]]) -> Result<QraSet> {
    if members.len() != actual.len() {
        return Err(Error::Invalid("member forecasts and actuals are misaligned".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..HOURS)
        .flat_map(|h| (1..=NUM_QUANTILES).map(move |q| (h, q)))
        .collect();
    let models = jobs
        .par_iter()
        .map(|&(h, q)| {
            let x: Vec<Vec<f64>> = members
                .iter()
                .map(|f| f.members.iter().map(|m| m[h]).collect())
                .collect();
            let y: Vec<f64> = actual.iter().map(|a| a[h]).collect();
            let fit = fit_quantile(&x, &y, q as f64 / 100.0)?;
            Ok(QraModel {
                hour: h,
                percentile: q,
                intercept: fit.intercept,
                weights: fit.weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QraSet { models })
}

/// Quantile forecast for one day, with crossing repaired by sorting.
pub fn qra_forecast(set: &QraSet, mean_forecasts: &LearDayForecast) -> Result<QuantileDay> {
    let table = set.lookup()?;
    let mut hours = [[0.0; NUM_QUANTILES]; HOURS];
    for (h, grid) in hours.iter_mut().enumerate() {
        let members: Vec<f64> = mean_forecasts.members.iter().map(|m| m[h]).collect();
        for (q, slot) in grid.iter_mut().enumerate() {
            *slot = table[h][q].predict(&members);
        }
        sort_grid(grid);
    }
    Ok(QuantileDay {
        date: mean_forecasts.date,
        hours,
    })
}

/// Raw predictions repaired into a monotone grid.
pub fn repair_crossing(raw: &[f64]) -> Vec<f64> {
    let mut v = raw.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn write_qra<W: Write>(set: &QraSet, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let width = set.models.first().map_or(4, |m| m.weights.len());
    let mut header = vec!["hour".to_string(), "q".into(), "intercept".into()];
    header.extend((1..=width).map(|i| format!("w{i}")));
    wtr.write_record(&header)?;
    for m in &set.models {
        let mut row = vec![m.hour.to_string(), m.percentile.to_string(), m.intercept.to_string()];
        row.extend(m.weights.iter().map(|w| w.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<qra output>", e))?;
    Ok(())
}

pub fn read_qra<R: Read>(reader: R) -> Result<QraSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut models = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |s: &str| Error::Invalid(format!("QRA model value `{s}`"));
        let hour = rec[0].parse().map_err(|_| bad(&rec[0]))?;
        let percentile = rec[1].parse().map_err(|_| bad(&rec[1]))?;
        let intercept = rec[2].parse().map_err(|_| bad(&rec[2]))?;
        let weights = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|_| bad(s)))
            .collect::<Result<Vec<_>>>()?;
        models.push(QraModel {
            hour,
            percentile,
            intercept,
            weights,
        });
    }
    Ok(QraSet { models })
}

/// Grid helper for callers holding raw per-percentile outputs.
pub fn grid_from_raw(raw: &[f64]) -> Result<QuantileGrid> {
    if raw.len() != NUM_QUANTILES {
        return Err(Error::Invalid(format!("expected {NUM_QUANTILES} values")));
    }
    let mut g = [0.0; NUM_QUANTILES];
    g.copy_from_slice(raw);
    sort_grid(&mut g);
    Ok(g)
}


#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn pinball_values() {
        assert_eq!(pinball(2.0, 0.9), 1.8);
        assert!((pinball(-2.0, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(pinball(0.0, 0.3), 0.0);
    }

    #[test]
    fn matches_enumeration_oracle_on_tiny_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let x: Vec<Vec<f64>> = (0..5)
                .map(|_| vec![rng.random::<f64>() * 10.0, rng.random::<f64>() * 5.0])
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|r| 1.0 + r[0] - 0.5 * r[1] + 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for tau in [0.1, 0.5, 0.77] {
                let fit = fit_quantile(&x, &y, tau).unwrap();
                let exact = oracle::enumerate_basic(&x, &y, tau);
                assert!((fit.objective(&x, &y, tau) - exact).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y = vec![4.2; 10];
        let fit = fit_quantile(&x, &y, 0.3).unwrap();
        assert!(fit.objective(&x, &y, 0.3) < 1e-9);
        assert!((fit.intercept - 4.2).abs() < 1e-8);
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-8));
    }

    #[test]
    fn degenerate_column_rejected() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 3.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(fit_quantile(&x, &y, 0.5), Err(Error::Degenerate(_))));
        assert!(fit_quantile(&x[..4], &y[..4], 0.5).is_err());
        assert!(fit_quantile(&x, &y, 1.0).is_err());
    }

    #[test]
    fn median_on_symmetric_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let m = rng.random::<f64>() * 100.0;
            x.push((0..4).map(|_| m + rng.sample::<f64, _>(StandardNormal) * 0.5).collect::<Vec<_>>());
            y.push(m + rng.sample::<f64, _>(StandardNormal) * 3.0);
        }
        let fit = fit_quantile(&x, &y, 0.5).unwrap();
        let wsum: f64 = fit.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 0.05, "weights sum {wsum}");
        let mut res: Vec<f64> = x.iter().zip(&y).map(|(r, yi)| yi - fit.predict(r)).collect();
        res.sort_by(|a, b| a.total_cmp(b));
        assert!(res[n / 2].abs() < 0.2);
    }

    #[test]
    fn beats_intercept_only_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random::<f64>() * 10.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + rng.random::<f64>()).collect();
        for tau in [0.05, 0.5, 0.95] {
            let fit = fit_quantile(&x, &y, tau).unwrap();
            let mut sorted = y.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let q = sorted[((tau * 60.0).ceil() as usize).saturating_sub(1)];
            let zero = QuantileFit {
                intercept: q,
                weights: vec![0.0],
            };
            assert!(fit.objective(&x, &y, tau) <= zero.objective(&x, &y, tau) + 1e-12);
        }
    }

    #[test]
    fn positive_scaling_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random::<f64>() * 4.0, rng.random::<f64>()])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0] - r[1] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a = fit_quantile(&x, &y, 0.5).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let b = fit_quantile(&x2, &y2, 0.5).unwrap();
        assert!((b.intercept - 2.0 * a.intercept).abs() < 1e-6);
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa - wb).abs() < 1e-6);
        }
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
    }

    #[test]
    fn flat_forecast_from_identical_models_and_missing_model() {
        let mut models = Vec::new();
        for h in 0..HOURS {
            for q in 1..=NUM_QUANTILES {
                models.push(QraModel {
                    hour: h,
                    percentile: q,
                    intercept: 1.0,
                    weights: vec![0.25; 4],
                });
            }
        }
        let set = QraSet { models };
        let f = LearDayForecast {
            date: day(),
            windows: vec![1, 2, 3, 4],
            members: vec![[10.0; HOURS], [20.0; HOURS], [30.0; HOURS], [40.0; HOURS]],
            mean: [25.0; HOURS],
        };
        let out = qra_forecast(&set, &f).unwrap();
        assert!(out.hours.iter().all(|g| g.iter().all(|v| *v == 26.0)));
        let mut partial = set.clone();
        partial.models.pop();
        assert!(matches!(qra_forecast(&partial, &f), Err(Error::MissingData(_))));
    }

    #[test]
    fn crossing_repair_sorts() {
        assert_eq!(repair_crossing(&[12.0, 10.0, 11.0]), vec![10.0, 11.0, 12.0]);
    }

    #[test]
    fn csv_round_trip() {
        let set = QraSet {
            models: vec![QraModel {
                hour: 3,
                percentile: 17,
                intercept: -0.5,
                weights: vec![0.1, 0.2, 0.3, 0.4],
            }],
        };
        let mut buf = Vec::new();
        write_qra(&set, &mut buf).unwrap();
        assert_eq!(read_qra(buf.as_slice()).unwrap(), set);
    }
}

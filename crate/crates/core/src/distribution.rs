//! Normal and Gaussian-mixture distributions, and the 99-point quantile grid
//! that every model emits and every metric consumes.

use std::io::{Read, Write};

use chrono::NaiveDate;
use libm::erfc;

use crate::error::{Error, Result};
use crate::HOURS;

/// Number of percentiles on the shared grid (1, 2, ..., 99).
pub const NUM_QUANTILES: usize = 99;

/// Quantile values for percentiles 1..=99, non-decreasing.
pub type QuantileGrid = [f64; NUM_QUANTILES];

/// Probability level of grid slot `i` (slot 0 is the 1st percentile).
#[inline]
pub fn grid_prob(i: usize) -> f64 {
    (i + 1) as f64 / 100.0
}

/// One forecast day: a quantile grid per delivery hour.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDay {
    pub date: NaiveDate,
    pub hours: [QuantileGrid; HOURS],
}

impl QuantileDay {
    /// Value of percentile `q` (1..=99) at `hour`.
    pub fn percentile(&self, hour: usize, q: usize) -> f64 {
        self.hours[hour][q - 1]
    }

    pub fn is_monotone(&self) -> bool {
        self.hours
            .iter()
            .all(|g| g.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// A sequence of forecast days, ordered by date.
pub type QuantileForecast = Vec<QuantileDay>;

/// Point forecast (or realised prices) for one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointDay {
    pub date: NaiveDate,
    pub values: [f64; HOURS],
}

pub type PointForecast = Vec<PointDay>;

/// Daily price profiles keyed by delivery date.
pub type DailyPrices = std::collections::BTreeMap<NaiveDate, [f64; HOURS]>;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation (relative error ~1e-9) followed by one
/// Halley step against the erfc-based CDF, which brings the error down to
/// the double-precision floor.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Quantile grid of N(mean, variance).
pub fn gaussian_grid(mean: f64, variance: f64) -> Result<QuantileGrid> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Invalid(format!("variance must be positive, got {variance}")));
    }
    if !mean.is_finite() {
        return Err(Error::NonFinite("gaussian mean"));
    }
    let sd = variance.sqrt();
    let mut grid = [0.0; NUM_QUANTILES];
    for (i, g) in grid.iter_mut().enumerate() {
        *g = mean + sd * norm_ppf(grid_prob(i));
    }
    Ok(grid)
}

/// Finite Gaussian mixture with non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("mixture"));
        }
        if weights.len() != means.len() || means.len() != stds.len() {
            return Err(Error::Invalid("mixture component lengths differ".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("mixture weights must be finite and >= 0".into()));
        }
        if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid("mixture stddevs must be finite and > 0".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mixture mean"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("mixture weights sum to {total}")));
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    /// Equal-weight mixture from component means and standard deviations.
    pub fn equal_weight(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let n = means.len();
        if n == 0 {
            return Err(Error::Empty("mixture"));
        }
        Self::new(vec![1.0 / n as f64; n], means, stds)
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let p: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * norm_cdf((x - m) / s))
            .sum();
        p.clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * norm_pdf((x - m) / s) / s)
            .sum()
    }

    /// Solves F(x) = p by bracketed Brent iteration seeded at the
    /// weight-averaged component quantiles.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Invalid(format!("probability {p} outside (0, 1)")));
        }
        if self.len() == 1 {
            return Ok(self.means[0] + self.stds[0] * norm_ppf(p));
        }
        let z = norm_ppf(p);
        let x0: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * (m + s * z))
            .sum();

        let mut lo = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| m - 10.0 * s)
            .fold(f64::INFINITY, f64::min);
        let mut hi = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| m + 10.0 * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let f = |x: f64| self.cdf(x) - p;

        let mut step = (hi - lo).max(1.0);
        while f(lo) > 0.0 {
            lo -= step;
            step *= 2.0;
        }
        step = (hi - lo).max(1.0);
        while f(hi) < 0.0 {
            hi += step;
            step *= 2.0;
        }
        let f0 = f(x0);
        if f0 == 0.0 {
            return Ok(x0);
        }
        if x0 > lo && x0 < hi {
            if f0 < 0.0 {
                lo = x0;
            } else {
                hi = x0;
            }
        }
        Ok(brent(f, lo, hi, 1e-12))
    }

    /// Mixture quantiles on the 1..99 grid.
    pub fn grid(&self) -> Result<QuantileGrid> {
        let mut grid = [0.0; NUM_QUANTILES];
        for (i, g) in grid.iter_mut().enumerate() {
            *g = self.quantile(grid_prob(i))?;
        }
        Ok(grid)
    }
}

/// Brent's method on a bracket with f(a) <= 0 <= f(b). Stops when the
/// residual is below `ftol` or the bracket collapses to machine precision.
fn brent(f: impl Fn(f64) -> f64, a: f64, b: f64, ftol: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..500 {
        if fb.abs() <= ftol || fb == 0.0 {
            return b;
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            return b;
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let between = if lo < b { s > lo && s < b } else { s > b && s < lo };
        let bisect = !between
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
            || (mflag && (b - c).abs() < f64::EPSILON)
            || (!mflag && (c - d).abs() < f64::EPSILON);
        if bisect {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}

/// Any model output that can be turned into the shared quantile grid.
#[derive(Debug, Clone)]
pub enum QuantileSource {
    Gaussian { mean: f64, variance: f64 },
    Mixture(Mixture),
    Explicit(Vec<f64>),
}

impl QuantileSource {
    /// Converts to a monotone 99-point grid. Explicit vectors are sorted if
    /// they cross.
    pub fn to_grid(&self) -> Result<QuantileGrid> {
        match self {
            QuantileSource::Gaussian { mean, variance } => gaussian_grid(*mean, *variance),
            QuantileSource::Mixture(m) => m.grid(),
            QuantileSource::Explicit(v) => {
                if v.len() != NUM_QUANTILES {
                    return Err(Error::Invalid(format!(
                        "explicit quantile vector has {} entries, expected {NUM_QUANTILES}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("explicit quantile"));
                }
                let mut grid = [0.0; NUM_QUANTILES];
                grid.copy_from_slice(v);
                sort_grid(&mut grid);
                Ok(grid)
            }
        }
    }
}

/// Monotone rearrangement of a quantile grid.
pub fn sort_grid(grid: &mut QuantileGrid) {
    grid.sort_by(|a, b| a.total_cmp(b));
}

/// Writes quantile forecasts as `date,hour,q01..q99`, one row per hour.
pub fn write_quantiles<W: Write>(qf: &[QuantileDay], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "hour".to_string()];
    header.extend((1..=NUM_QUANTILES).map(|q| format!("q{q:02}")));
    wtr.write_record(&header)?;
    for day in qf {
        for (h, grid) in day.hours.iter().enumerate() {
            let mut rec = vec![day.date.to_string(), h.to_string()];
            rec.extend(grid.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<quantile output>", e))?;
    Ok(())
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| Error::BadTimestamp(s.to_string()))
}

fn parse_value(s: &str, what: &'static str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::MissingData(format!("unparseable {what} `{s}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Reads the format of [`write_quantiles`]; each day needs all 24 hours in
/// order.
pub fn read_quantiles<R: Read>(reader: R) -> Result<Vec<QuantileDay>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<QuantileDay> = Vec::new();
    let mut expected_hour = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 + NUM_QUANTILES {
            return Err(Error::MissingData(format!("quantile row with {} fields", rec.len())));
        }
        let date = parse_date(&rec[0])?;
        let hour: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::MissingData(format!("bad hour `{}`", &rec[1])))?;
        if hour != expected_hour {
            return Err(Error::MissingData(format!("{date}: expected hour {expected_hour}, found {hour}")));
        }
        if hour == 0 {
            out.push(QuantileDay {
                date,
                hours: [[0.0; NUM_QUANTILES]; HOURS],
            });
        }
        let day = out.last_mut().expect("day started at hour 0");
        if day.date != date {
            return Err(Error::MissingData(format!("{date}: hours of {} incomplete", day.date)));
        }
        for (slot, field) in day.hours[hour].iter_mut().zip(rec.iter().skip(2)) {
            *slot = parse_value(field, "quantile")?;
        }
        expected_hour = (hour + 1) % HOURS;
    }
    if expected_hour != 0 {
        return Err(Error::MissingData("last quantile day is incomplete".into()));
    }
    Ok(out)
}

/// Writes point forecasts (or prices) as `date,h00..h23`.
pub fn write_points<W: Write>(points: &[PointDay], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend((0..HOURS).map(|h| format!("h{h:02}")));
    wtr.write_record(&header)?;
    for p in points {
        let mut rec = vec![p.date.to_string()];
        rec.extend(p.values.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<point output>", e))?;
    Ok(())
}

pub fn read_points<R: Read>(reader: R) -> Result<Vec<PointDay>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 1 + HOURS {
            return Err(Error::MissingData(format!("point row with {} fields", rec.len())));
        }
        let mut values = [0.0; HOURS];
        for (slot, field) in values.iter_mut().zip(rec.iter().skip(1)) {
            *slot = parse_value(field, "point forecast")?;
        }
        out.push(PointDay {
            date: parse_date(&rec[0])?,
            values,
        });
    }
    Ok(out)
}

//! Split-conformal prediction intervals around any point forecaster, with a
//! rolling per-hour window of absolute residuals.

use std::collections::VecDeque;

use crate::distribution::{grid_prob, PointDay, QuantileDay, QuantileGrid, NUM_QUANTILES};
use crate::error::{Error, Result};
use crate::HOURS;

/// Default calibration window in days.
pub const DEFAULT_NCAL: usize = 182;

/// Absolute residual.
pub fn nonconformity(point: f64, actual: f64) -> f64 {
    (point - actual).abs()
}

/// Most recent nonconformity scores for one hour, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWindow {
    pub hour: usize,
    capacity: usize,
    scores: VecDeque<f64>,
}

impl ScoreWindow {
    pub fn new(hour: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("calibration window capacity must be positive".into()));
        }
        Ok(Self {
            hour,
            capacity,
            scores: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    /// Appends a score and evicts the oldest beyond capacity.
    pub fn roll(&mut self, score: f64) -> Result<()> {
        if !(score >= 0.0) || !score.is_finite() {
            return Err(Error::Invalid(format!("nonconformity score {score} must be finite and >= 0")));
        }
        if self.scores.len() == self.capacity {
            self.scores.pop_front();
        }
        self.scores.push_back(score);
        Ok(())
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.scores.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }
}

/// Order statistic of rank `⌈α(n+1)⌉`, clamped to `[1, n]`.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    // tolerance absorbs representation error in products such as 0.98 * 4
    let rank = (alpha * (n as f64 + 1.0) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Symmetric interval grid around `point` from the window's scores.
pub fn conformal_quantiles(point: f64, window: &ScoreWindow) -> Result<QuantileGrid> {
    if window.is_empty() {
        return Err(Error::Empty("conformal score window"));
    }
    let sorted = window.sorted();
    let mut grid = [0.0; NUM_QUANTILES];
    for (i, slot) in grid.iter_mut().enumerate() {
        let q = grid_prob(i);
        *slot = if q < 0.5 {
            point - empirical_quantile(&sorted, 1.0 - 2.0 * q)
        } else {
            point + empirical_quantile(&sorted, 2.0 * q - 1.0)
        };
    }
    Ok(grid)
}

/// Twenty-four hourly windows rolled together day by day.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformalizer {
    windows: Vec<ScoreWindow>,
}

impl Conformalizer {
    pub fn new(capacity: usize) -> Result<Self> {
        let windows = (0..HOURS)
            .map(|h| ScoreWindow::new(h, capacity))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { windows })
    }

    pub fn window(&self, hour: usize) -> &ScoreWindow {
        &self.windows[hour]
    }

    /// Adds one realised day.
    pub fn observe(&mut self, point: &[f64; HOURS], actual: &[f64; HOURS]) -> Result<()> {
        for h in 0..HOURS {
            if !point[h].is_finite() || !actual[h].is_finite() {
                return Err(Error::NonFinite("conformal calibration pair"));
            }
            self.windows[h].roll(nonconformity(point[h], actual[h]))?;
        }
        Ok(())
    }

    pub fn predict(&self, point: &PointDay) -> Result<QuantileDay> {
        let mut hours = [[0.0; NUM_QUANTILES]; HOURS];
        for (h, grid) in hours.iter_mut().enumerate() {
            *grid = conformal_quantiles(point.values[h], &self.windows[h])?;
        }
        Ok(QuantileDay {
            date: point.date,
            hours,
        })
    }
}

/// Rolls a conformalizer through a forecast period: calibrate on
/// `calibration` pairs, then forecast each test day before absorbing its
/// realised prices.
pub fn conformalize(
    calibration: &[(PointDay, [f64; HOURS])],
    test: &[(PointDay, [f64; HOURS])],
    capacity: usize,
) -> Result<Vec<QuantileDay>> {
    let mut c = Conformalizer::new(capacity)?;
    for (p, y) in calibration {
        c.observe(&p.values, y)?;
    }
    let mut out = Vec::with_capacity(test.len());
    for (p, y) in test {
        out.push(c.predict(p)?);
        c.observe(&p.values, y)?;
    }
    Ok(out)
}

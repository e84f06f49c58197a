//! Hourly GARCH(1,1) models on point-forecast residuals and the Gaussian
//! predictive grids built from their conditional variances.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distribution::{gaussian_grid, QuantileGrid};
use crate::error::{Error, Result};

/// Upper bound on `alpha + beta` enforced by the parameter map.
pub const PERSISTENCE_CAP: f64 = 1.0 - 1e-6;
/// Minimum sample size for a fit.
pub const MIN_RESIDUALS: usize = 50;
const RESTARTS: usize = 5;
const MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchModel {
    pub hour: usize,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub residual_mean: f64,
}

impl GarchModel {
    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.persistence())
    }

    /// `σ²_{t+1} = ω + α ε_t² + β σ²_t`.
    pub fn step(&self, eps: f64, sigma2: f64) -> f64 {
        self.omega + self.alpha * eps * eps + self.beta * sigma2
    }

    /// In-sample conditional variances, starting from `sigma2_0`.
    pub fn variances(&self, residuals: &[f64], sigma2_0: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(residuals.len());
        let mut s2 = sigma2_0;
        for t in 0..residuals.len() {
            if t > 0 {
                s2 = self.step(residuals[t - 1], s2);
            }
            out.push(s2);
        }
        out
    }

    /// Gaussian log-likelihood (without the `2π` constant).
    pub fn log_likelihood(&self, residuals: &[f64], sigma2_0: f64) -> f64 {
        self.variances(residuals, sigma2_0)
            .iter()
            .zip(residuals)
            .map(|(s2, e)| -0.5 * (s2.ln() + e * e / s2))
            .sum()
    }
}

/// Outcome of [`fit_garch`].
#[derive(Debug, Clone, PartialEq)]
pub struct GarchFit {
    pub model: GarchModel,
    pub sigma2_0: f64,
    pub log_likelihood: f64,
    pub start_log_likelihood: f64,
    /// `alpha + beta` ended at the stationarity cap.
    pub boundary: bool,
}

/// Recursive one-step variance tracker for live forecasting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchState {
    pub model: GarchModel,
    /// Variance of the next, not yet realised, residual.
    pub next_variance: f64,
}

impl GarchState {
    /// Runs the recursion through `history` from its sample variance.
    pub fn from_history(model: GarchModel, history: &[f64]) -> Result<Self> {
        let next_variance = forecast_variance(&model, history)?;
        Ok(Self {
            model,
            next_variance,
        })
    }

    /// Absorbs a realised residual.
    pub fn update(&mut self, eps: f64) {
        self.next_variance = self.model.step(eps, self.next_variance);
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// One-step-ahead variance after running the in-sample recursion over
/// `residuals`, initialised at their sample variance.
pub fn forecast_variance(model: &GarchModel, residuals: &[f64]) -> Result<f64> {
    let (&last, _) = residuals
        .split_last()
        .ok_or(Error::Empty("GARCH residual history"))?;
    let s2 = *model
        .variances(residuals, sample_variance(residuals))
        .last()
        .expect("non-empty");
    Ok(model.step(last, s2))
}

/// Gaussian percentile grid `μ + σ Φ⁻¹(q/100)`.
pub fn gaussian_quantile_forecast(mean: f64, variance: f64) -> Result<QuantileGrid> {
    gaussian_grid(mean, variance)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(log ω, b, c)` with `α + β = cap·sigmoid(b)` and `α/(α+β) = sigmoid(c)`.
fn unpack(theta: &[f64; 3]) -> (f64, f64, f64) {
    let omega = theta[0].exp();
    let s = PERSISTENCE_CAP * sigmoid(theta[1]);
    let f = sigmoid(theta[2]);
    (omega, s * f, s * (1.0 - f))
}

fn pack(omega: f64, alpha: f64, beta: f64) -> [f64; 3] {
    let s = alpha + beta;
    [omega.ln(), logit(s / PERSISTENCE_CAP), logit(alpha / s)]
}

/// Negative log-likelihood and its gradient in the unconstrained space.
fn nll_grad(theta: &[f64; 3], z: &[f64]) -> (f64, [f64; 3]) {
    let (omega, alpha, beta) = unpack(theta);
    let mut s2 = 1.0;
    let (mut dw, mut da, mut db) = (0.0, 0.0, 0.0);
    let mut f = 0.0;
    let mut g = [0.0; 3];
    for t in 0..z.len() {
        if t > 0 {
            let e2 = z[t - 1] * z[t - 1];
            dw = 1.0 + beta * dw;
            da = e2 + beta * da;
            db = s2 + beta * db;
            s2 = omega + alpha * e2 + beta * s2;
        }
        if !(s2 > 0.0) || !s2.is_finite() {
            return (f64::INFINITY, [0.0; 3]);
        }
        let e2 = z[t] * z[t];
        f += 0.5 * (s2.ln() + e2 / s2);
        let dl = 0.5 * (1.0 / s2 - e2 / (s2 * s2));
        g[0] += dl * dw;
        g[1] += dl * da;
        g[2] += dl * db;
    }
    let sb = sigmoid(theta[1]);
    let sc = sigmoid(theta[2]);
    let s = PERSISTENCE_CAP * sb;
    let ds_db = PERSISTENCE_CAP * sb * (1.0 - sb);
    let df_dc = sc * (1.0 - sc);
    let grad = [
        g[0] * omega,
        g[1] * ds_db * sc + g[2] * ds_db * (1.0 - sc),
        (g[1] - g[2]) * s * df_dc,
    ];
    (f, grad)
}

struct Minimum {
    theta: [f64; 3],
    value: f64,
    converged: bool,
    iterations: usize,
    last_delta: f64,
}

/// BFGS with Armijo backtracking.
fn bfgs(start: [f64; 3], z: &[f64]) -> Minimum {
    let n = z.len() as f64;
    let mut x = start;
    let (mut f, mut g) = nll_grad(&x, z);
    let mut h = [[0.0; 3]; 3];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0 / n;
    }
    let mut last_delta = f64::INFINITY;
    for it in 0..MAX_ITER {
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= 1e-7 * n {
            return Minimum {
                theta: x,
                value: f,
                converged: true,
                iterations: it,
                last_delta,
            };
        }
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = -(0..3).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = (0..3).map(|i| p[i] * g[i]).sum();
        if slope >= 0.0 {
            // lost descent direction; reset to scaled steepest descent
            h = [[0.0; 3]; 3];
            for (i, row) in h.iter_mut().enumerate() {
                row[i] = 1.0 / n;
                p[i] = -g[i] / n;
            }
            slope = (0..3).map(|i| p[i] * g[i]).sum();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [x[0] + step * p[0], x[1] + step * p[1], x[2] + step * p[2]];
            let (ft, gt) = nll_grad(&trial, z);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            // no decrease possible along the search direction: stationary to precision
            return Minimum {
                theta: x,
                value: f,
                converged: gnorm <= 1e-4 * n,
                iterations: it,
                last_delta,
            };
        };
        let s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]];
        let y = [gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]];
        let sy: f64 = (0..3).map(|i| s[i] * y[i]).sum();
        if sy > 1e-12 {
            let mut hy = [0.0; 3];
            for i in 0..3 {
                hy[i] = (0..3).map(|j| h[i][j] * y[j]).sum();
            }
            let yhy: f64 = (0..3).map(|i| y[i] * hy[i]).sum();
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += ((sy + yhy) * s[i] * s[j]) / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        last_delta = f - fnew;
        x = xn;
        f = fnew;
        g = gn;
        if last_delta.abs() <= 1e-12 * (f.abs() + 1.0) {
            return Minimum {
                theta: x,
                value: f,
                converged: true,
                iterations: it + 1,
                last_delta,
            };
        }
    }
    Minimum {
        theta: x,
        value: f,
        converged: false,
        iterations: MAX_ITER,
        last_delta,
    }
}

/// Maximum-likelihood GARCH(1,1) for one hour's residuals in time order.
pub fn fit_garch(residuals: &[f64], hour: usize) -> Result<GarchFit> {
    if residuals.len() < MIN_RESIDUALS {
        return Err(Error::SeriesTooShort {
            need: MIN_RESIDUALS,
            have: residuals.len(),
        });
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GARCH residuals"));
    }
    let var = sample_variance(residuals);
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    if var <= 1e-12 * mean.abs().max(1.0).powi(2) {
        return Err(Error::Degenerate("GARCH residuals have zero variance".into()));
    }
    // fit on unit-variance residuals; σ²_0 = 1 in these units
    let sd = var.sqrt();
    let z: Vec<f64> = residuals.iter().map(|e| e / sd).collect();

    let default_start = pack(0.15, 0.05, 0.80);
    let start_value = nll_grad(&default_start, &z).0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a5c_u64 ^ hour as u64);
    let mut best: Option<Minimum> = None;
    for r in 0..RESTARTS {
        let start = if r == 0 {
            default_start
        } else {
            let s: f64 = rng.random_range(0.3..0.98);
            let frac: f64 = rng.random_range(0.02..0.6);
            pack(1.0 - s, s * frac, s * (1.0 - frac))
        };
        let m = bfgs(start, &z);
        if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.ok_or(Error::NonConvergence {
        iterations: MAX_ITER,
        last_delta: f64::NAN,
    })?;
    if !best.converged {
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            last_delta: best.last_delta,
        });
    }
    let (omega, alpha, beta) = unpack(&best.theta);
    let boundary = alpha + beta >= PERSISTENCE_CAP - 1e-9;
    if boundary {
        log::warn!("hour {hour}: GARCH persistence at the stationarity cap");
    }
    let model = GarchModel {
        hour,
        omega: omega * var,
        alpha,
        beta,
        residual_mean: mean,
    };
    // likelihood in original units differs by a constant n·ln(sd)
    let shift = residuals.len() as f64 * sd.ln();
    Ok(GarchFit {
        model,
        sigma2_0: var,
        log_likelihood: -best.value - shift,
        start_log_likelihood: -start_value - shift,
        boundary,
    })
}

pub fn write_garch<W: Write>(models: &[GarchModel], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["hour", "omega", "alpha", "beta"])?;
    for m in models {
        wtr.write_record(&[
            m.hour.to_string(),
            m.omega.to_string(),
            m.alpha.to_string(),
            m.beta.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<garch output>", e))?;
    Ok(())
}

pub fn read_garch<R: Read>(reader: R) -> Result<Vec<GarchModel>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("GARCH model value `{}`", &rec[i])))
        };
        let hour = rec[0]
            .parse()
            .map_err(|_| Error::Invalid(format!("GARCH hour `{}`", &rec[0])))?;
        let m = GarchModel {
            hour,
            omega: num(1)?,
            alpha: num(2)?,
            beta: num(3)?,
            residual_mean: 0.0,
        };
        if !(m.omega > 0.0 && m.alpha >= 0.0 && m.beta >= 0.0 && m.persistence() < 1.0) {
            return Err(Error::Invalid(format!("non-stationary GARCH model for hour {hour}")));
        }
        out.push(m);
    }
    Ok(out)
}

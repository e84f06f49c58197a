//! Synthetic hourly markets with a known generating law.
//!
//! For delivery day `d` and hour `h` the price is
//! `base + profile(h) - weekend_drop·1[weekend] + x[d,h]` where
//! `x[d,h] = ar1·x[d-1,h] + ar7·x[d-7,h] + load_effect·(load - mean load) -
//!  renewable_effect·(renewable - mean renewable) + ε[d,h] + spike[d,h]`
//! and `ε` follows an independent GARCH(1,1) law per hour. Load and
//! renewable forecasts are the hourly means plus Gaussian noise.

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DstRule, HourlyRecord, MarketSeries};
use crate::error::{Error, Result};
use crate::HOURS;

/// Days simulated and discarded before the first emitted day.
const BURN_IN: usize = 56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub start: NaiveDate,
    pub days: usize,
    pub base_level: f64,
    /// Peak-to-mean size of the two-humped intraday profile.
    pub daily_amplitude: f64,
    pub weekend_drop: f64,
    pub ar1: f64,
    pub ar7: f64,
    pub garch_omega: f64,
    pub garch_alpha: f64,
    pub garch_beta: f64,
    /// EUR/MWh per MW of load above its hourly mean.
    pub load_effect: f64,
    /// EUR/MWh per MW of renewable output above its hourly mean.
    pub renewable_effect: f64,
    pub load_level: f64,
    pub load_noise: f64,
    pub renewable_level: f64,
    pub renewable_noise: f64,
    /// Per-cell probability of a price spike.
    pub spike_prob: f64,
    /// Mean absolute spike size (exponential, random sign).
    pub spike_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            days: 900,
            base_level: 60.0,
            daily_amplitude: 15.0,
            weekend_drop: 10.0,
            ar1: 0.6,
            ar7: 0.2,
            garch_omega: 2.0,
            garch_alpha: 0.1,
            garch_beta: 0.8,
            load_effect: 1e-3,
            renewable_effect: 1.5e-3,
            load_level: 50_000.0,
            load_noise: 3_000.0,
            renewable_level: 20_000.0,
            renewable_noise: 4_000.0,
            spike_prob: 0.005,
            spike_scale: 40.0,
        }
    }
}

impl SynthSpec {
    /// Noise-free variant: every stochastic term is switched off.
    pub fn noiseless(self) -> Self {
        Self {
            garch_omega: 0.0,
            garch_alpha: 0.0,
            garch_beta: 0.0,
            load_noise: 0.0,
            renewable_noise: 0.0,
            spike_prob: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        let finite = [
            self.base_level,
            self.daily_amplitude,
            self.weekend_drop,
            self.ar1,
            self.ar7,
            self.garch_omega,
            self.garch_alpha,
            self.garch_beta,
            self.load_effect,
            self.renewable_effect,
            self.load_level,
            self.load_noise,
            self.renewable_level,
            self.renewable_noise,
            self.spike_prob,
            self.spike_scale,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.days < 8 {
            return bad("at least 8 days are required");
        }
        if self.ar1.abs() + self.ar7.abs() >= 1.0 {
            return bad("|ar1| + |ar7| must be below 1");
        }
        if self.garch_omega < 0.0 || self.garch_alpha < 0.0 || self.garch_beta < 0.0 {
            return bad("GARCH parameters must be non-negative");
        }
        if self.garch_alpha + self.garch_beta >= 1.0 {
            return bad("GARCH persistence alpha + beta must be below 1");
        }
        if self.load_noise < 0.0 || self.renewable_noise < 0.0 || self.spike_scale < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return bad("spike probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// Deterministic intraday shape: morning and evening humps.
    pub fn profile(&self, hour: usize) -> f64 {
        let t = hour as f64;
        let bump = |c: f64, w: f64| (-(t - c).powi(2) / (2.0 * w * w)).exp();
        self.daily_amplitude * (bump(8.0, 2.0) + 1.2 * bump(19.0, 2.5) - 0.45)
    }

    fn load_mean(&self, hour: usize) -> f64 {
        self.load_level * (1.0 + 0.15 * (std::f64::consts::PI * (hour as f64 - 6.0) / 12.0).sin())
    }

    fn renewable_mean(&self, hour: usize) -> f64 {
        let solar = (std::f64::consts::PI * (hour as f64 - 6.0) / 12.0).sin().max(0.0);
        self.renewable_level * (0.6 + 0.8 * solar)
    }
}

/// Simulates `spec.days` days of hourly records starting at midnight of
/// `spec.start`, on a clock without daylight-saving changes.
pub fn make_synthetic(spec: &SynthSpec, seed: u64) -> Result<MarketSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = BURN_IN + spec.days;
    let mut x = vec![[0.0; HOURS]; total];
    let uncond = if spec.garch_omega > 0.0 {
        spec.garch_omega / (1.0 - spec.garch_alpha - spec.garch_beta)
    } else {
        0.0
    };
    let mut sigma2 = [uncond; HOURS];
    let mut records = Vec::with_capacity(spec.days * HOURS);
    let first = spec.start - Duration::days(BURN_IN as i64);
    for d in 0..total {
        let date = first + Duration::days(d as i64);
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        for h in 0..HOURS {
            let load = spec.load_mean(h) + spec.load_noise * rng.sample::<f64, _>(StandardNormal);
            let ren = spec.renewable_mean(h) + spec.renewable_noise * rng.sample::<f64, _>(StandardNormal);
            let eps = sigma2[h].sqrt() * rng.sample::<f64, _>(StandardNormal);
            sigma2[h] = spec.garch_omega + spec.garch_alpha * eps * eps + spec.garch_beta * sigma2[h];
            let spike = if spec.spike_prob > 0.0 && rng.random::<f64>() < spec.spike_prob {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * spec.spike_scale * rng.sample::<f64, _>(Exp1)
            } else {
                0.0
            };
            let lag = |k: usize| if d >= k { x[d - k][h] } else { 0.0 };
            x[d][h] = spec.ar1 * lag(1)
                + spec.ar7 * lag(7)
                + spec.load_effect * (load - spec.load_mean(h))
                - spec.renewable_effect * (ren - spec.renewable_mean(h))
                + eps
                + spike;
            if d >= BURN_IN {
                let price = spec.base_level + spec.profile(h) - if weekend { spec.weekend_drop } else { 0.0 } + x[d][h];
                records.push(HourlyRecord {
                    timestamp: date.and_time(NaiveTime::from_hms_opt(h as u32, 0, 0).expect("valid hour")),
                    price: Some(price),
                    load_forecast: Some(load),
                    renewable_forecast: Some(ren),
                });
            }
        }
    }
    Ok(MarketSeries {
        records,
        dst: DstRule::None,
    })
}

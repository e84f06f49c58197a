//! End-to-end experiments: data preparation, every model of the roster,
//! evaluation, Diebold-Mariano matrices and trading backtests.

mod config;

pub use config::{
    ConformalSection, DataSection, ExperimentConfig, HsSection, LearSection, Model, NeuralSection,
    OutputSection, Profile, TradingSection,
};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rayon::prelude::*;

use crate::baseline::{daily_prices, fit_naive_hs, naive_forecast};
use crate::conformal::conformalize;
use crate::data::{
    build_features, ingest_csv, normalize_clock, DateRange, FeatureDataset, MarketSeries, Split,
    SplitRanges, Standardizer,
};
use crate::distribution::{write_points, write_quantiles, DailyPrices, PointDay, QuantileDay};
use crate::error::{Error, Result};
use crate::linear::{lear_rolling, tune_lambda, LassoOptions, LearConfig, LearDayForecast};
use crate::metrics::{
    daily_crps, dm_matrix, evaluate, evaluate_point, levels, mean_std, summarize, write_curve, write_summary,
    MetricsReport, SummaryRow,
};
use crate::neural::{
    ensemble_predict, hpo, mc_dropout_predict, split_arrays, to_price_forecasts, train, train_ensemble, write_trials,
    MlpParams,
    TrainConfig, TrainData,
};
use crate::quantreg::{fit_qra, qra_forecast};
use crate::synth::make_synthetic;
use crate::trading::{
    backtest, backtest_fixed_hours, backtest_unlimited, perfect_foresight, trading_days, TradeLedger, TradingDay,
};
use crate::volatility::{fit_garch, gaussian_quantile_forecast, GarchState};
use crate::HOURS;

/// Days in each of the automatically derived validation and test periods.
pub const AUTO_PERIOD_DAYS: i64 = 182;

/// Penalty search range of the LEAR tuning stage.
pub const LAMBDA_RANGE: (f64, f64) = (1e-5, 1e-1);

/// Loads the configured series: the CSV input or the synthetic generator.
pub fn load_series(cfg: &ExperimentConfig) -> Result<MarketSeries> {
    match (&cfg.data.input, &cfg.data.synthetic) {
        (Some(path), _) => ingest_csv(path, &cfg.data.schema, cfg.data.dst),
        (None, Some(spec)) => make_synthetic(spec, cfg.data.synthetic_seed),
        (None, None) => Err(Error::Config("no data source configured".into())),
    }
}

/// Train / validation / test ranges ending at the last row: the final
/// [`AUTO_PERIOD_DAYS`] days are the test period and the ones before the
/// validation period.
pub fn auto_split(ds: &FeatureDataset) -> Result<SplitRanges> {
    let first = ds.rows.first().ok_or(Error::Empty("feature dataset"))?.date;
    let last = ds.rows.last().expect("non-empty").date;
    let test_start = last - Duration::days(AUTO_PERIOD_DAYS - 1);
    let val_start = test_start - Duration::days(AUTO_PERIOD_DAYS);
    if val_start <= first {
        return Err(Error::SeriesTooShort {
            need: 2 * AUTO_PERIOD_DAYS as usize + 1,
            have: ds.len(),
        });
    }
    Ok(SplitRanges {
        train: DateRange::new(first, val_start - Duration::days(1)),
        validation: DateRange::new(val_start, test_start - Duration::days(1)),
        test: DateRange::new(test_start, last),
    })
}

/// Split-labelled datasets in price and standardised units.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: SplitRanges,
    pub raw: FeatureDataset,
    pub scaled: FeatureDataset,
    pub scaler: Standardizer,
    /// Realised prices of every known day, including lag-only days.
    pub prices: DailyPrices,
}

impl Prepared {
    pub fn from_series(series: &MarketSeries, split: Option<SplitRanges>) -> Result<Self> {
        let all = build_features(&normalize_clock(series)?)?;
        let split = match split {
            Some(s) => s,
            None => auto_split(&all)?,
        };
        let raw = all.split_by_dates(&split)?;
        for s in [Split::Train, Split::Validation, Split::Test] {
            if raw.split_rows(s).next().is_none() {
                return Err(Error::Empty(match s {
                    Split::Train => "training split",
                    Split::Validation => "validation split",
                    Split::Test => "test split",
                }));
            }
        }
        let scaler = Standardizer::fit(&raw)?;
        let scaled = scaler.transform(&raw);
        let prices = daily_prices(&raw);
        Ok(Self {
            split,
            raw,
            scaled,
            scaler,
            prices,
        })
    }

    pub fn dates(&self, split: Split) -> Vec<NaiveDate> {
        self.raw.split_dates(split)
    }

    /// Realised prices of one split.
    pub fn actual(&self, split: Split) -> DailyPrices {
        self.raw.split_rows(split).map(|r| (r.date, r.targets)).collect()
    }

    fn target_stds(&self) -> [f64; HOURS] {
        std::array::from_fn(|h| self.scaler.target_std(h))
    }
}

/// One run's forecasts of one model over the test period.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecast {
    pub point: Vec<PointDay>,
    pub quantiles: Option<Vec<QuantileDay>>,
}

/// Naive point forecasts for `days`.
pub fn naive_points(prices: &DailyPrices, days: &[NaiveDate]) -> Result<Vec<PointDay>> {
    days.iter().map(|d| naive_forecast(prices, *d)).collect()
}

/// Naive forecasts with historical-simulation quantiles fitted on the
/// errors of `source`.
pub fn naive_hs(prep: &Prepared, source: Split, per_hour: bool) -> Result<ModelForecast> {
    let hs = fit_naive_hs(&prep.raw, source, per_hour)?;
    let point = naive_points(&prep.prices, &prep.dates(Split::Test))?;
    let quantiles = point.iter().map(|p| hs.predict(p)).collect();
    Ok(ModelForecast {
        point,
        quantiles: Some(quantiles),
    })
}

/// LEAR forecasts of the validation and test days, in price units.
#[derive(Debug, Clone, PartialEq)]
pub struct LearOutput {
    pub lambda: f64,
    pub validation: Vec<LearDayForecast>,
    pub test: Vec<LearDayForecast>,
}

fn unscale_lear(f: LearDayForecast, scaler: &Standardizer) -> LearDayForecast {
    let un = |v: &[f64; HOURS]| std::array::from_fn(|h| scaler.unscale_target(h, v[h]));
    LearDayForecast {
        members: f.members.iter().map(un).collect(),
        mean: un(&f.mean),
        ..f
    }
}

/// Rolling LEAR on the standardised data; the penalty is tuned on the
/// validation period of the largest window when `section.tune_trials > 0`.
pub fn run_lear(prep: &Prepared, section: &LearSection, seed: u64) -> Result<LearOutput> {
    let opts = LassoOptions::default();
    let lambda = if section.tune_trials > 0 {
        let widest = *section.windows.iter().max().expect("validated non-empty");
        let stds = prep.target_stds();
        let tuned = tune_lambda(&prep.scaled, LAMBDA_RANGE, section.tune_trials, seed, widest, &opts, Some(&stds))?;
        log::info!("tuned LEAR penalty {:e} (validation MAE {:.3})", tuned.lambda, tuned.mae);
        tuned.lambda
    } else {
        section.lambda
    };
    let cfg = LearConfig {
        windows: section.windows.clone(),
        lambda,
        lasso: opts,
    };
    let run = |split| -> Result<Vec<LearDayForecast>> {
        Ok(lear_rolling(&prep.scaled, &prep.dates(split), &cfg)?
            .into_iter()
            .map(|f| unscale_lear(f, &prep.scaler))
            .collect())
    };
    Ok(LearOutput {
        lambda,
        validation: run(Split::Validation)?,
        test: run(Split::Test)?,
    })
}

/// Ensemble-mean point forecasts.
pub fn lear_points(fc: &[LearDayForecast]) -> Vec<PointDay> {
    fc.iter()
        .map(|f| PointDay {
            date: f.date,
            values: f.mean,
        })
        .collect()
}

fn actual_rows(prep: &Prepared, days: &[NaiveDate]) -> Result<Vec<[f64; HOURS]>> {
    days.iter()
        .map(|d| {
            prep.prices
                .get(d)
                .copied()
                .ok_or_else(|| Error::MissingData(format!("realised prices for {d}")))
        })
        .collect()
}

/// QRA on the validation member forecasts, applied to the test days.
pub fn lear_qra(prep: &Prepared, lear: &LearOutput) -> Result<ModelForecast> {
    let val_days: Vec<NaiveDate> = lear.validation.iter().map(|f| f.date).collect();
    let set = fit_qra(&lear.validation, &actual_rows(prep, &val_days)?)?;
    let quantiles = lear.test.iter().map(|f| qra_forecast(&set, f)).collect::<Result<_>>()?;
    Ok(ModelForecast {
        point: lear_points(&lear.test),
        quantiles: Some(quantiles),
    })
}

/// Hourly GARCH(1,1) on validation residuals, updated with each realised
/// test residual.
pub fn lear_garch(prep: &Prepared, lear: &LearOutput) -> Result<ModelForecast> {
    let val_days: Vec<NaiveDate> = lear.validation.iter().map(|f| f.date).collect();
    let val_actual = actual_rows(prep, &val_days)?;
    let test_days: Vec<NaiveDate> = lear.test.iter().map(|f| f.date).collect();
    let test_actual = actual_rows(prep, &test_days)?;
    let mut states = (0..HOURS)
        .map(|h| {
            let res: Vec<f64> = lear
                .validation
                .iter()
                .zip(&val_actual)
                .map(|(f, y)| y[h] - f.mean[h])
                .collect();
            let fit = fit_garch(&res, h)?;
            GarchState::from_history(fit.model, &res)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut quantiles = Vec::with_capacity(lear.test.len());
    for (f, y) in lear.test.iter().zip(&test_actual) {
        let mut hours = [[0.0; crate::distribution::NUM_QUANTILES]; HOURS];
        for (h, state) in states.iter_mut().enumerate() {
            hours[h] = gaussian_quantile_forecast(f.mean[h], state.next_variance)?;
            state.update(y[h] - f.mean[h]);
        }
        quantiles.push(QuantileDay { date: f.date, hours });
    }
    Ok(ModelForecast {
        point: lear_points(&lear.test),
        quantiles: Some(quantiles),
    })
}

/// Conformal intervals around `test` points, calibrated on the last
/// `n_cal` validation days and rolled forward through the test period.
pub fn conformal_forecast(
    prep: &Prepared,
    validation: &[PointDay],
    test: &[PointDay],
    n_cal: usize,
) -> Result<ModelForecast> {
    let pair = |p: &PointDay| -> Result<(PointDay, [f64; HOURS])> {
        let y = prep
            .prices
            .get(&p.date)
            .ok_or_else(|| Error::MissingData(format!("realised prices for {}", p.date)))?;
        Ok((*p, *y))
    };
    let skip = validation.len().saturating_sub(n_cal);
    let cal = validation[skip..].iter().map(pair).collect::<Result<Vec<_>>>()?;
    let tst = test.iter().map(pair).collect::<Result<Vec<_>>>()?;
    Ok(ModelForecast {
        point: test.to_vec(),
        quantiles: Some(conformalize(&cal, &tst, n_cal)?),
    })
}

/// Validation and test forecasts of one neural model.
struct NeuralPair {
    val_point: Vec<PointDay>,
    test: ModelForecast,
}

fn neural_pair(
    prep: &Prepared,
    x_val: &Array2<f64>,
    x_test: &Array2<f64>,
    predict: impl Fn(&Array2<f64>) -> Result<crate::neural::MixtureBatch>,
) -> Result<NeuralPair> {
    let (val_point, _) = to_price_forecasts(&prep.dates(Split::Validation), &predict(x_val)?, &prep.scaler)?;
    let (point, quantiles) = to_price_forecasts(&prep.dates(Split::Test), &predict(x_test)?, &prep.scaler)?;
    Ok(NeuralPair {
        val_point,
        test: ModelForecast {
            point,
            quantiles: Some(quantiles),
        },
    })
}

/// Tuned network settings for the plain and MC-dropout networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSettings {
    pub plain: TrainConfig,
    pub dropout: TrainConfig,
}

/// Seed offsets of the stochastic components within one run.
const SEED_STRIDE: u64 = 1_000;
const MCD_TRAIN_OFFSET: u64 = 500;
const MCD10_PASS_OFFSET: u64 = 700;
const MCD30_PASS_OFFSET: u64 = 800;

fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(SEED_STRIDE * run as u64)
}

/// All neural forecasts of one run. DDNN is the first ensemble member and
/// Ens5 the first five members of the same pool.
fn neural_run(
    prep: &Prepared,
    data: &TrainData,
    x_test: &Array2<f64>,
    roster: &[Model],
    settings: &NeuralSettings,
    n_cal: usize,
    seed: u64,
) -> Result<BTreeMap<Model, ModelForecast>> {
    let has = |m: Model| roster.contains(&m);
    let pool_size = if has(Model::Ens10) || has(Model::Ens10Cp) {
        10
    } else if has(Model::Ens5) {
        5
    } else if has(Model::Ddnn) || has(Model::DdnnCp) {
        1
    } else {
        0
    };
    let mut out = BTreeMap::new();
    if pool_size > 0 {
        let cfg = TrainConfig {
            seed,
            ..settings.plain.clone()
        };
        let members: Vec<MlpParams> = train_ensemble(data, &cfg, pool_size)
            .map_err(|e| e.in_stage("ensemble training"))?
            .into_iter()
            .map(|o| o.params)
            .collect();
        let pair_of = |n: usize| neural_pair(prep, &data.x_val, x_test, |x| ensemble_predict(&members[..n], x.view()));
        let ddnn = pair_of(1)?;
        if has(Model::DdnnCp) {
            out.insert(
                Model::DdnnCp,
                conformal_forecast(prep, &ddnn.val_point, &ddnn.test.point, n_cal)?,
            );
        }
        if has(Model::Ddnn) {
            out.insert(Model::Ddnn, ddnn.test);
        }
        if has(Model::Ens5) {
            out.insert(Model::Ens5, pair_of(5)?.test);
        }
        if has(Model::Ens10) || has(Model::Ens10Cp) {
            let ens = pair_of(10)?;
            if has(Model::Ens10Cp) {
                out.insert(
                    Model::Ens10Cp,
                    conformal_forecast(prep, &ens.val_point, &ens.test.point, n_cal)?,
                );
            }
            if has(Model::Ens10) {
                out.insert(Model::Ens10, ens.test);
            }
        }
    }
    if has(Model::Mcd10) || has(Model::Mcd30) || has(Model::Mcd30Cp) {
        let cfg = TrainConfig {
            seed: seed.wrapping_add(MCD_TRAIN_OFFSET),
            ..settings.dropout.clone()
        };
        let net = train(data, &cfg).map_err(|e| e.in_stage("MC-dropout training"))?.params;
        let rate = cfg.dropout;
        if has(Model::Mcd10) {
            let p = neural_pair(prep, &data.x_val, x_test, |x| {
                mc_dropout_predict(&net, x.view(), 10, rate, seed.wrapping_add(MCD10_PASS_OFFSET))
            })?;
            out.insert(Model::Mcd10, p.test);
        }
        if has(Model::Mcd30) || has(Model::Mcd30Cp) {
            let p = neural_pair(prep, &data.x_val, x_test, |x| {
                mc_dropout_predict(&net, x.view(), 30, rate, seed.wrapping_add(MCD30_PASS_OFFSET))
            })?;
            if has(Model::Mcd30Cp) {
                out.insert(
                    Model::Mcd30Cp,
                    conformal_forecast(prep, &p.val_point, &p.test.point, n_cal)?,
                );
            }
            if has(Model::Mcd30) {
                out.insert(Model::Mcd30, p.test);
            }
        }
    }
    Ok(out)
}

/// Mean trading outcome of one model at one level across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingRow {
    pub model: String,
    pub level: u32,
    pub profit: (f64, f64),
    pub per_transaction: f64,
    pub trades: f64,
    pub profitable_limit_days: f64,
}

/// Reference strategies on the test period.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub strategy: String,
    pub model: String,
    pub profit: f64,
    pub trades: usize,
}

/// Everything a run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub split: SplitRanges,
    pub lear_lambda: Option<f64>,
    pub summary: Vec<SummaryRow>,
    pub trading: Vec<TradingRow>,
    pub references: Vec<ReferenceRow>,
    pub perfect_foresight: f64,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn row(&self, model: Model) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.model == model.name())
    }
}

/// Index ranges of consecutive dates.
fn contiguous(dates: &[NaiveDate]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=dates.len() {
        if i == dates.len() || dates[i] - dates[i - 1] != Duration::days(1) {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

fn merge_ledgers(parts: Vec<TradeLedger>) -> TradeLedger {
    let mut all = TradeLedger {
        entries: Vec::new(),
        trajectory: Vec::new(),
        total_profit: 0.0,
        trades: 0,
        profitable_limit_days: 0,
    };
    for p in parts {
        all.entries.extend(p.entries);
        all.trajectory.extend(p.trajectory);
        all.total_profit += p.total_profit;
        all.trades += p.trades;
        all.profitable_limit_days += p.profitable_limit_days;
    }
    all
}

/// Trading days of each contiguous stretch of the forecast. Point-only
/// forecasts get degenerate intervals at the point.
fn trading_segments(fc: &ModelForecast, actual: &DailyPrices, level: u32) -> Result<Vec<Vec<TradingDay>>> {
    let dates: Vec<NaiveDate> = fc.point.iter().map(|p| p.date).collect();
    contiguous(&dates)
        .into_iter()
        .map(|r| match &fc.quantiles {
            Some(q) => trading_days(&fc.point[r.clone()], &q[r], actual, level),
            None => fc.point[r]
                .iter()
                .map(|p| {
                    let y = actual
                        .get(&p.date)
                        .ok_or_else(|| Error::MissingData(format!("realised prices for {}", p.date)))?;
                    Ok(TradingDay {
                        date: p.date,
                        point: p.values.to_vec(),
                        lower: p.values.to_vec(),
                        upper: p.values.to_vec(),
                        actual: y.to_vec(),
                    })
                })
                .collect(),
        })
        .collect()
}

/// Runs `strategy` on each contiguous stretch (each starts and ends half
/// charged) and merges the ledgers.
fn backtest_segments(
    segments: &[Vec<TradingDay>],
    strategy: fn(&[TradingDay], f64) -> Result<TradeLedger>,
    xi: f64,
) -> Result<TradeLedger> {
    Ok(merge_ledgers(
        segments.iter().map(|s| strategy(s, xi)).collect::<Result<_>>()?,
    ))
}

/// Quantile strategy backtest of one forecast at `level`, restarted at
/// every gap in its dates.
pub fn backtest_forecast(fc: &ModelForecast, actual: &DailyPrices, level: u32, xi: f64) -> Result<TradeLedger> {
    backtest_segments(&trading_segments(fc, actual, level)?, backtest, xi)
}

/// Perfect-foresight profit over `days`, restarted at every gap.
pub fn perfect_foresight_over(actual: &DailyPrices, days: &[NaiveDate], xi: f64) -> Result<f64> {
    contiguous(days)
        .into_iter()
        .map(|r| {
            let prices = days[r]
                .iter()
                .map(|d| {
                    actual
                        .get(d)
                        .map(|y| y.to_vec())
                        .ok_or_else(|| Error::MissingData(format!("realised prices for {d}")))
                })
                .collect::<Result<Vec<_>>>()?;
            perfect_foresight(&prices, xi)
        })
        .sum()
}

/// Mean absolute error of each day.
pub fn daily_abs_error(point: &[PointDay], actual: &DailyPrices) -> Result<Vec<f64>> {
    point
        .iter()
        .map(|p| {
            let y = actual
                .get(&p.date)
                .ok_or_else(|| Error::MissingData(format!("realised prices for {}", p.date)))?;
            Ok(p.values.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / HOURS as f64)
        })
        .collect()
}

fn mean_series(runs: &[Vec<f64>]) -> Vec<f64> {
    let n = runs.len() as f64;
    (0..runs[0].len())
        .map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / n)
        .collect()
}

fn mean_curve(reports: &[MetricsReport], pick: fn(&MetricsReport) -> &Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    let n = reports.len() as f64;
    levels()
        .enumerate()
        .map(|(i, l)| (l, reports.iter().map(|r| pick(r)[i].1).sum::<f64>() / n))
        .collect()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }
}

/// Applies the search stage, if configured, and returns the settings used
/// by every run.
pub fn neural_settings(cfg: &ExperimentConfig, data: &TrainData, out: Option<&Path>) -> Result<NeuralSettings> {
    let nn = &cfg.neural;
    let plain = nn.train_config(cfg.seed);
    let dropout = TrainConfig {
        dropout: nn.mc_dropout,
        ..plain.clone()
    };
    if nn.hpo_trials == 0 {
        return Ok(NeuralSettings { plain, dropout });
    }
    let a = hpo(data, &plain, nn.hpo_trials, nn.hpo_runs, false, cfg.seed)?;
    let b = hpo(data, &dropout, nn.hpo_trials, nn.hpo_runs, true, cfg.seed.wrapping_add(1))?;
    if let Some(dir) = out {
        let mut o = Outputs::new(dir)?;
        write_trials(&a.trials, o.create("hpo_plain.csv")?)?;
        write_trials(&b.trials, o.create("hpo_dropout.csv")?)?;
    }
    Ok(NeuralSettings {
        plain: a.best,
        dropout: b.best,
    })
}

/// Forecasts of every rostered model over the test period.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    pub lear_lambda: Option<f64>,
    /// Deterministic models, identical in every run.
    pub fixed: BTreeMap<Model, ModelForecast>,
    /// Stochastic models, one map per run.
    pub neural: Vec<BTreeMap<Model, ModelForecast>>,
}

impl Forecasts {
    /// The forecast of `m` in each of `runs` runs.
    pub fn runs_of(&self, m: Model, runs: usize) -> Vec<&ModelForecast> {
        match self.fixed.get(&m) {
            Some(f) => vec![f; runs],
            None => self.neural.iter().filter_map(|run| run.get(&m)).collect(),
        }
    }
}

/// Runs the model stages of `cfg` on prepared data. Search trials, when
/// configured, are written to `out`.
pub fn forecast_models(cfg: &ExperimentConfig, prep: &Prepared, out: Option<&Path>) -> Result<Forecasts> {
    let roster = cfg.roster()?;
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);

    // deterministic models: one forecast, replicated across runs
    let mut fixed: BTreeMap<Model, ModelForecast> = BTreeMap::new();
    if roster.contains(&Model::NaiveHsTrain) {
        fixed.insert(
            Model::NaiveHsTrain,
            naive_hs(prep, Split::Train, cfg.hs.per_hour).map_err(stage("naive"))?,
        );
    }
    if roster.contains(&Model::NaiveHsVal) {
        fixed.insert(
            Model::NaiveHsVal,
            naive_hs(prep, Split::Validation, cfg.hs.per_hour).map_err(stage("naive"))?,
        );
    }
    let needs_lear = roster
        .iter()
        .any(|m| matches!(m, Model::Lear | Model::LearQra | Model::LearGarch | Model::LearCp));
    let mut lear_lambda = None;
    if needs_lear {
        let lear = run_lear(prep, &cfg.lear, cfg.seed).map_err(stage("lear"))?;
        lear_lambda = Some(lear.lambda);
        if roster.contains(&Model::Lear) {
            fixed.insert(
                Model::Lear,
                ModelForecast {
                    point: lear_points(&lear.test),
                    quantiles: None,
                },
            );
        }
        if roster.contains(&Model::LearQra) {
            fixed.insert(Model::LearQra, lear_qra(prep, &lear).map_err(stage("qra"))?);
        }
        if roster.contains(&Model::LearGarch) {
            fixed.insert(Model::LearGarch, lear_garch(prep, &lear).map_err(stage("garch"))?);
        }
        if roster.contains(&Model::LearCp) {
            let cp = conformal_forecast(
                prep,
                &lear_points(&lear.validation),
                &lear_points(&lear.test),
                cfg.conformal.n_cal,
            )
            .map_err(stage("conformal"))?;
            fixed.insert(Model::LearCp, cp);
        }
    }

    let neural: Vec<BTreeMap<Model, ModelForecast>> = if roster.iter().any(|m| m.is_stochastic()) {
        let data = TrainData::from_dataset(&prep.scaled).map_err(stage("neural"))?;
        let (x_test, _) = split_arrays(&prep.scaled, Split::Test);
        let settings = neural_settings(cfg, &data, out).map_err(stage("hpo"))?;
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                neural_run(
                    prep,
                    &data,
                    &x_test,
                    &roster,
                    &settings,
                    cfg.conformal.n_cal,
                    run_seed(cfg.seed, r),
                )
            })
            .collect::<Result<_>>()
            .map_err(stage("neural"))?
    } else {
        Vec::new()
    };
    Ok(Forecasts {
        lear_lambda,
        fixed,
        neural,
    })
}

/// Runs every configured stage and writes the reports to `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let roster = cfg.roster()?;
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);

    let series = load_series(cfg).map_err(stage("ingest"))?;
    let prep = Prepared::from_series(&series, cfg.split).map_err(stage("features"))?;
    let test_days = prep.dates(Split::Test);
    let actual = prep.actual(Split::Test);
    log::info!(
        "splits: train {} / validation {} / test {} days",
        prep.dates(Split::Train).len(),
        prep.dates(Split::Validation).len(),
        test_days.len()
    );

    let forecasts = forecast_models(cfg, &prep, Some(out))?;
    let lear_lambda = forecasts.lear_lambda;
    let mut outputs = Outputs::new(out)?;
    let forecasts_of = |m: Model| forecasts.runs_of(m, cfg.runs);

    // evaluation
    let mut summary = Vec::new();
    let mut picp_curves = Vec::new();
    let mut mpiw_curves = Vec::new();
    let mut crps_losses = Vec::new();
    let mut mae_losses = Vec::new();
    for &m in &roster {
        let runs = forecasts_of(m);
        let reports = runs
            .iter()
            .map(|f| match &f.quantiles {
                Some(q) => evaluate(&f.point, q, &actual),
                None => evaluate_point(&f.point, &actual),
            })
            .collect::<Result<Vec<_>>>()
            .map_err(stage("evaluate"))?;
        summary.push(summarize(m.name(), &reports)?);
        let abs = runs
            .iter()
            .map(|f| daily_abs_error(&f.point, &actual))
            .collect::<Result<Vec<_>>>()?;
        mae_losses.push((m, mean_series(&abs)));
        if m.is_probabilistic() {
            picp_curves.push((m, mean_curve(&reports, |r| &r.picp)));
            mpiw_curves.push((m, mean_curve(&reports, |r| &r.mpiw)));
            let crps = runs
                .iter()
                .map(|f| daily_crps(f.quantiles.as_ref().expect("probabilistic"), &actual))
                .collect::<Result<Vec<_>>>()?;
            crps_losses.push((m, mean_series(&crps)));
        }
    }
    write_summary(&summary, outputs.create("summary.csv")?)?;
    let as_cols = |curves: &[(Model, Vec<(u32, f64)>)]| -> Vec<(&'static str, Vec<(u32, f64)>)> {
        curves.iter().map(|(m, c)| (m.name(), c.clone())).collect()
    };
    for (name, curves) in [("picp.csv", &picp_curves), ("mpiw.csv", &mpiw_curves)] {
        let cols = as_cols(curves);
        let view: Vec<(&str, &[(u32, f64)])> = cols.iter().map(|(n, c)| (*n, c.as_slice())).collect();
        write_curve(&view, outputs.create(name)?)?;
    }

    // Diebold-Mariano matrices
    for (tag, losses) in [("crps", &crps_losses), ("mae", &mae_losses)] {
        if losses.len() < 2 {
            continue;
        }
        let names: Vec<String> = losses.iter().map(|(m, _)| m.name().to_string()).collect();
        let series: Vec<Vec<f64>> = losses.iter().map(|(_, l)| l.clone()).collect();
        let dm = dm_matrix(&names, &series).map_err(stage("dm"))?;
        dm.write_csv(&dm.statistic, outputs.create(&format!("dm_{tag}_statistic.csv"))?)?;
        dm.write_csv(&dm.p_value, outputs.create(&format!("dm_{tag}_pvalue.csv"))?)?;
    }

    // trading
    let xi = cfg.trading.efficiency;
    let realised = ModelForecast {
        point: test_days
            .iter()
            .map(|d| PointDay {
                date: *d,
                values: actual[d],
            })
            .collect(),
        quantiles: None,
    };
    let realised = trading_segments(&realised, &actual, cfg.trading.ledger_level).map_err(stage("backtest"))?;
    let pf = realised
        .iter()
        .map(|s| perfect_foresight(&s.iter().map(|d| d.actual.clone()).collect::<Vec<_>>(), xi))
        .sum::<Result<f64>>()
        .map_err(stage("backtest"))?;
    let fixed_hours = backtest_segments(&realised, backtest_fixed_hours, xi).map_err(stage("backtest"))?;
    let mut references = vec![
        ReferenceRow {
            strategy: "perfect_foresight".into(),
            model: String::new(),
            profit: pf,
            trades: 0,
        },
        ReferenceRow {
            strategy: "fixed_hours".into(),
            model: String::new(),
            profit: fixed_hours.total_profit,
            trades: fixed_hours.trades,
        },
    ];
    let mut trading = Vec::new();
    let mut profit_curves = Vec::new();
    for &m in &roster {
        let runs = forecasts_of(m);
        let point_only = |f: &ModelForecast| ModelForecast {
            point: f.point.clone(),
            quantiles: None,
        };
        let unlimited = runs
            .iter()
            .map(|f| {
                let segs = trading_segments(&point_only(f), &actual, cfg.trading.ledger_level)?;
                backtest_segments(&segs, backtest_unlimited, xi)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(stage("backtest"))?;
        references.push(ReferenceRow {
            strategy: "unlimited".into(),
            model: m.name().into(),
            profit: unlimited.iter().map(|l| l.total_profit).sum::<f64>() / runs.len() as f64,
            trades: unlimited[0].trades,
        });
        if !m.is_probabilistic() {
            continue;
        }
        let mut curve = Vec::new();
        for &level in &cfg.trading.levels {
            let ledgers = runs
                .iter()
                .map(|f| backtest_segments(&trading_segments(f, &actual, level)?, backtest, xi))
                .collect::<Result<Vec<_>>>()
                .map_err(stage("backtest"))?;
            if level == cfg.trading.ledger_level {
                ledgers[0].write_csv(outputs.create(&format!("ledgers/{}.csv", m.name()))?)?;
            }
            let n = ledgers.len() as f64;
            let profits: Vec<f64> = ledgers.iter().map(|l| l.total_profit).collect();
            let row = TradingRow {
                model: m.name().into(),
                level,
                profit: mean_std(&profits),
                per_transaction: ledgers.iter().map(|l| l.per_transaction_profit()).sum::<f64>() / n,
                trades: ledgers.iter().map(|l| l.trades as f64).sum::<f64>() / n,
                profitable_limit_days: ledgers.iter().map(|l| l.profitable_limit_days as f64).sum::<f64>() / n,
            };
            curve.push((level, row.profit.0));
            trading.push(row);
        }
        profit_curves.push((m, curve));
    }
    write_trading(&trading, outputs.create("trading.csv")?)?;
    write_references(&references, outputs.create("trading_reference.csv")?)?;
    {
        let cols = as_cols(&profit_curves);
        let view: Vec<(&str, &[(u32, f64)])> = cols.iter().map(|(n, c)| (*n, c.as_slice())).collect();
        write_curve(&view, outputs.create("profit_curve.csv")?)?;
    }

    if cfg.output.forecasts {
        for &m in &roster {
            let f = forecasts_of(m)[0];
            write_points(&f.point, outputs.create(&format!("forecasts/{}_points.csv", m.name()))?)?;
            if let Some(q) = &f.quantiles {
                write_quantiles(q, outputs.create(&format!("forecasts/{}_quantiles.csv", m.name()))?)?;
            }
        }
    }

    Ok(RunSummary {
        split: prep.split,
        lear_lambda,
        summary,
        trading,
        references,
        perfect_foresight: pf,
        files: outputs.files,
    })
}

pub fn write_trading<W: std::io::Write>(rows: &[TradingRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "model",
        "level",
        "profit",
        "profit_std",
        "per_transaction",
        "trades",
        "profitable_limit_days",
    ])?;
    for r in rows {
        wtr.write_record(&[
            r.model.clone(),
            r.level.to_string(),
            format!("{:.3}", r.profit.0),
            format!("{:.3}", r.profit.1),
            format!("{:.3}", r.per_transaction),
            format!("{:.1}", r.trades),
            format!("{:.1}", r.profitable_limit_days),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<trading output>", e))?;
    Ok(())
}

fn write_references<W: std::io::Write>(rows: &[ReferenceRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["strategy", "model", "profit", "trades"])?;
    for r in rows {
        wtr.write_record(&[
            r.strategy.clone(),
            r.model.clone(),
            format!("{:.3}", r.profit),
            r.trades.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<trading output>", e))?;
    Ok(())
}

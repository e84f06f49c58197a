//! One handler per verb.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use probcast_core::data::{normalize_clock, write_dataset, write_series, Split};
use probcast_core::distribution::{read_points, read_quantiles, DailyPrices, PointDay};
use probcast_core::linear::{fit_lear_models, tune_lambda, write_lear_models, LassoOptions, LearConfig};
use probcast_core::metrics::{
    daily_crps, dm_matrix, evaluate, evaluate_point, summarize, write_curve, write_summary, SummaryRow,
};
use probcast_core::neural::{
    ensemble_predict, hpo, mc_dropout_predict, split_arrays, to_price_forecasts, train, train_ensemble,
    write_params, write_trials, MixtureBatch, TrainConfig, TrainData,
};
use probcast_core::pipeline::{
    backtest_forecast, conformal_forecast, daily_abs_error, forecast_models, lear_garch, lear_points, naive_hs,
    perfect_foresight_over, run_lear, run_pipeline, ExperimentConfig, Model, ModelForecast, Prepared,
    LAMBDA_RANGE,
};
use probcast_core::quantreg::{fit_qra, qra_forecast, write_qra};
use probcast_core::synth::{make_synthetic, SynthSpec};
use probcast_core::volatility::{fit_garch, write_garch};
use probcast_core::{Error, HOURS};

use crate::setup::{
    create, open, prepare, read_forecast_dir, read_forecast_spec, write_forecast, DataArgs, LearArgs,
    NamedForecast, NeuralArgs,
};

pub type CmdResult = anyhow::Result<()>;

pub fn synth(spec: Option<&Path>, days: Option<usize>, seed: u64, out: &Path) -> CmdResult {
    let mut spec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(d) = days {
        spec.days = d;
    }
    spec.validate()?;
    let series = make_synthetic(&spec, seed)?;
    write_series(&series, create(out)?)?;
    println!("wrote {} hours to {}", series.records.len(), out.display());
    Ok(())
}

pub fn ingest(data: &DataArgs, out: &Path) -> CmdResult {
    let cfg = data.config(&[])?;
    let series = probcast_core::pipeline::load_series(&cfg)?;
    let normalized = normalize_clock(&series)?;
    write_series(&normalized, create(out)?)?;
    println!("wrote {} hours to {}", normalized.records.len(), out.display());
    Ok(())
}

pub fn features(data: &DataArgs, out: &Path, scaled_out: Option<&Path>, scaler_out: Option<&Path>) -> CmdResult {
    let prep = prepare(&data.config(&[])?)?;
    write_dataset(&prep.raw, create(out)?)?;
    if let Some(p) = scaled_out {
        write_dataset(&prep.scaled, create(p)?)?;
    }
    if let Some(p) = scaler_out {
        prep.scaler.write(create(p)?)?;
    }
    print_split(&prep);
    Ok(())
}

fn print_split(prep: &Prepared) {
    for (name, s) in [
        ("train", Split::Train),
        ("validation", Split::Validation),
        ("test", Split::Test),
    ] {
        let days = prep.dates(s);
        println!(
            "{name:<10} {} to {} ({} days)",
            days.first().expect("non-empty split"),
            days.last().expect("non-empty split"),
            days.len()
        );
    }
}

pub fn tune_lambda_cmd(data: &DataArgs, trials: usize, window: Option<usize>, out: Option<&Path>) -> CmdResult {
    let cfg = data.config(&[])?;
    let prep = prepare(&cfg)?;
    let window = window.unwrap_or_else(|| *cfg.lear.windows.iter().max().expect("validated non-empty"));
    let stds: [f64; HOURS] = std::array::from_fn(|h| prep.scaler.target_std(h));
    let res = tune_lambda(
        &prep.scaled,
        LAMBDA_RANGE,
        trials,
        cfg.seed,
        window,
        &LassoOptions::default(),
        Some(&stds),
    )?;
    if let Some(path) = out {
        let mut wtr = csv_writer(path)?;
        wtr.write_record(["lambda", "validation_mae"])?;
        for (l, mae) in &res.trials {
            wtr.write_record([l.to_string(), mae.to_string()])?;
        }
        wtr.flush()?;
    }
    println!("lambda {:e} (validation MAE {:.4})", res.lambda, res.mae);
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn fit_lear(data: &DataArgs, lear: &LearArgs, as_of: Option<NaiveDate>, out_dir: &Path) -> CmdResult {
    let mut cfg = data.config(&[])?;
    lear.apply(&mut cfg)?;
    let prep = prepare(&cfg)?;
    let day = match as_of {
        Some(d) => d,
        None => prep.dates(Split::Test)[0],
    };
    let lcfg = LearConfig {
        windows: cfg.lear.windows.clone(),
        lambda: cfg.lear.lambda,
        lasso: LassoOptions::default(),
    };
    let models = fit_lear_models(&prep.scaled, day, &lcfg)?;
    write_lear_models(&models, create(&out_dir.join("lear_models.csv"))?)?;
    prep.scaler.write(create(&out_dir.join("scaler.csv"))?)?;
    let nonzero: usize = models
        .iter()
        .map(|m| m.model.coefficients.iter().filter(|c| **c != 0.0).count())
        .sum();
    println!(
        "fitted {} models as of {day} (lambda {:e}, {nonzero} non-zero coefficients) into {}",
        models.len(),
        cfg.lear.lambda,
        out_dir.display()
    );
    Ok(())
}

fn realised(prices: &DailyPrices, days: &[NaiveDate]) -> anyhow::Result<Vec<[f64; HOURS]>> {
    days.iter()
        .map(|d| {
            prices
                .get(d)
                .copied()
                .ok_or_else(|| Error::MissingData(format!("realised prices for {d}")).into())
        })
        .collect()
}

pub fn fit_qra_cmd(data: &DataArgs, lear: &LearArgs, out_dir: &Path) -> CmdResult {
    let mut cfg = data.config(&[])?;
    lear.apply(&mut cfg)?;
    let prep = prepare(&cfg)?;
    let fc = run_lear(&prep, &cfg.lear, cfg.seed).map_err(|e| e.in_stage("lear"))?;
    let val_days: Vec<NaiveDate> = fc.validation.iter().map(|f| f.date).collect();
    let set = fit_qra(&fc.validation, &realised(&prep.prices, &val_days)?)?;
    write_qra(&set, create(&out_dir.join("qra.csv"))?)?;
    let quantiles = fc.test.iter().map(|f| qra_forecast(&set, f)).collect::<Result<_, _>>()?;
    let forecast = ModelForecast {
        point: lear_points(&fc.test),
        quantiles: Some(quantiles),
    };
    write_forecast(out_dir, Model::LearQra.name(), &forecast)?;
    Ok(())
}

pub fn fit_garch_cmd(data: &DataArgs, lear: &LearArgs, out_dir: &Path) -> CmdResult {
    let mut cfg = data.config(&[])?;
    lear.apply(&mut cfg)?;
    let prep = prepare(&cfg)?;
    let fc = run_lear(&prep, &cfg.lear, cfg.seed).map_err(|e| e.in_stage("lear"))?;
    let val_days: Vec<NaiveDate> = fc.validation.iter().map(|f| f.date).collect();
    let actual = realised(&prep.prices, &val_days)?;
    let models = (0..HOURS)
        .map(|h| {
            let res: Vec<f64> = fc.validation.iter().zip(&actual).map(|(f, y)| y[h] - f.mean[h]).collect();
            fit_garch(&res, h).map(|fit| fit.model)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_garch(&models, create(&out_dir.join("garch.csv"))?)?;
    write_forecast(out_dir, Model::LearGarch.name(), &lear_garch(&prep, &fc)?)?;
    Ok(())
}

pub fn fit_naive(data: &DataArgs, source: Split, per_hour: bool, out_dir: &Path) -> CmdResult {
    let prep = prepare(&data.config(&[])?)?;
    let model = match source {
        Split::Validation => Model::NaiveHsVal,
        _ => Model::NaiveHsTrain,
    };
    write_forecast(out_dir, model.name(), &naive_hs(&prep, source, per_hour)?)?;
    Ok(())
}

pub fn conformalize(data: &DataArgs, base: &Path, n_cal: usize, name: &str, out_dir: &Path) -> CmdResult {
    let prep = prepare(&data.config(&[])?)?;
    let points = read_points(open(base)?)?;
    let in_split = |s: Split| -> Vec<PointDay> {
        let days = prep.dates(s);
        points.iter().filter(|p| days.binary_search(&p.date).is_ok()).copied().collect()
    };
    let (val, test) = (in_split(Split::Validation), in_split(Split::Test));
    if val.is_empty() || test.is_empty() {
        bail!(Error::MissingData(format!("validation or test days in {}", base.display())));
    }
    write_forecast(out_dir, name, &conformal_forecast(&prep, &val, &test, n_cal)?)?;
    Ok(())
}

/// Settings, data and test inputs shared by the network verbs.
struct NeuralSetup {
    cfg: ExperimentConfig,
    prep: Prepared,
    data: TrainData,
    x_test: ndarray::Array2<f64>,
}

impl NeuralSetup {
    fn new(data: &DataArgs, nn: &NeuralArgs) -> anyhow::Result<Self> {
        let mut cfg = data.config(&[])?;
        nn.apply(&mut cfg)?;
        let prep = prepare(&cfg)?;
        let train_data = TrainData::from_dataset(&prep.scaled)?;
        let (x_test, _) = split_arrays(&prep.scaled, Split::Test);
        Ok(Self {
            cfg,
            prep,
            data: train_data,
            x_test,
        })
    }

    fn train_config(&self, dropout: f64) -> TrainConfig {
        TrainConfig {
            dropout,
            ..self.cfg.neural.train_config(self.cfg.seed)
        }
    }

    fn forecast(&self, batch: &MixtureBatch) -> anyhow::Result<ModelForecast> {
        let (point, quantiles) = to_price_forecasts(&self.prep.dates(Split::Test), batch, &self.prep.scaler)?;
        Ok(ModelForecast {
            point,
            quantiles: Some(quantiles),
        })
    }
}

fn save_params(path: &Path, params: &probcast_core::neural::MlpParams) -> CmdResult {
    write_params(params, create(path)?)?;
    Ok(())
}

pub fn train_ddnn(data: &DataArgs, nn: &NeuralArgs, out_dir: &Path) -> CmdResult {
    let s = NeuralSetup::new(data, nn)?;
    let out = train(&s.data, &s.train_config(0.0))?;
    log::info!("best epoch {} of {} (validation NLL {:.4})", out.best_epoch, out.epochs_run, out.best_val_loss);
    save_params(&out_dir.join("ddnn_params.txt"), &out.params)?;
    let batch = ensemble_predict(std::slice::from_ref(&out.params), s.x_test.view())?;
    write_forecast(out_dir, Model::Ddnn.name(), &s.forecast(&batch)?)?;
    Ok(())
}

pub fn train_ens(data: &DataArgs, nn: &NeuralArgs, n: usize, out_dir: &Path) -> CmdResult {
    let s = NeuralSetup::new(data, nn)?;
    let members: Vec<_> = train_ensemble(&s.data, &s.train_config(0.0), n)?
        .into_iter()
        .map(|o| o.params)
        .collect();
    for (i, p) in members.iter().enumerate() {
        save_params(&out_dir.join(format!("ens_member_{i:02}.txt")), p)?;
    }
    let batch = ensemble_predict(&members, s.x_test.view())?;
    write_forecast(out_dir, &format!("Ens{n}"), &s.forecast(&batch)?)?;
    Ok(())
}

pub fn train_mcd(data: &DataArgs, nn: &NeuralArgs, passes: usize, dropout: Option<f64>, out_dir: &Path) -> CmdResult {
    let s = NeuralSetup::new(data, nn)?;
    let rate = dropout.unwrap_or(s.cfg.neural.mc_dropout);
    if !(rate > 0.0 && rate < 1.0) {
        bail!(Error::Config(format!("dropout {rate} outside (0, 1)")));
    }
    let cfg = s.train_config(rate);
    let net = train(&s.data, &cfg)?.params;
    save_params(&out_dir.join("mcd_params.txt"), &net)?;
    let batch = mc_dropout_predict(&net, s.x_test.view(), passes, rate, cfg.seed.wrapping_add(1))?;
    write_forecast(out_dir, &format!("MCD{passes}"), &s.forecast(&batch)?)?;
    Ok(())
}

pub fn hpo_cmd(data: &DataArgs, nn: &NeuralArgs, trials: usize, runs: usize, dropout: bool, out: &Path) -> CmdResult {
    let s = NeuralSetup::new(data, nn)?;
    let base = s.train_config(if dropout { s.cfg.neural.mc_dropout } else { 0.0 });
    let res = hpo(&s.data, &base, trials, runs, dropout, s.cfg.seed)?;
    write_trials(&res.trials, create(out)?)?;
    println!(
        "best: learning_rate {:e}, l2 {:e}, dropout {}",
        res.best.learning_rate, res.best.l2, res.best.dropout
    );
    Ok(())
}

pub fn forecast(
    data: &DataArgs,
    lear: &LearArgs,
    nn: &NeuralArgs,
    models: &[String],
    runs: Option<usize>,
    out_dir: &Path,
) -> CmdResult {
    let names: Vec<&str> = models.iter().map(String::as_str).collect();
    let mut cfg = data.config(&names)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    lear.apply(&mut cfg)?;
    nn.apply(&mut cfg)?;
    cfg.validate()?;
    let prep = prepare(&cfg)?;
    let fc = forecast_models(&cfg, &prep, Some(out_dir))?;
    for m in cfg.roster()? {
        for (run, f) in fc.runs_of(m, cfg.runs).into_iter().enumerate() {
            let name = if m.is_stochastic() && cfg.runs > 1 {
                format!("{}_run{run:02}", m.name())
            } else if run == 0 {
                m.name().to_string()
            } else {
                continue;
            };
            write_forecast(out_dir, &name, f)?;
        }
    }
    if let Some(l) = fc.lear_lambda {
        println!("LEAR lambda {l:e}");
    }
    Ok(())
}

fn load_forecasts(specs: &[String], dir: Option<&Path>) -> anyhow::Result<Vec<NamedForecast>> {
    let mut all = specs.iter().map(|s| read_forecast_spec(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(d) = dir {
        all.extend(read_forecast_dir(d)?);
    }
    if all.is_empty() {
        bail!(Error::Config("no forecasts given (use --forecast or --dir)".into()));
    }
    Ok(all)
}

pub fn evaluate_cmd(data: &DataArgs, specs: &[String], dir: Option<&Path>, out_dir: &Path) -> CmdResult {
    let prep = prepare(&data.config(&[])?)?;
    let forecasts = load_forecasts(specs, dir)?;
    let mut summary = Vec::new();
    let mut picp = Vec::new();
    let mut mpiw = Vec::new();
    for f in &forecasts {
        let report = match &f.quantiles {
            Some(q) => evaluate(&f.point, q, &prep.prices),
            None => evaluate_point(&f.point, &prep.prices),
        }
        .with_context(|| format!("evaluating {}", f.name))?;
        if f.quantiles.is_some() {
            picp.push((f.name.as_str(), report.picp.clone()));
            mpiw.push((f.name.as_str(), report.mpiw.clone()));
        }
        summary.push(summarize(&f.name, std::slice::from_ref(&report))?);
    }
    write_summary(&summary, create(&out_dir.join("summary.csv"))?)?;
    for (file, curves) in [("picp.csv", &picp), ("mpiw.csv", &mpiw)] {
        let view: Vec<(&str, &[(u32, f64)])> = curves.iter().map(|(n, c)| (*n, c.as_slice())).collect();
        write_curve(&view, create(&out_dir.join(file))?)?;
    }
    print_summary(&summary);
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<20} {:>9} {:>9} {:>9} {:>9}", "model", "MAE", "RMSE", "CRPS", "MAACE");
    let opt = |v: Option<(f64, f64)>| v.map_or("-".to_string(), |(m, _)| format!("{m:.3}"));
    for r in rows {
        println!(
            "{:<20} {:>9.3} {:>9.3} {:>9} {:>9}",
            r.model,
            r.mae.0,
            r.rmse.0,
            opt(r.crps),
            opt(r.maace)
        );
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Loss {
    Crps,
    Mae,
}

pub fn dm_cmd(data: &DataArgs, specs: &[String], dir: Option<&Path>, loss: Loss, out_dir: &Path) -> CmdResult {
    let prep = prepare(&data.config(&[])?)?;
    let forecasts = load_forecasts(specs, dir)?;
    if forecasts.len() < 2 {
        bail!(Error::Config("the test needs at least two forecasts".into()));
    }
    let mut names = Vec::new();
    let mut losses = Vec::new();
    for f in &forecasts {
        let l = match (loss, &f.quantiles) {
            (Loss::Mae, _) => daily_abs_error(&f.point, &prep.prices)?,
            (Loss::Crps, Some(q)) => daily_crps(q, &prep.prices)?,
            (Loss::Crps, None) => bail!(Error::Config(format!("{} has no quantiles for CRPS", f.name))),
        };
        names.push(f.name.clone());
        losses.push(l);
    }
    let dm = dm_matrix(&names, &losses)?;
    let tag = match loss {
        Loss::Crps => "crps",
        Loss::Mae => "mae",
    };
    dm.write_csv(&dm.statistic, create(&out_dir.join(format!("dm_{tag}_statistic.csv")))?)?;
    dm.write_csv(&dm.p_value, create(&out_dir.join(format!("dm_{tag}_pvalue.csv")))?)?;
    println!("wrote {tag} matrices for {} forecasts to {}", names.len(), out_dir.display());
    Ok(())
}

pub struct BacktestArgs<'a> {
    pub points: &'a Path,
    pub quantiles: Option<&'a Path>,
    pub level: u32,
    pub efficiency: Option<f64>,
    pub out: Option<&'a Path>,
}

pub fn backtest_cmd(data: &DataArgs, args: &BacktestArgs) -> CmdResult {
    let cfg = data.config(&[])?;
    let prep = prepare(&cfg)?;
    let xi = args.efficiency.unwrap_or(cfg.trading.efficiency);
    if !(xi > 0.0 && xi <= 1.0) {
        bail!(Error::Config(format!("efficiency {xi} outside (0, 1]")));
    }
    if args.level == 0 || args.level >= 100 || !args.level.is_multiple_of(2) {
        bail!(Error::Config(format!("level {} is not on the 2:98:2 grid", args.level)));
    }
    let fc = ModelForecast {
        point: read_points(open(args.points)?)?,
        quantiles: args.quantiles.map(|q| read_quantiles(open(q)?)).transpose()?,
    };
    let ledger = backtest_forecast(&fc, &prep.prices, args.level, xi)?;
    if let Some(out) = args.out {
        ledger.write_csv(create(out)?)?;
    }
    let days: Vec<NaiveDate> = fc.point.iter().map(|p| p.date).collect();
    let pf = perfect_foresight_over(&prep.prices, &days, xi)?;
    println!("profit            {:.3}", ledger.total_profit);
    println!("per transaction   {:.3}", ledger.per_transaction_profit());
    println!("trades            {}", ledger.trades);
    println!("perfect foresight {pf:.3}");
    Ok(())
}

pub fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, runs: Option<usize>) -> CmdResult {
    let mut cfg = ExperimentConfig::parse_file(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = runs {
        cfg.runs = r;
    }
    cfg.validate()?;
    let out = out.unwrap_or_else(|| cfg.output.dir.clone());
    let summary = run_pipeline(&cfg, &out)?;
    if let Some(l) = summary.lear_lambda {
        println!("LEAR lambda {l:e}");
    }
    print_summary(&summary.summary);
    let best: BTreeMap<&str, f64> = summary
        .trading
        .iter()
        .fold(BTreeMap::new(), |mut acc, r| {
            let e = acc.entry(r.model.as_str()).or_insert(f64::NEG_INFINITY);
            *e = e.max(r.profit.0);
            acc
        });
    for (m, p) in &best {
        println!("best trading profit {m}: {p:.2}");
    }
    println!("perfect foresight {:.2}", summary.perfect_foresight);
    println!("reports in {}", out.display());
    Ok(())
}

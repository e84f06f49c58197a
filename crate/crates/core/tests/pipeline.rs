use std::path::Path;

use probcast_core::data::{build_features, normalize_clock, DateRange, SplitRanges};
use probcast_core::linear::{fit_lear_hour, lear_rolling, LassoOptions, LearConfig};
use probcast_core::metrics::mae_rmse;
use probcast_core::pipeline::{naive_points, run_pipeline, ExperimentConfig, Model};
use probcast_core::synth::{make_synthetic, SynthSpec};
use probcast_core::ErrorKind;

const SMALL: &str = r#"
seed = 3
runs = 2
models = ["Naive-HS_train", "Naive-HS_val", "LEAR", "LEAR-QRA", "LEAR-GARCH", "LEAR-CP",
          "DDNN", "Ens5", "Ens10", "MCD10", "MCD30", "DDNN-CP", "Ens10-CP", "MCD30-CP"]

[data]
synthetic = { days = 460 }
synthetic_seed = 11

[lear]
windows = [28, 56, 84]

[neural]
profile = "desk"
hidden_units = 12
max_epochs = 12
patience = 4

[trading]
levels = [50, 90]
ledger_level = 90
"#;

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn full_roster_runs_and_is_byte_reproducible() {
    let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_pipeline(&cfg, a.path()).unwrap();
    let rb = run_pipeline(&cfg, b.path()).unwrap();
    assert_eq!(ra.summary, rb.summary);
    assert_eq!(ra.files.len(), rb.files.len());
    for (fa, fb) in ra.files.iter().zip(&rb.files) {
        assert_eq!(fa.strip_prefix(a.path()).unwrap(), fb.strip_prefix(b.path()).unwrap());
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap(), "{fa:?}");
    }

    assert_eq!(ra.summary.len(), 14);
    for row in &ra.summary {
        let model: Model = row.model.parse().unwrap();
        assert_eq!(row.runs, 2);
        if !model.is_stochastic() {
            assert_eq!(row.mae.1, 0.0, "{}", row.model);
        }
        assert_eq!(row.crps.is_some(), model.is_probabilistic(), "{}", row.model);
    }
    let lear = ra.row(Model::Lear).unwrap().mae.0;
    for m in [Model::LearQra, Model::LearGarch, Model::LearCp] {
        assert_eq!(ra.row(m).unwrap().mae.0, lear);
    }
    for t in &ra.trading {
        assert!(t.profit.0 <= ra.perfect_foresight + 1e-9, "{t:?}");
    }

    let summary = read(a.path(), "summary.csv");
    assert!(summary.starts_with("model,runs,mae,mae_std,rmse,rmse_std,crps,crps_std,maace,maace_std\n"));
    assert_eq!(summary.lines().count(), 15);
    assert_eq!(read(a.path(), "picp.csv").lines().count(), 50);
    assert!(read(a.path(), "dm_crps_pvalue.csv").starts_with("model,Naive-HS_train,Naive-HS_val,LEAR-QRA"));
    assert!(read(a.path(), "dm_mae_statistic.csv").contains(",LEAR,"));
    assert_eq!(read(a.path(), "trading.csv").lines().count(), 1 + 13 * 2);
    let refs = read(a.path(), "trading_reference.csv");
    assert!(refs.contains("perfect_foresight,,") && refs.contains("fixed_hours,,") && refs.contains("unlimited,LEAR,"));
    assert!(a.path().join("ledgers/LEAR-QRA.csv").exists());
}

#[test]
fn naive_only_rows_have_zero_deviation() {
    let text = r#"
models = ["Naive-HS_train", "Naive-HS_val"]
[data]
synthetic = { days = 420 }
[trading]
levels = [50]
"#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&cfg, dir.path()).unwrap();
    for row in &run.summary {
        assert_eq!(row.runs, 10);
        assert_eq!((row.mae.1, row.rmse.1), (0.0, 0.0));
        assert_eq!(row.crps.unwrap().1, 0.0);
        assert_eq!(row.maace.unwrap().1, 0.0);
    }
    let summary = read(dir.path(), "summary.csv");
    assert!(summary.lines().nth(1).unwrap().starts_with("Naive-HS_train,10,"));
    assert!(summary.lines().skip(1).all(|l| l.split(',').skip(3).step_by(2).all(|c| c == "0.000")));
}

#[test]
fn unknown_model_fails_before_any_stage() {
    let text = SMALL.replace("\"LEAR-CP\"", "\"EvDNN\"");
    let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
    assert!(err.to_string().contains("EvDNN"));
}

#[test]
fn stage_failures_name_the_stage() {
    // windows longer than the available history
    let text = SMALL.replace("windows = [28, 56, 84]", "windows = [28, 400]");
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().starts_with("stage lear:"), "{err}");
    assert_eq!(err.kind(), ErrorKind::Data);
}

#[test]
fn noiseless_market_is_forecast_exactly() {
    let spec = SynthSpec {
        days: 120,
        ..SynthSpec::default()
    }
    .noiseless();
    let ds = build_features(&normalize_clock(&make_synthetic(&spec, 0).unwrap()).unwrap()).unwrap();
    let prices = probcast_core::baseline::daily_prices(&ds);
    let days: Vec<_> = ds.rows.iter().skip(60).map(|r| r.date).collect();
    let actual = days.iter().map(|d| (*d, prices[d])).collect();
    let (naive_mae, _) = mae_rmse(&naive_points(&prices, &days).unwrap(), &actual).unwrap();
    assert_eq!(naive_mae, 0.0);
    let cfg = LearConfig {
        windows: vec![28, 56],
        lambda: 0.0,
        lasso: LassoOptions::default(),
    };
    let lear: Vec<_> = lear_rolling(&ds, &days, &cfg)
        .unwrap()
        .into_iter()
        .map(|f| probcast_core::distribution::PointDay {
            date: f.date,
            values: f.mean,
        })
        .collect();
    let (lear_mae, _) = mae_rmse(&lear, &actual).unwrap();
    assert!(lear_mae < 1e-6, "{lear_mae}");
}

#[test]
fn lear_recovers_an_ar1_coefficient() {
    let spec = SynthSpec {
        days: 1600,
        daily_amplitude: 0.0,
        weekend_drop: 0.0,
        ar1: 0.7,
        ar7: 0.0,
        garch_omega: 4.0,
        garch_alpha: 0.0,
        garch_beta: 0.0,
        load_effect: 0.0,
        renewable_effect: 0.0,
        spike_prob: 0.0,
        ..SynthSpec::default()
    };
    let ds = build_features(&make_synthetic(&spec, 8).unwrap()).unwrap();
    let as_of = ds.rows.last().unwrap().date;
    for h in [0, 9, 18] {
        let m = fit_lear_hour(&ds, h, 1500, as_of, 1e-4, &LassoOptions::default()).unwrap();
        // lag-one price of the same hour sits at feature index h
        let c = m.coefficients[h];
        // standard error of the estimate is about 0.019
        assert!((c - 0.7).abs() < 0.06, "hour {h}: {c}");
    }
}

#[test]
fn homoscedastic_noise_gives_matching_conformal_and_gaussian_widths() {
    let text = r#"
models = ["LEAR-CP", "LEAR-GARCH"]
runs = 1
[data]
synthetic = { days = 760, garch_omega = 9.0, garch_alpha = 0.0, garch_beta = 0.0, spike_prob = 0.0 }
synthetic_seed = 21
[lear]
windows = [56, 112, 224]
[trading]
levels = [50]
"#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, dir.path()).unwrap();
    let mpiw = read(dir.path(), "mpiw.csv");
    let mut rows = mpiw.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let cp = header.iter().position(|c| *c == "LEAR-CP").unwrap();
    let garch = header.iter().position(|c| *c == "LEAR-GARCH").unwrap();
    for line in rows {
        let f: Vec<&str> = line.split(',').collect();
        let level: u32 = f[0].parse().unwrap();
        if ![50, 80, 90].contains(&level) {
            continue;
        }
        let (a, b): (f64, f64) = (f[cp].parse().unwrap(), f[garch].parse().unwrap());
        assert!((a / b - 1.0).abs() < 0.1, "level {level}: conformal {a} vs gaussian {b}");
    }
}

#[test]
fn explicit_split_is_honoured() {
    let spec = SynthSpec {
        days: 400,
        ..SynthSpec::default()
    };
    let start = spec.start;
    let d = |n: i64| start + chrono::Duration::days(n);
    let split = SplitRanges {
        train: DateRange::new(d(7), d(199)),
        validation: DateRange::new(d(200), d(299)),
        test: DateRange::new(d(300), d(399)),
    };
    let text = format!(
        "models = [\"Naive-HS_train\"]\nruns = 1\n[data]\nsynthetic = {{ days = 400 }}\n[trading]\nlevels = [50]\n\
         [split]\ntrain = {{ start = \"{}\", end = \"{}\" }}\nvalidation = {{ start = \"{}\", end = \"{}\" }}\n\
         test = {{ start = \"{}\", end = \"{}\" }}\n",
        d(7),
        d(199),
        d(200),
        d(299),
        d(300),
        d(399)
    );
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!(run.split, split);
}

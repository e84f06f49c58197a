//! Shared argument groups and file helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, ValueEnum};
use probcast_core::data::{ColumnSchema, DateRange, DstRule, SplitRanges};
use probcast_core::distribution::{read_points, read_quantiles, write_points, write_quantiles, PointDay, QuantileDay};
use probcast_core::pipeline::{load_series, ExperimentConfig, Model, ModelForecast, Prepared, Profile};
use probcast_core::{Error, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DstArg {
    /// Central European daylight-saving clock.
    EuCentral,
    /// No clock changes.
    None,
}

/// Data source, split and seed, layered over an optional config file.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Experiment config (TOML); the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hourly market CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Input column names as key=value pairs, e.g. `timestamp=ts,price=p`.
    #[arg(long)]
    pub schema: Option<String>,
    /// Clock convention of the input timestamps.
    #[arg(long, value_enum)]
    pub dst: Option<DstArg>,
    #[arg(long)]
    pub train_start: Option<NaiveDate>,
    #[arg(long)]
    pub train_end: Option<NaiveDate>,
    #[arg(long)]
    pub val_start: Option<NaiveDate>,
    #[arg(long)]
    pub val_end: Option<NaiveDate>,
    #[arg(long)]
    pub test_start: Option<NaiveDate>,
    #[arg(long)]
    pub test_end: Option<NaiveDate>,
    /// Base seed of every stochastic stage.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DataArgs {
    /// Config file (or defaults) with the flag overrides applied and
    /// validated. Models are set to `models` when it is non-empty.
    pub fn config(&self, models: &[&str]) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::parse_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(input) = &self.input {
            cfg.data.input = Some(input.clone());
            cfg.data.synthetic = None;
        }
        if let Some(spec) = &self.schema {
            cfg.data.schema = ColumnSchema::parse_overrides(spec)?;
        }
        if let Some(dst) = self.dst {
            cfg.data.dst = match dst {
                DstArg::EuCentral => DstRule::EuCentral,
                DstArg::None => DstRule::None,
            };
        }
        let bounds = [
            self.train_start,
            self.train_end,
            self.val_start,
            self.val_end,
            self.test_start,
            self.test_end,
        ];
        match bounds {
            [Some(a), Some(b), Some(c), Some(d), Some(e), Some(f)] => {
                cfg.split = Some(SplitRanges {
                    train: DateRange::new(a, b),
                    validation: DateRange::new(c, d),
                    test: DateRange::new(e, f),
                });
            }
            [None, None, None, None, None, None] => {}
            _ => return Err(Error::Config("give all six split dates or none".into())),
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if !models.is_empty() {
            cfg.models = models.iter().map(|m| m.to_string()).collect();
        }
        if cfg.models.is_empty() {
            validate_settings(&cfg)?;
        } else {
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

/// LEAR overrides.
#[derive(Debug, Clone, Args)]
pub struct LearArgs {
    /// LASSO penalty on the standardised data.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Calibration windows in days, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    /// Random-search trials for the penalty (0 keeps --lambda).
    #[arg(long)]
    pub tune_trials: Option<usize>,
}

impl LearArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(l) = self.lambda {
            cfg.lear.lambda = l;
        }
        if let Some(w) = &self.windows {
            cfg.lear.windows = w.clone();
        }
        if let Some(t) = self.tune_trials {
            cfg.lear.tune_trials = t;
        }
        validate_settings(cfg)
    }
}

/// Validates everything but the roster, which verbs that fit a single
/// model do not need.
fn validate_settings(cfg: &ExperimentConfig) -> Result<()> {
    let mut probe = cfg.clone();
    probe.models = vec![Model::Lear.name().to_string()];
    probe.validate()
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    /// 1024-unit layers, 2000 epochs.
    Full,
    /// 64-unit layers, 200 epochs.
    Desk,
}

/// Network overrides.
#[derive(Debug, Clone, Args)]
pub struct NeuralArgs {
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl NeuralArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let nn = &mut cfg.neural;
        if let Some(p) = self.profile {
            nn.profile = match p {
                ProfileArg::Full => Profile::Full,
                ProfileArg::Desk => Profile::Desk,
            };
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if self.$f.is_some() {
                    nn.$f = self.$f;
                }
            )*};
        }
        set!(hidden_units, hidden_layers, learning_rate, l2, batch_size, max_epochs, patience);
        validate_settings(cfg)
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let series = load_series(cfg).map_err(|e| e.in_stage("ingest"))?;
    let prep = Prepared::from_series(&series, cfg.split).map_err(|e| e.in_stage("features"))?;
    log::info!(
        "split: train {} to {}, validation {} to {}, test {} to {}",
        prep.split.train.start,
        prep.split.train.end,
        prep.split.validation.start,
        prep.split.validation.end,
        prep.split.test.start,
        prep.split.test.end
    );
    Ok(prep)
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn points_path(dir: &Path, model: &str) -> PathBuf {
    dir.join(format!("{model}_points.csv"))
}

pub fn quantiles_path(dir: &Path, model: &str) -> PathBuf {
    dir.join(format!("{model}_quantiles.csv"))
}

/// Writes `<model>_points.csv` and, when present, `<model>_quantiles.csv`.
pub fn write_forecast(dir: &Path, model: &str, fc: &ModelForecast) -> Result<()> {
    write_points(&fc.point, create(&points_path(dir, model))?)?;
    if let Some(q) = &fc.quantiles {
        write_quantiles(q, create(&quantiles_path(dir, model))?)?;
    }
    log::info!("wrote {model} forecasts to {}", dir.display());
    Ok(())
}

/// A named forecast read back from disk.
pub struct NamedForecast {
    pub name: String,
    pub point: Vec<PointDay>,
    pub quantiles: Option<Vec<QuantileDay>>,
}

/// Parses `NAME=POINTS[,QUANTILES]`.
pub fn read_forecast_spec(spec: &str) -> Result<NamedForecast> {
    let (name, files) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("forecast `{spec}` is not NAME=POINTS[,QUANTILES]")))?;
    let mut parts = files.splitn(2, ',');
    let points = PathBuf::from(parts.next().unwrap_or_default());
    let quantiles = parts.next().map(PathBuf::from);
    Ok(NamedForecast {
        name: name.to_string(),
        point: read_points(open(&points)?)?,
        quantiles: quantiles.map(|q| read_quantiles(open(&q)?)).transpose()?,
    })
}

/// Every `<name>_points.csv` in `dir` with its optional quantile file, in
/// name order.
pub fn read_forecast_dir(dir: &Path) -> Result<Vec<NamedForecast>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix("_points.csv").map(str::to_string))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let q = quantiles_path(dir, &name);
            Ok(NamedForecast {
                point: read_points(open(&points_path(dir, &name))?)?,
                quantiles: if q.exists() { Some(read_quantiles(open(&q)?)?) } else { None },
                name,
            })
        })
        .collect()
}

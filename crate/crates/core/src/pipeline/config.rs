//! Experiment configuration (TOML).

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::DEFAULT_NCAL;
use crate::data::{ColumnSchema, DstRule, SplitRanges};
use crate::error::{Error, Result};
use crate::linear::FULL_WINDOWS;
use crate::metrics::levels;
use crate::neural::TrainConfig;
use crate::synth::SynthSpec;
use crate::trading::DEFAULT_EFFICIENCY;

/// The forecasters a run can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Model {
    NaiveHsTrain,
    NaiveHsVal,
    Lear,
    LearQra,
    LearGarch,
    LearCp,
    Ddnn,
    Ens5,
    Ens10,
    Mcd10,
    Mcd30,
    DdnnCp,
    Ens10Cp,
    Mcd30Cp,
}

impl Model {
    pub const ALL: [Model; 14] = [
        Model::NaiveHsTrain,
        Model::NaiveHsVal,
        Model::Lear,
        Model::LearQra,
        Model::LearGarch,
        Model::LearCp,
        Model::Ddnn,
        Model::Ens5,
        Model::Ens10,
        Model::Mcd10,
        Model::Mcd30,
        Model::DdnnCp,
        Model::Ens10Cp,
        Model::Mcd30Cp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Model::NaiveHsTrain => "Naive-HS_train",
            Model::NaiveHsVal => "Naive-HS_val",
            Model::Lear => "LEAR",
            Model::LearQra => "LEAR-QRA",
            Model::LearGarch => "LEAR-GARCH",
            Model::LearCp => "LEAR-CP",
            Model::Ddnn => "DDNN",
            Model::Ens5 => "Ens5",
            Model::Ens10 => "Ens10",
            Model::Mcd10 => "MCD10",
            Model::Mcd30 => "MCD30",
            Model::DdnnCp => "DDNN-CP",
            Model::Ens10Cp => "Ens10-CP",
            Model::Mcd30Cp => "MCD30-CP",
        }
    }

    /// Whether the model emits a predictive distribution.
    pub fn is_probabilistic(self) -> bool {
        self != Model::Lear
    }

    /// Whether the model depends on a training seed.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Model::Ddnn
                | Model::Ens5
                | Model::Ens10
                | Model::Mcd10
                | Model::Mcd30
                | Model::DdnnCp
                | Model::Ens10Cp
                | Model::Mcd30Cp
        )
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Model::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown model `{s}` (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub data: DataSection,
    /// Derived from the data when absent: the last 182 days are the test
    /// period and the 182 before them the validation period.
    #[serde(default)]
    pub split: Option<SplitRanges>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub lear: LearSection,
    #[serde(default)]
    pub conformal: ConformalSection,
    #[serde(default)]
    pub hs: HsSection,
    #[serde(default)]
    pub neural: NeuralSection,
    #[serde(default)]
    pub trading: TradingSection,
}

fn default_runs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Hourly market CSV; relative paths resolve against the config file.
    pub input: Option<PathBuf>,
    pub schema: ColumnSchema,
    pub dst: DstRule,
    /// Generator parameters used instead of `input`.
    pub synthetic: Option<SynthSpec>,
    pub synthetic_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the first run's forecast files.
    pub forecasts: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            forecasts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearSection {
    pub windows: Vec<usize>,
    pub lambda: f64,
    /// Random-search trials for the penalty; 0 keeps `lambda`.
    pub tune_trials: usize,
}

impl Default for LearSection {
    fn default() -> Self {
        Self {
            windows: FULL_WINDOWS.to_vec(),
            lambda: 1e-2,
            tune_trials: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalSection {
    pub n_cal: usize,
}

impl Default for ConformalSection {
    fn default() -> Self {
        Self { n_cal: DEFAULT_NCAL }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsSection {
    pub per_hour: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Full,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralSection {
    pub profile: Profile,
    pub hidden_units: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    /// Dropout rate of the MC-dropout network.
    pub mc_dropout: f64,
    /// Random-search trials before the runs; 0 keeps the settings above.
    pub hpo_trials: usize,
    pub hpo_runs: usize,
}

impl Default for NeuralSection {
    fn default() -> Self {
        Self {
            profile: Profile::Full,
            hidden_units: None,
            hidden_layers: None,
            learning_rate: None,
            l2: None,
            batch_size: None,
            max_epochs: None,
            patience: None,
            mc_dropout: 0.2,
            hpo_trials: 0,
            hpo_runs: 3,
        }
    }
}

impl NeuralSection {
    /// Training settings without dropout, seeded with `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let base = match self.profile {
            Profile::Full => TrainConfig::full(seed),
            Profile::Desk => TrainConfig::desk(seed),
        };
        TrainConfig {
            hidden_units: self.hidden_units.unwrap_or(base.hidden_units),
            hidden_layers: self.hidden_layers.unwrap_or(base.hidden_layers),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            l2: self.l2.unwrap_or(base.l2),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            patience: self.patience.unwrap_or(base.patience),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradingSection {
    pub efficiency: f64,
    /// Interval levels (%) to backtest.
    pub levels: Vec<u32>,
    /// Level whose first-run ledgers are written out.
    pub ledger_level: u32,
}

impl Default for TradingSection {
    fn default() -> Self {
        Self {
            efficiency: DEFAULT_EFFICIENCY,
            levels: levels().collect(),
            ledger_level: 50,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: default_runs(),
            models: Vec::new(),
            data: DataSection::default(),
            split: None,
            output: OutputSection::default(),
            lear: LearSection::default(),
            conformal: ConformalSection::default(),
            hs: HsSection::default(),
            neural: NeuralSection::default(),
            trading: TradingSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, so callers can apply overrides first.
    pub fn parse_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file; relative data and output paths
    /// are taken relative to the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::parse_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`Self::from_file`] without validation.
    pub fn parse_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = cfg.data.input.as_mut() {
            if input.is_relative() {
                *input = base.join(&*input);
            }
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    /// Roster in canonical order.
    pub fn roster(&self) -> Result<Vec<Model>> {
        let set: BTreeSet<Model> = self.models.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        Ok(set.into_iter().collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.models.is_empty() {
            return bad("the model roster is empty".into());
        }
        let roster = self.roster()?;
        if roster.len() != self.models.len() {
            return bad("the model roster lists a model twice".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        match (&self.data.input, &self.data.synthetic) {
            (Some(_), Some(_)) => return bad("set either data.input or data.synthetic, not both".into()),
            (None, None) => return bad("one of data.input or data.synthetic is required".into()),
            (None, Some(spec)) => spec.validate()?,
            (Some(_), None) => {}
        }
        if let Some(split) = &self.split {
            split.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let lear = &self.lear;
        if lear.windows.is_empty() || lear.windows.contains(&0) {
            return bad("lear.windows must be a non-empty list of positive day counts".into());
        }
        if !(lear.lambda >= 0.0 && lear.lambda.is_finite()) {
            return bad(format!("lear.lambda {} must be finite and non-negative", lear.lambda));
        }
        if self.conformal.n_cal == 0 {
            return bad("conformal.n_cal must be positive".into());
        }
        let nn = &self.neural;
        nn.train_config(self.seed).validate()?;
        if !(nn.mc_dropout > 0.0 && nn.mc_dropout < 1.0) {
            return bad(format!("neural.mc_dropout {} outside (0, 1)", nn.mc_dropout));
        }
        if nn.hpo_trials > 0 && nn.hpo_runs == 0 {
            return bad("neural.hpo_runs must be positive when searching".into());
        }
        let tr = &self.trading;
        if !(tr.efficiency > 0.0 && tr.efficiency <= 1.0) {
            return bad(format!("trading.efficiency {} outside (0, 1]", tr.efficiency));
        }
        if tr.levels.is_empty() {
            return bad("trading.levels is empty".into());
        }
        if let Some(l) = tr.levels.iter().find(|l| **l == 0 || **l >= 100 || **l % 2 != 0) {
            return bad(format!("trading level {l} is not on the 2:98:2 grid"));
        }
        if !tr.levels.contains(&tr.ledger_level) {
            return bad(format!("trading.ledger_level {} is not among trading.levels", tr.ledger_level));
        }
        Ok(())
    }
}

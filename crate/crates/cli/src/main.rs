//! `probcast`: probabilistic day-ahead price forecasting from the command line.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 numerical failure.

mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use probcast_core::data::Split;
use probcast_core::ErrorKind;

use commands::{BacktestArgs, Loss};
use setup::{DataArgs, LearArgs, NeuralArgs};

#[derive(Debug, Parser)]
#[command(name = "probcast", version, about = "Probabilistic day-ahead electricity price forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HsSplit {
    Train,
    Val,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic hourly market series.
    Synth {
        /// Generator parameters (TOML); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read, check and clock-normalise an hourly CSV.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the daily feature dataset and report the split.
    Features {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the standardised dataset.
        #[arg(long)]
        scaled_out: Option<PathBuf>,
        /// Also write the fitted standardisation.
        #[arg(long)]
        scaler_out: Option<PathBuf>,
    },
    /// Random search for the LASSO penalty on validation MAE.
    TuneLambda {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Calibration window in days; the widest configured one by default.
        #[arg(long)]
        window: Option<usize>,
        /// Write every trial here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the hourly LEAR models of every window as of one day.
    FitLear {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        lear: LearArgs,
        /// Forecast day the models are fitted for; the first test day by default.
        #[arg(long)]
        as_of: Option<NaiveDate>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Quantile regression averaging over the LEAR window forecasts.
    FitQra {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        lear: LearArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Hourly GARCH(1,1) intervals around LEAR.
    FitGarch {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        lear: LearArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Conformal intervals around existing point forecasts.
    Conformalize {
        #[command(flatten)]
        data: DataArgs,
        /// Point forecasts covering the validation and test days.
        #[arg(long)]
        base: PathBuf,
        /// Calibration days.
        #[arg(long, default_value_t = probcast_core::conformal::DEFAULT_NCAL)]
        ncal: usize,
        /// Name of the output forecast.
        #[arg(long, default_value = "CP")]
        name: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Naive forecast with historical-simulation quantiles.
    FitNaive {
        #[command(flatten)]
        data: DataArgs,
        /// Split whose errors feed the simulation.
        #[arg(long, value_enum, default_value = "train")]
        hs_split: HsSplit,
        /// Separate error pools per hour.
        #[arg(long)]
        per_hour: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one distributional network.
    TrainDdnn {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        neural: NeuralArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a deep ensemble.
    TrainEnsemble {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        neural: NeuralArgs,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a dropout network and sample it with MC dropout.
    TrainMcd {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        neural: NeuralArgs,
        #[arg(long, default_value_t = 10)]
        passes: usize,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Random search over learning rate, L2 and optionally dropout.
    Hpo {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        neural: NeuralArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Search the dropout rate too.
        #[arg(long)]
        dropout: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the test period with any set of models.
    Forecast {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        lear: LearArgs,
        #[command(flatten)]
        neural: NeuralArgs,
        /// Model name; repeat for several.
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Point and probabilistic metrics of forecast files.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// NAME=POINTS[,QUANTILES]; repeatable.
        #[arg(long = "forecast")]
        forecasts: Vec<String>,
        /// Directory of `<name>_points.csv` / `<name>_quantiles.csv` files.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pairwise Diebold-Mariano tests.
    Dm {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "forecast")]
        forecasts: Vec<String>,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "crps")]
        loss: Loss,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Battery trading backtest of one forecast.
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        quantiles: Option<PathBuf>,
        /// Central interval level in percent.
        #[arg(long, default_value_t = 50)]
        level: u32,
        /// Round-trip efficiency; the configured one by default.
        #[arg(long)]
        efficiency: Option<f64>,
        /// Ledger CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report directory; the configured one by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn dispatch(cmd: Command) -> commands::CmdResult {
    match cmd {
        Command::Synth { spec, days, seed, out } => commands::synth(spec.as_deref(), days, seed, &out),
        Command::Ingest { data, out } => commands::ingest(&data, &out),
        Command::Features {
            data,
            out,
            scaled_out,
            scaler_out,
        } => commands::features(&data, &out, scaled_out.as_deref(), scaler_out.as_deref()),
        Command::TuneLambda {
            data,
            trials,
            window,
            out,
        } => commands::tune_lambda_cmd(&data, trials, window, out.as_deref()),
        Command::FitLear {
            data,
            lear,
            as_of,
            out_dir,
        } => commands::fit_lear(&data, &lear, as_of, &out_dir),
        Command::FitQra { data, lear, out_dir } => commands::fit_qra_cmd(&data, &lear, &out_dir),
        Command::FitGarch { data, lear, out_dir } => commands::fit_garch_cmd(&data, &lear, &out_dir),
        Command::Conformalize {
            data,
            base,
            ncal,
            name,
            out_dir,
        } => commands::conformalize(&data, &base, ncal, &name, &out_dir),
        Command::FitNaive {
            data,
            hs_split,
            per_hour,
            out_dir,
        } => {
            let split = match hs_split {
                HsSplit::Train => Split::Train,
                HsSplit::Val => Split::Validation,
            };
            commands::fit_naive(&data, split, per_hour, &out_dir)
        }
        Command::TrainDdnn { data, neural, out_dir } => commands::train_ddnn(&data, &neural, &out_dir),
        Command::TrainEnsemble {
            data,
            neural,
            n,
            out_dir,
        } => commands::train_ens(&data, &neural, n, &out_dir),
        Command::TrainMcd {
            data,
            neural,
            passes,
            dropout,
            out_dir,
        } => commands::train_mcd(&data, &neural, passes, dropout, &out_dir),
        Command::Hpo {
            data,
            neural,
            trials,
            runs,
            dropout,
            out,
        } => commands::hpo_cmd(&data, &neural, trials, runs, dropout, &out),
        Command::Forecast {
            data,
            lear,
            neural,
            models,
            runs,
            out_dir,
        } => commands::forecast(&data, &lear, &neural, &models, runs, &out_dir),
        Command::Evaluate {
            data,
            forecasts,
            dir,
            out_dir,
        } => commands::evaluate_cmd(&data, &forecasts, dir.as_deref(), &out_dir),
        Command::Dm {
            data,
            forecasts,
            dir,
            loss,
            out_dir,
        } => commands::dm_cmd(&data, &forecasts, dir.as_deref(), loss, &out_dir),
        Command::Backtest {
            data,
            points,
            quantiles,
            level,
            efficiency,
            out,
        } => commands::backtest_cmd(
            &data,
            &BacktestArgs {
                points: &points,
                quantiles: quantiles.as_deref(),
                level,
                efficiency,
                out: out.as_deref(),
            },
        ),
        Command::Run { config, out, seed, runs } => commands::run(&config, out, seed, runs),
    }
}

/// Exit code of the first library error in the chain; other failures
/// (I/O, CSV) count as data errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<probcast_core::Error>())
        .map(probcast_core::Error::kind);
    match kind {
        Some(ErrorKind::Config) => 1,
        Some(ErrorKind::Numerical) => 3,
        Some(ErrorKind::Data) | None => 2,
    }
}

/// The error chain joined with `: `, skipping causes that the previous
/// message already quotes.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

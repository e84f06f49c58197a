//! LASSO-estimated autoregressive (LEAR) point models.

mod lasso;
mod lear;

pub use lasso::{fit_lasso, GramSystem, LassoFit, LassoModel, LassoOptions};
pub use lear::{
    fit_lear_hour, fit_lear_models, lear_point_forecast, lear_rolling, read_lear_models, tune_lambda,
    write_lear_models, LearConfig, LearDayForecast, LearModelRecord, TuneResult, FULL_WINDOWS,
};

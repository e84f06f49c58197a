//! Distributional feed-forward networks predicting a Gaussian per hour,
//! with deep-ensemble and MC-dropout mixtures.

mod hpo;
mod loss;
mod mlp;
mod predict;
mod train;

pub use hpo::{hpo, write_trials, HpoResult, HpoTrial};
pub use loss::{batch_nll, gm_nll, gm_nll_batch, gm_nll_grad, nll_gaussian, nll_gaussian_grad};
pub use mlp::{forward, init_mlp, param_gradients, read_params, write_params, Dropout, Layer, MlpParams, LOGVAR_CLAMP};
pub use predict::{
    ensemble_predict, gaussian_predict, mc_dropout_predict, to_price_forecasts, train_ensemble, MixtureBatch,
};
pub use train::{
    evaluate_nll, split_arrays, train, EarlyStopping, StopDecision, TrainConfig, TrainData, TrainOutcome,
};

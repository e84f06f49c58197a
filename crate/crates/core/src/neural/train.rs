//! Mini-batch Adam training with L2 weight decay and early stopping on the
//! validation NLL.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::batch_nll;
use super::mlp::{backward, forward_cached, init_mlp, Dropout, Layer, MlpParams};
use crate::data::{FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::{HOURS, NUM_FEATURES};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Dropout rate after each hidden layer; 0 disables dropout.
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full(0)
    }
}

impl TrainConfig {
    /// 1024-unit layers and the full epoch budget.
    pub fn full(seed: u64) -> Self {
        Self {
            hidden_units: 1024,
            hidden_layers: 2,
            learning_rate: 1e-3,
            l2: 1e-4,
            dropout: 0.0,
            batch_size: 32,
            max_epochs: 2000,
            patience: 100,
            seed,
        }
    }

    /// Small network and short schedule for quick runs.
    pub fn desk(seed: u64) -> Self {
        Self {
            hidden_units: 64,
            max_epochs: 200,
            patience: 30,
            ..Self::full(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1e-5..=1e-1).contains(&self.learning_rate) {
            return bad(format!("learning_rate {} outside [1e-5, 1e-1]", self.learning_rate));
        }
        if !(self.l2 == 0.0 || (1e-5..=1e-1).contains(&self.l2)) {
            return bad(format!("l2 {} outside [1e-5, 1e-1]", self.l2));
        }
        if !(self.dropout == 0.0 || (0.01..=0.9).contains(&self.dropout)) {
            return bad(format!("dropout {} outside [0.01, 0.9]", self.dropout));
        }
        if self.hidden_units == 0 || self.hidden_layers == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("network sizes, batch size and epochs must be positive".into());
        }
        Ok(())
    }

    pub fn dims(&self, inputs: usize, horizon: usize) -> Vec<usize> {
        let mut d = vec![inputs];
        d.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layers));
        d.push(2 * horizon);
        d
    }
}

/// Standardised design and target matrices.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub x_val: Array2<f64>,
    pub y_val: Array2<f64>,
}

/// Feature and target matrices of one split.
pub fn split_arrays(ds: &FeatureDataset, split: Split) -> (Array2<f64>, Array2<f64>) {
    let rows: Vec<_> = ds.split_rows(split).collect();
    let x = Array2::from_shape_fn((rows.len(), NUM_FEATURES), |(i, j)| rows[i].features[j]);
    let y = Array2::from_shape_fn((rows.len(), HOURS), |(i, j)| rows[i].targets[j]);
    (x, y)
}

impl TrainData {
    /// Train and validation arrays from an already standardised dataset.
    pub fn from_dataset(ds: &FeatureDataset) -> Result<Self> {
        let (x_train, y_train) = split_arrays(ds, Split::Train);
        let (x_val, y_val) = split_arrays(ds, Split::Validation);
        if x_train.nrows() == 0 || x_val.nrows() == 0 {
            return Err(Error::Empty("train or validation split"));
        }
        Ok(Self {
            x_train,
            y_train,
            x_val,
            y_val,
        })
    }
}

/// Patience-based early stopping on a loss to be minimised.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    /// `(train loss, validation loss)` per epoch.
    pub history: Vec<(f64, f64)>,
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    fn new(p: &MlpParams) -> Self {
        let zeros: Vec<Layer> = p
            .layers
            .iter()
            .map(|l| Layer {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: ndarray::Array1::zeros(l.bias.len()),
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut MlpParams, grads: &[Layer], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for ((layer, g), (m, v)) in p
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let update = |w: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|w, &g, m, v| update(w, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|w, &g, m, v| update(w, g, m, v));
        }
    }
}

/// Objective `mean NLL + l2·Σ W²` on a batch and its gradients.
pub(crate) fn loss_and_grads(
    p: &MlpParams,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    l2: f64,
    dropout: Option<Dropout>,
) -> (f64, Vec<Layer>) {
    let (mu, lv, cache) = forward_cached(p, x, dropout);
    let (loss, dmu, dlv) = batch_nll(mu.view(), lv.view(), y);
    let mut grads = backward(p, &cache, &dmu, &dlv).layers;
    let mut penalty = 0.0;
    if l2 > 0.0 {
        for (g, l) in grads.iter_mut().zip(&p.layers) {
            penalty += l.weights.iter().map(|w| w * w).sum::<f64>();
            g.weights.scaled_add(2.0 * l2, &l.weights);
        }
    }
    (loss + l2 * penalty, grads)
}

/// Mean Gaussian NLL of deterministic predictions.
pub fn evaluate_nll(p: &MlpParams, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let (mu, lv, _) = forward_cached(p, x, None);
    batch_nll(mu.view(), lv.view(), y).0
}

/// Trains one network from its seed.
pub fn train(data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = data.x_train.nrows();
    if n == 0 || data.x_val.nrows() == 0 {
        return Err(Error::Empty("train or validation split"));
    }
    let dims = cfg.dims(data.x_train.ncols(), data.y_train.ncols());
    let mut params = init_mlp(&dims, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut adam = Adam::new(&params);
    let mut stop = EarlyStopping::new(cfg.patience.max(1));
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = data.x_train.select(Axis(0), batch);
            let yb = data.y_train.select(Axis(0), batch);
            let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                rate: cfg.dropout,
                rng: &mut rng,
            });
            let (loss, grads) = loss_and_grads(&params, xb.view(), yb.view(), cfg.l2, dropout);
            train_loss += loss * batch.len() as f64;
            adam.step(&mut params, &grads, cfg.learning_rate);
        }
        let val = evaluate_nll(&params, data.x_val.view(), data.y_val.view());
        if !val.is_finite() || !params.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        history.push((train_loss / n as f64, val));
        match stop.observe(epoch, val) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch: stop.best_epoch,
        epochs_run: history.len(),
        best_val_loss: stop.best,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn flat(p: &[Layer]) -> Vec<f64> {
        p.iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    fn perturb(p: &MlpParams, idx: usize, h: f64) -> MlpParams {
        let mut q = p.clone();
        let mut k = idx;
        for l in &mut q.layers {
            if k < l.weights.len() {
                *l.weights.iter_mut().nth(k).unwrap() += h;
                return q;
            }
            k -= l.weights.len();
            if k < l.bias.len() {
                l.bias[k] += h;
                return q;
            }
            k -= l.bias.len();
        }
        unreachable!()
    }

    #[test]
    fn backprop_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = init_mlp(&[3, 5, 5, 4], 2).unwrap();
        let x = Array2::from_shape_simple_fn((7, 3), || rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_simple_fn((7, 2), || rng.sample::<f64, _>(StandardNormal));
        for l2 in [0.0, 0.01] {
            let (_, g) = loss_and_grads(&p, x.view(), y.view(), l2, None);
            let analytic = flat(&g);
            let numeric: Vec<f64> = (0..p.num_params())
                .map(|i| {
                    let h = 1e-5;
                    let a = loss_and_grads(&perturb(&p, i, h), x.view(), y.view(), l2, None).0;
                    let b = loss_and_grads(&perturb(&p, i, -h), x.view(), y.view(), l2, None).0;
                    (a - b) / (2.0 * h)
                })
                .collect();
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-4, "relative gradient error {}", diff / norm);
        }
    }

    #[test]
    fn early_stopping_contract() {
        let mut es = EarlyStopping::new(3);
        let losses = [5.0, 4.0, 3.0, 3.5, 3.6, 3.7, 3.8];
        let mut stopped = None;
        for (i, l) in losses.iter().enumerate() {
            if es.observe(i + 1, *l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(es.best_epoch, 3);
        assert_eq!(stopped, Some(6));
    }

    fn linear_data(seed: u64) -> TrainData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_simple_fn((4, 3), || rng.sample::<f64, _>(StandardNormal));
        let mut make = |n: usize| {
            let x = Array2::from_shape_simple_fn((n, 4), || rng.sample::<f64, _>(StandardNormal));
            let noise = Array2::from_shape_simple_fn((n, 3), || 0.3 * rng.sample::<f64, _>(StandardNormal));
            let y = x.dot(&a) + noise;
            (x, y)
        };
        let (x_train, y_train) = make(300);
        let (x_val, y_val) = make(100);
        TrainData { x_train, y_train, x_val, y_val }
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_units: 16,
            max_epochs: 60,
            patience: 20,
            learning_rate: 1e-2,
            l2: 1e-5,
            ..TrainConfig::full(seed)
        }
    }

    #[test]
    fn learns_linear_map_beyond_constant_baseline() {
        let data = linear_data(1);
        let out = train(&data, &small_cfg(3)).unwrap();
        // best constant Gaussian per output on the validation sample
        let var = data.y_val.var_axis(Axis(0), 0.0);
        let baseline: f64 = (0..3)
            .map(|h| 0.5 * var[h].ln() + 0.5 + 0.918_938_533_204_672_8)
            .sum();
        assert!(out.best_val_loss < baseline - 1.0, "{} vs {baseline}", out.best_val_loss);
        let recomputed = evaluate_nll(&out.params, data.x_val.view(), data.y_val.view());
        assert_eq!(recomputed, out.best_val_loss);
        assert_eq!(out.history[out.best_epoch - 1].1, out.best_val_loss);
    }

    #[test]
    fn equal_seeds_equal_parameters() {
        let data = linear_data(2);
        let mut cfg = small_cfg(5);
        cfg.max_epochs = 5;
        cfg.dropout = 0.2;
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn stronger_l2_shrinks_parameters() {
        let data = linear_data(3);
        let norms: Vec<f64> = [1e-5, 1e-3, 1e-1]
            .iter()
            .map(|&l2| {
                let cfg = TrainConfig {
                    l2,
                    max_epochs: 40,
                    patience: 1000,
                    ..small_cfg(9)
                };
                train(&data, &cfg).unwrap().params.norm()
            })
            .collect();
        assert!(norms[0] >= norms[1] && norms[1] >= norms[2], "{norms:?}");
    }

    #[test]
    fn config_ranges() {
        assert!(TrainConfig::full(0).validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.5, ..TrainConfig::full(0) }.validate().is_err());
        assert!(TrainConfig { dropout: 0.95, ..TrainConfig::full(0) }.validate().is_err());
        assert_eq!(TrainConfig::desk(0).dims(151, 24), vec![151, 64, 64, 48]);
    }
}

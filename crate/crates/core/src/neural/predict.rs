//! Ensemble and MC-dropout predictive mixtures, and their conversion to
//! price-unit quantile grids.

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mlp::{forward, Dropout, MlpParams};
use super::train::{train, TrainConfig, TrainData, TrainOutcome};
use crate::data::Standardizer;
use crate::distribution::{Mixture, PointDay, QuantileDay, NUM_QUANTILES};
use crate::error::{Error, Result};
use crate::HOURS;

/// Per-row, per-hour predictive mixtures in standardised units.
pub type MixtureBatch = Vec<Vec<Mixture>>;

fn mixtures_from(components: &[(Array2<f64>, Array2<f64>)]) -> Result<MixtureBatch> {
    let (rows, hours) = components[0].0.dim();
    (0..rows)
        .map(|i| {
            (0..hours)
                .map(|h| {
                    let means = components.iter().map(|(m, _)| m[[i, h]]).collect();
                    let stds = components.iter().map(|(_, lv)| (0.5 * lv[[i, h]]).exp()).collect();
                    Mixture::equal_weight(means, stds)
                })
                .collect()
        })
        .collect()
}

/// Equal-weight mixture of the members' Gaussians.
pub fn ensemble_predict(members: &[MlpParams], x: ArrayView2<f64>) -> Result<MixtureBatch> {
    if members.is_empty() {
        return Err(Error::Empty("ensemble members"));
    }
    let comps = members
        .iter()
        .map(|m| forward(m, x, None))
        .collect::<Result<Vec<_>>>()?;
    mixtures_from(&comps)
}

/// Equal-weight mixture over `passes` forward passes with live dropout.
pub fn mc_dropout_predict(
    params: &MlpParams,
    x: ArrayView2<f64>,
    passes: usize,
    rate: f64,
    seed: u64,
) -> Result<MixtureBatch> {
    if passes == 0 {
        return Err(Error::Invalid("at least one forward pass required".into()));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Invalid(format!("dropout rate {rate} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..passes)
        .map(|_| forward(params, x, Some(Dropout { rate, rng: &mut rng })))
        .collect::<Result<Vec<_>>>()?;
    mixtures_from(&comps)
}

/// Single-network Gaussian prediction as one-component mixtures.
pub fn gaussian_predict(params: &MlpParams, x: ArrayView2<f64>) -> Result<MixtureBatch> {
    ensemble_predict(std::slice::from_ref(params), x)
}

/// Trains `n` members with consecutive seeds starting at `cfg.seed`.
pub fn train_ensemble(data: &TrainData, cfg: &TrainConfig, n: usize) -> Result<Vec<TrainOutcome>> {
    if n == 0 {
        return Err(Error::Empty("ensemble members"));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            train(
                data,
                &TrainConfig {
                    seed: cfg.seed.wrapping_add(i),
                    ..cfg.clone()
                },
            )
        })
        .collect()
}

/// Maps standardised mixtures to price units: point forecasts are the
/// mixture means, grids the mixture percentiles.
pub fn to_price_forecasts(
    dates: &[NaiveDate],
    batch: &MixtureBatch,
    scaler: &Standardizer,
) -> Result<(Vec<PointDay>, Vec<QuantileDay>)> {
    if dates.len() != batch.len() {
        return Err(Error::Invalid("dates and predictions differ in length".into()));
    }
    let mut points = Vec::with_capacity(dates.len());
    let mut grids = Vec::with_capacity(dates.len());
    for (date, row) in dates.iter().zip(batch) {
        let mut values = [0.0; HOURS];
        let mut hours = [[0.0; NUM_QUANTILES]; HOURS];
        for h in 0..HOURS {
            let sd = scaler.target_std(h);
            let mix = &row[h];
            let means = mix.means().iter().map(|m| scaler.unscale_target(h, *m)).collect();
            let stds = mix.stds().iter().map(|s| s * sd).collect();
            let priced = Mixture::new(mix.weights().to_vec(), means, stds)?;
            values[h] = priced.mean();
            hours[h] = priced.grid()?;
        }
        points.push(PointDay { date: *date, values });
        grids.push(QuantileDay { date: *date, hours });
    }
    Ok((points, grids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::mlp::init_mlp;
    use ndarray::array;

    #[test]
    fn single_member_is_its_gaussian() {
        let p = init_mlp(&[2, 6, 4], 1).unwrap();
        let x = array![[0.5, -0.3]];
        let mix = ensemble_predict(std::slice::from_ref(&p), x.view()).unwrap();
        let (mu, lv) = forward(&p, x.view(), None).unwrap();
        assert_eq!(mix[0][1].len(), 1);
        assert_eq!(mix[0][1].means()[0], mu[[0, 1]]);
        assert!((mix[0][1].stds()[0] - (0.5 * lv[[0, 1]]).exp()).abs() < 1e-15);
        assert!(ensemble_predict(&[], x.view()).is_err());
    }

    #[test]
    fn duplicate_members_collapse_and_weights_equal() {
        let p = init_mlp(&[2, 6, 4], 2).unwrap();
        let x = array![[1.0, 2.0]];
        let ten = vec![p.clone(); 10];
        let mix = ensemble_predict(&ten, x.view()).unwrap();
        let one = ensemble_predict(&[p], x.view()).unwrap();
        assert!(mix[0][0].weights().iter().all(|w| (*w - 0.1).abs() < 1e-15));
        for t in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            assert!((mix[0][0].cdf(t) - one[0][0].cdf(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn mc_dropout_properties() {
        let p = init_mlp(&[3, 16, 16, 4], 3).unwrap();
        let x = array![[0.2, -1.0, 0.4], [1.0, 0.0, -0.2]];
        let a = mc_dropout_predict(&p, x.view(), 10, 0.3, 7).unwrap();
        let b = mc_dropout_predict(&p, x.view(), 10, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let one = mc_dropout_predict(&p, x.view(), 1, 0.3, 7).unwrap();
        assert_eq!(one[0][0].len(), 1);
        let m = &a[1][0];
        let avg = m.means().iter().sum::<f64>() / m.len() as f64;
        assert!((m.mean() - avg).abs() < 1e-12);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mc_dropout_predict(&p, x.view(), 10, 0.0, 7).is_err());
    }
}

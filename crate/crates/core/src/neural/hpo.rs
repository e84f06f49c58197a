//! Seeded random search over learning rate, L2 strength and dropout rate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::train::{train, TrainConfig, TrainData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HpoTrial {
    pub learning_rate: f64,
    pub l2: f64,
    pub dropout: f64,
    /// Mean best validation NLL over the repeated runs.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoResult {
    pub best: TrainConfig,
    pub trials: Vec<HpoTrial>,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Draws `trials` configurations (learning rate and L2 log-uniform on
/// `[1e-5, 1e-1]`, dropout uniform on `[0.01, 0.9]` when `with_dropout`),
/// scores each by the mean of `runs` trainings and keeps the best.
pub fn hpo(
    data: &TrainData,
    base: &TrainConfig,
    trials: usize,
    runs: usize,
    with_dropout: bool,
    seed: u64,
) -> Result<HpoResult> {
    if trials == 0 || runs == 0 {
        return Err(Error::Invalid("search needs at least one trial and one run".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, f64, f64)> = (0..trials)
        .map(|_| {
            let lr = log_uniform(&mut rng, 1e-5, 1e-1);
            let l2 = log_uniform(&mut rng, 1e-5, 1e-1);
            let dr = if with_dropout {
                rng.random_range(0.01..=0.9)
            } else {
                0.0
            };
            (lr, l2, dr)
        })
        .collect();
    let scored: Vec<HpoTrial> = draws
        .par_iter()
        .enumerate()
        .map(|(t, &(learning_rate, l2, dropout))| {
            let mut total = 0.0;
            for r in 0..runs {
                let cfg = TrainConfig {
                    learning_rate,
                    l2,
                    dropout,
                    seed: seed.wrapping_add((t * runs + r) as u64),
                    ..base.clone()
                };
                // a diverging configuration scores as infinitely bad
                total += train(data, &cfg).map_or(f64::INFINITY, |o| o.best_val_loss);
            }
            HpoTrial {
                learning_rate,
                l2,
                dropout,
                score: total / runs as f64,
            }
        })
        .collect();
    let best = scored
        .iter()
        .filter(|t| t.score.is_finite())
        .min_by(|a, b| a.score.total_cmp(&b.score))
        .ok_or(Error::Diverged(0))?;
    Ok(HpoResult {
        best: TrainConfig {
            learning_rate: best.learning_rate,
            l2: best.l2,
            dropout: best.dropout,
            ..base.clone()
        },
        trials: scored,
    })
}

pub fn write_trials<W: Write>(trials: &[HpoTrial], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["trial", "learning_rate", "l2", "dropout", "score"])?;
    for (i, t) in trials.iter().enumerate() {
        wtr.write_record(&[
            i.to_string(),
            format!("{:e}", t.learning_rate),
            format!("{:e}", t.l2),
            format!("{}", t.dropout),
            format!("{}", t.score),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<hpo output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    fn data() -> TrainData {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut make = |n: usize| {
            let x = Array2::from_shape_simple_fn((n, 3), || rng.sample::<f64, _>(StandardNormal));
            let y = x.map_axis(ndarray::Axis(1), |r| r[0] - r[1]).insert_axis(ndarray::Axis(1));
            let y = y.mapv(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
            (x, y)
        };
        let (x_train, y_train) = make(80);
        let (x_val, y_val) = make(40);
        TrainData { x_train, y_train, x_val, y_val }
    }

    #[test]
    fn search_is_seeded_and_within_ranges() {
        let base = TrainConfig {
            hidden_units: 8,
            max_epochs: 5,
            patience: 5,
            ..TrainConfig::full(0)
        };
        let d = data();
        let a = hpo(&d, &base, 4, 2, true, 11).unwrap();
        let b = hpo(&d, &base, 4, 2, true, 11).unwrap();
        assert_eq!(a, b);
        for t in &a.trials {
            assert!((1e-5..=1e-1).contains(&t.learning_rate));
            assert!((1e-5..=1e-1).contains(&t.l2));
            assert!((0.01..=0.9).contains(&t.dropout));
        }
        let min = a.trials.iter().map(|t| t.score).fold(f64::INFINITY, f64::min);
        let chosen = a.trials.iter().find(|t| t.score == min).unwrap();
        assert_eq!(a.best.learning_rate, chosen.learning_rate);
        let plain = hpo(&d, &base, 2, 1, false, 1).unwrap();
        assert!(plain.trials.iter().all(|t| t.dropout == 0.0));
        let mut buf = Vec::new();
        write_trials(&a.trials, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}

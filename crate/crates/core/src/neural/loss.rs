//! Gaussian and Gaussian-mixture negative log-likelihoods with gradients.

use ndarray::{Array2, ArrayView2, Zip};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `Σ_h ½ log σ²_h + ½ (y_h − μ_h)² / σ²_h + ½ log 2π`.
pub fn nll_gaussian(mu: &[f64], logvar: &[f64], y: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .zip(y)
        .map(|((m, lv), t)| 0.5 * lv + 0.5 * (t - m).powi(2) * (-lv).exp() + HALF_LN_2PI)
        .sum()
}

/// Gradients of [`nll_gaussian`] with respect to `μ` and `log σ²`.
pub fn nll_gaussian_grad(mu: &[f64], logvar: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dmu = Vec::with_capacity(mu.len());
    let mut dlv = Vec::with_capacity(mu.len());
    for ((m, lv), t) in mu.iter().zip(logvar).zip(y) {
        let prec = (-lv).exp();
        dmu.push(-(t - m) * prec);
        dlv.push(0.5 - 0.5 * (t - m).powi(2) * prec);
    }
    (dmu, dlv)
}

/// Mean over rows of the per-row Gaussian NLL, with gradients of that mean.
pub fn batch_nll(
    mu: ArrayView2<f64>,
    logvar: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = mu.nrows() as f64;
    let mut dmu = Array2::zeros(mu.raw_dim());
    let mut dlv = Array2::zeros(mu.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut dmu)
        .and(&mut dlv)
        .and(mu)
        .and(logvar)
        .and(y)
        .for_each(|gm, gl, &m, &lv, &t| {
            let prec = (-lv).exp();
            let r2 = (t - m) * (t - m);
            total += 0.5 * lv + 0.5 * r2 * prec + HALF_LN_2PI;
            *gm = -(t - m) * prec / n;
            *gl = (0.5 - 0.5 * r2 * prec) / n;
        });
    (total / n, dmu, dlv)
}

/// `−log Σ_j (1/N) φ(y; μ_j, σ_j)` for one scalar target, stabilised by
/// log-sum-exp.
pub fn gm_nll(mus: &[f64], logvars: &[f64], y: f64) -> f64 {
    let terms = || {
        mus.iter()
            .zip(logvars)
            .map(|(m, lv)| -0.5 * lv - 0.5 * (y - m).powi(2) * (-lv).exp() - HALF_LN_2PI)
    };
    let top = terms().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + terms().map(|t| (t - top).exp()).sum::<f64>().ln();
    -(lse - (mus.len() as f64).ln())
}

/// Gradients of [`gm_nll`] with respect to each component's `μ` and
/// `log σ²`.
pub fn gm_nll_grad(mus: &[f64], logvars: &[f64], y: f64) -> (Vec<f64>, Vec<f64>) {
    let terms: Vec<f64> = mus
        .iter()
        .zip(logvars)
        .map(|(m, lv)| -0.5 * lv - 0.5 * (y - m).powi(2) * (-lv).exp())
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = terms.iter().map(|t| (t - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut dmu = Vec::with_capacity(mus.len());
    let mut dlv = Vec::with_capacity(mus.len());
    for ((m, lv), wj) in mus.iter().zip(logvars).zip(&w) {
        let r = wj / z;
        let prec = (-lv).exp();
        dmu.push(-r * (y - m) * prec);
        dlv.push(-r * (-0.5 + 0.5 * (y - m).powi(2) * prec));
    }
    (dmu, dlv)
}

/// Mixture NLL summed over every cell of `y`; `components[j]` holds the
/// `(μ, log σ²)` arrays of member `j`.
pub fn gm_nll_batch(components: &[(Array2<f64>, Array2<f64>)], y: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    let mut mus = vec![0.0; components.len()];
    let mut lvs = vec![0.0; components.len()];
    for ((i, h), &t) in y.indexed_iter() {
        for (j, (m, lv)) in components.iter().enumerate() {
            mus[j] = m[[i, h]];
            lvs[j] = lv[[i, h]];
        }
        total += gm_nll(&mus, &lvs, t);
    }
    total
}

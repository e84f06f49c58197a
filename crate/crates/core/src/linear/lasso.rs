//! Cyclic coordinate descent for the LASSO in covariance (Gram) form.
//!
//! Minimises `(1/2n)·|y - b0 - Xb|² + λ·|b|₁` with an unpenalised intercept.
//! Columns are centred (and, by default, scaled to unit population
//! variance) before solving; coefficients are mapped back on output. The
//! Gram matrix depends only on X, so one system can be solved for many
//! targets and penalties.

use crate::error::{Error, Result};
use crate::linalg::{null_vector, solve_dense};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Scale columns to unit variance inside the solver.
    pub standardize: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 10_000,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: f64,
    pub hour: usize,
}

impl LassoModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients.iter().filter(|c| **c != 0.0).count()
    }
}

/// Solver output in the solver's internal (centred, scaled) space.
#[derive(Debug, Clone)]
pub struct LassoFit {
    /// Coefficients on the internally scaled columns.
    pub scaled: Vec<f64>,
    pub sweeps: usize,
    /// Objective value after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Centred (and optionally scaled) second moments of a design matrix.
#[derive(Debug, Clone)]
pub struct GramSystem {
    n: usize,
    p: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Row-major p×p, `X̃ᵀX̃ / n`.
    gram: Vec<f64>,
    /// Centred, scaled design, row-major n×p (kept for right-hand sides).
    design: Vec<f64>,
    usable: Vec<bool>,
}

impl GramSystem {
    pub fn new<R: AsRef<[f64]>>(rows: &[R], standardize: bool) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("design matrix"));
        }
        let p = rows[0].as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != p) {
            return Err(Error::Invalid("ragged design matrix".into()));
        }
        if rows.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("design matrix"));
        }
        let nf = n as f64;
        let mut means = vec![0.0; p];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= nf);
        let mut design = vec![0.0; n * p];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.as_ref().iter().enumerate() {
                design[i * p + j] = v - means[j];
            }
        }
        let mut scales = vec![1.0; p];
        let mut usable = vec![true; p];
        for j in 0..p {
            let var = (0..n).map(|i| design[i * p + j].powi(2)).sum::<f64>() / nf;
            let sd = var.sqrt();
            if !(sd > 1e-12 * means[j].abs().max(1.0)) {
                usable[j] = false;
                for i in 0..n {
                    design[i * p + j] = 0.0;
                }
                continue;
            }
            if standardize {
                scales[j] = sd;
                for i in 0..n {
                    design[i * p + j] /= sd;
                }
            }
        }
        let mut gram = vec![0.0; p * p];
        for i in 0..n {
            let row = &design[i * p..(i + 1) * p];
            for j in 0..p {
                let a = row[j];
                if a == 0.0 {
                    continue;
                }
                let g = &mut gram[j * p..j * p + j + 1];
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk += a * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..=j {
                let v = gram[j * p + k] / nf;
                gram[j * p + k] = v;
                gram[k * p + j] = v;
            }
        }
        Ok(Self {
            n,
            p,
            means,
            scales,
            gram,
            design,
            usable,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `X̃ᵀ(y - ȳ) / n` and `ȳ`.
    fn rhs(&self, y: &[f64]) -> (Vec<f64>, f64, f64) {
        let nf = self.n as f64;
        let ybar = y.iter().sum::<f64>() / nf;
        let mut c = vec![0.0; self.p];
        let mut yy = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let yc = yi - ybar;
            yy += yc * yc;
            let row = &self.design[i * self.p..(i + 1) * self.p];
            for (cj, xj) in c.iter_mut().zip(row) {
                *cj += xj * yc;
            }
        }
        c.iter_mut().for_each(|v| *v /= nf);
        (c, ybar, yy / nf)
    }

    /// Smallest penalty at which every coefficient is exactly zero.
    pub fn lambda_max(&self, y: &[f64]) -> f64 {
        let (c, _, _) = self.rhs(y);
        c.iter()
            .zip(&self.usable)
            .filter(|(_, u)| **u)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }

    /// `c - G b`.
    fn residual_correlations(&self, c: &[f64], b: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut r = c.to_vec();
        for j in 0..p {
            if b[j] != 0.0 {
                let gj = &self.gram[j * p..(j + 1) * p];
                for (rk, gk) in r.iter_mut().zip(gj) {
                    *rk -= gk * b[j];
                }
            }
        }
        r
    }

    /// Runs coordinate descent for target `y` at penalty `lambda`.
    pub fn solve(
        &self,
        y: &[f64],
        lambda: f64,
        opts: &LassoOptions,
        warm: Option<&[f64]>,
    ) -> Result<LassoFit> {
        if y.len() != self.n {
            return Err(Error::Invalid(format!(
                "target has {} rows, design has {}",
                y.len(),
                self.n
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Invalid(format!("penalty must be >= 0, got {lambda}")));
        }
        let p = self.p;
        let (c, _, yy) = self.rhs(y);
        let mut b = match warm {
            Some(w) if w.len() == p => w.to_vec(),
            _ => vec![0.0; p],
        };
        for j in 0..p {
            if !self.usable[j] {
                b[j] = 0.0;
            }
        }
        let mut r = self.residual_correlations(&c, &b);
        let objective = |b: &[f64], r: &[f64]| {
            let cb: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
            let rb: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            let l1: f64 = b.iter().map(|v| v.abs()).sum();
            0.5 * (yy - cb - rb) + lambda * l1
        };

        let mut trace = Vec::new();
        let mut sweeps = 0;
        let mut full_sweep = true;
        let mut last_delta = f64::INFINITY;
        while sweeps < opts.max_sweeps {
            sweeps += 1;
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                if !self.usable[j] || (!full_sweep && b[j] == 0.0) {
                    continue;
                }
                let gjj = self.gram[j * p + j];
                let z = r[j] + gjj * b[j];
                let new = soft_threshold(z, lambda) / gjj;
                let delta = new - b[j];
                if delta != 0.0 {
                    let gj = &self.gram[j * p..(j + 1) * p];
                    for k in 0..p {
                        r[k] -= gj[k] * delta;
                    }
                    b[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if sweeps % POLISH_EVERY == 0 && max_delta >= opts.tol {
                if let Some(nb) = self.active_set_refine(&c, &b, lambda) {
                    let nr = self.residual_correlations(&c, &nb);
                    if objective(&nb, &nr) <= objective(&b, &r) {
                        b = nb;
                        r = nr;
                        full_sweep = true;
                    }
                }
            }
            trace.push(objective(&b, &r));
            last_delta = max_delta;
            if max_delta < opts.tol {
                if full_sweep {
                    return Ok(LassoFit {
                        scaled: b,
                        sweeps,
                        objective_trace: trace,
                    });
                }
                full_sweep = true;
            } else {
                full_sweep = false;
            }
        }
        Err(Error::NonConvergence {
            iterations: sweeps,
            last_delta,
        })
    }

    /// Active-set refinement of `b`: repeatedly solves the stationarity
    /// system `G_AA x = c_A - λ s_A` on the current support and sign pattern,
    /// moves toward `x` until the first coefficient reaches zero, drops it
    /// and re-solves. Each step stays inside one orthant, where the objective
    /// is a convex quadratic minimised at `x`, so it never increases.
    fn active_set_refine(&self, c: &[f64], b: &[f64], lambda: f64) -> Option<Vec<f64>> {
        let p = self.p;
        let mut b = b.to_vec();
        let mut moved = false;
        for _ in 0..p {
            let active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
            let k = active.len();
            if k == 0 {
                break;
            }
            let mut g = vec![0.0; k * k];
            let mut x = vec![0.0; k];
            for (a, &i) in active.iter().enumerate() {
                for (col, &j) in active.iter().enumerate() {
                    g[a * k + col] = self.gram[i * p + j];
                }
                x[a] = c[i] - lambda * b[i].signum();
            }
            let g_copy = g.clone();
            if solve_dense(&mut g, &mut x, k).is_none() {
                // singular support: X_A d = 0 leaves the fit unchanged, so
                // move along ±d, not raising the L1 term, until a
                // coefficient reaches zero
                let d = null_vector(&g_copy, k)?;
                let slope: f64 = active.iter().zip(&d).map(|(&j, dj)| b[j].signum() * dj).sum();
                let dir = if slope > 0.0 { -1.0 } else { 1.0 };
                let (mut step, mut blocking) = (f64::INFINITY, None);
                for (a, &j) in active.iter().enumerate() {
                    let dj = dir * d[a];
                    if dj != 0.0 && dj.signum() != b[j].signum() && b[j].abs() / dj.abs() < step {
                        step = b[j].abs() / dj.abs();
                        blocking = Some(j);
                    }
                }
                let j0 = blocking?;
                for (a, &j) in active.iter().enumerate() {
                    b[j] += step * dir * d[a];
                }
                b[j0] = 0.0;
                moved = true;
                continue;
            }
            // first zero crossing along b -> x
            let mut step = 1.0;
            let mut blocking = None;
            for (a, &j) in active.iter().enumerate() {
                if x[a].signum() != b[j].signum() {
                    let t = b[j] / (b[j] - x[a]);
                    if t < step {
                        step = t;
                        blocking = Some(j);
                    }
                }
            }
            for (a, &j) in active.iter().enumerate() {
                b[j] += step * (x[a] - b[j]);
            }
            moved = true;
            match blocking {
                Some(j) => b[j] = 0.0,
                None => break,
            }
        }
        moved.then_some(b)
    }

    /// Maps internal coefficients back to the original columns.
    pub fn unscale(&self, fit: &LassoFit, y: &[f64], lambda: f64, hour: usize) -> LassoModel {
        let ybar = y.iter().sum::<f64>() / self.n as f64;
        let coefficients: Vec<f64> = fit
            .scaled
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *b == 0.0 { 0.0 } else { b / s })
            .collect();
        let intercept = ybar
            - coefficients
                .iter()
                .zip(&self.means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        LassoModel {
            intercept,
            coefficients,
            penalty: lambda,
            hour,
        }
    }

    /// Solves at `lambda` after warm-started solves on a geometric grid
    /// descending from [`Self::lambda_max`], which keeps coordinate descent
    /// fast when the window has fewer rows than columns.
    pub fn solve_path(&self, y: &[f64], lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
        self.solve_path_from(y, self.lambda_max(y), None, lambda, opts)
    }

    /// Like [`Self::solve_path`], but the grid starts below `from`, whose
    /// solution is `warm`.
    pub fn solve_path_from(
        &self,
        y: &[f64],
        from: f64,
        warm: Option<&[f64]>,
        lambda: f64,
        opts: &LassoOptions,
    ) -> Result<LassoFit> {
        let mut warm: Option<Vec<f64>> = warm.map(<[f64]>::to_vec);
        if lambda > 0.0 && lambda < from {
            let mut step = from * PATH_RATIO;
            while step > lambda {
                // intermediate solves only seed the next one
                if let Ok(f) = self.solve(y, step, opts, warm.as_deref()) {
                    warm = Some(f.scaled);
                }
                step *= PATH_RATIO;
            }
        }
        self.solve(y, lambda, opts, warm.as_deref())
    }

    pub fn fit(&self, y: &[f64], lambda: f64, opts: &LassoOptions, hour: usize) -> Result<LassoModel> {
        let fit = self.solve_path(y, lambda, opts)?;
        Ok(self.unscale(&fit, y, lambda, hour))
    }
}

/// Sweeps between attempts at an exact active-set solution.
const POLISH_EVERY: usize = 10;

/// Ratio between consecutive penalties of the warm-start path.
const PATH_RATIO: f64 = 0.7;

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Fits a LASSO on rows `x` and targets `y`. The returned model carries
/// `hour = 0`; callers fitting hourly models set it.
pub fn fit_lasso<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoModel> {
    GramSystem::new(x, opts.standardize)?.fit(y, lambda, opts, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0).collect())
            .collect();
        let beta: Vec<f64> = (0..p).map(|j| (j as f64 - 1.5) * 0.7).collect();
        let y = x
            .iter()
            .map(|r| {
                3.0 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                    + 0.3 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (x, y)
    }

    /// Normal-equation oracle with an explicit intercept column.
    fn ols(x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
        let n = x.len();
        let p = x[0].len();
        let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let b = DVector::from_column_slice(y);
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        let sol = ata.lu().solve(&atb).unwrap();
        (sol[0], sol.iter().skip(1).copied().collect())
    }

    #[test]
    fn zero_penalty_matches_least_squares() {
        let x = vec![
            vec![1.0, 2.0],
            vec![2.0, 0.5],
            vec![3.0, 4.0],
            vec![4.0, 1.0],
            vec![5.0, 3.5],
        ];
        let y = vec![3.1, 2.9, 8.2, 5.8, 9.9];
        let opts = LassoOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let m = fit_lasso(&x, &y, 0.0, &opts).unwrap();
        let (b0, b) = ols(&x, &y);
        assert!((m.intercept - b0).abs() < 1e-8);
        for (a, e) in m.coefficients.iter().zip(&b) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
    }

    #[test]
    fn zero_penalty_default_tolerance() {
        for seed in 0..5 {
            let (x, y) = random_problem(30, 8, seed);
            let m = fit_lasso(&x, &y, 0.0, &LassoOptions::default()).unwrap();
            let (_, b) = ols(&x, &y);
            for (a, e) in m.coefficients.iter().zip(&b) {
                assert!((a - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn kill_condition_on_standardized_columns() {
        let (x, y) = random_problem(40, 6, 9);
        // standardise columns by hand so lambda_max is max |X_jᵀ y| / n
        let n = x.len() as f64;
        let p = x[0].len();
        let mut xs = x.clone();
        for j in 0..p {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let s = (x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            xs.iter_mut().for_each(|r| r[j] = (r[j] - m) / s);
        }
        let threshold = (0..p)
            .map(|j| (xs.iter().zip(&y).map(|(r, yi)| r[j] * yi).sum::<f64>() / n).abs())
            .fold(0.0, f64::max);
        let sys = GramSystem::new(&xs, true).unwrap();
        assert!((sys.lambda_max(&y) - threshold).abs() < 1e-10);
        let m = fit_lasso(&xs, &y, threshold, &LassoOptions::default()).unwrap();
        assert!(m.coefficients.iter().all(|c| *c == 0.0));
        assert!((m.intercept - y.iter().sum::<f64>() / n).abs() < 1e-12);
        let below = fit_lasso(&xs, &y, threshold * 0.99, &LassoOptions::default()).unwrap();
        assert!(below.nonzero() >= 1);
    }

    #[test]
    fn scalar_soft_threshold_closed_form() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.37).sin() * 3.0 + 2.0]).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, r)| 1.5 * r[0] + (i % 3) as f64).collect();
        let n = x.len() as f64;
        let xm = x.iter().map(|r| r[0]).sum::<f64>() / n;
        let ym = y.iter().sum::<f64>() / n;
        let rho = x.iter().zip(&y).map(|(r, yi)| (r[0] - xm) * (yi - ym)).sum::<f64>() / n;
        let xx = x.iter().map(|r| (r[0] - xm).powi(2)).sum::<f64>() / n;
        let opts = LassoOptions {
            standardize: false,
            ..Default::default()
        };
        for lambda in [0.0, 0.1, 0.5, 2.0, 10.0] {
            let expected = rho.signum() * (rho.abs() - lambda).max(0.0) / xx;
            let m = fit_lasso(&x, &y, lambda, &opts).unwrap();
            assert!((m.coefficients[0] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn objective_non_increasing_and_sparsity_monotone() {
        let (x, y) = random_problem(25, 40, 3);
        let sys = GramSystem::new(&x, true).unwrap();
        let lmax = sys.lambda_max(&y);
        let mut last_nnz = usize::MAX;
        for frac in [0.01, 0.05, 0.1, 0.3, 0.6, 0.9] {
            let fit = sys.solve(&y, lmax * frac, &LassoOptions::default(), None).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {} ({})", w[0], w[1], w[1] - w[0]);
            }
            let nnz = fit.scaled.iter().filter(|b| **b != 0.0).count();
            assert!(nnz <= last_nnz);
            last_nnz = nnz;
        }
    }

    #[test]
    fn constant_column_stays_zero() {
        let (mut x, y) = random_problem(20, 3, 5);
        x.iter_mut().for_each(|r| r.push(7.0));
        let m = fit_lasso(&x, &y, 0.01, &LassoOptions::default()).unwrap();
        assert_eq!(m.coefficients[3], 0.0);
    }

    #[test]
    fn non_finite_and_non_convergence() {
        let (mut x, y) = random_problem(10, 3, 1);
        let opts = LassoOptions {
            max_sweeps: 1,
            tol: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            fit_lasso(&x, &y, 0.0, &opts),
            Err(Error::NonConvergence { iterations: 1, .. })
        ));
        x[2][1] = f64::NAN;
        assert!(matches!(
            fit_lasso(&x, &y, 0.0, &LassoOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }
}

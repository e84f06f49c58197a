//! Small dense solves used by the regression fitters.

/// Solves `A x = b` in place for a row-major `n×n` matrix by Gaussian
/// elimination with partial pivoting. Returns `None` when `A` is singular
/// to working precision.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col * n + k] * b[k];
        }
        b[col] = s / a[col * n + col];
    }
    Some(())
}

/// A unit-max-norm vector `d` with `A d ≈ 0` for a rank-deficient row-major
/// `n×n` matrix, from Gaussian elimination with complete pivoting. Returns
/// `None` when `A` has full numerical rank.
pub(crate) fn null_vector(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut cols: Vec<usize> = (0..n).collect();
    let mut rank = n;
    for step in 0..n {
        let (mut pr, mut pc, mut best) = (step, step, 0.0);
        for r in step..n {
            for c in step..n {
                let v = m[r * n + c].abs();
                if v > best {
                    (pr, pc, best) = (r, c, v);
                }
            }
        }
        if best <= 1e-10 * scale {
            rank = step;
            break;
        }
        for k in 0..n {
            m.swap(step * n + k, pr * n + k);
        }
        for r in 0..n {
            m.swap(r * n + step, r * n + pc);
        }
        cols.swap(step, pc);
        let d = m[step * n + step];
        for r in step + 1..n {
            let f = m[r * n + step] / d;
            if f != 0.0 {
                for k in step..n {
                    m[r * n + k] -= f * m[step * n + k];
                }
            }
        }
    }
    if rank == n {
        return None;
    }
    // first free variable set to one, the others to zero
    let mut z = vec![0.0; n];
    z[rank] = 1.0;
    for r in (0..rank).rev() {
        let mut s = 0.0;
        for k in r + 1..n {
            s -= m[r * n + k] * z[k];
        }
        z[r] = s / m[r * n + r];
    }
    let top = z.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut d = vec![0.0; n];
    for (i, &c) in cols.iter().enumerate() {
        d[c] = z[i] / top;
    }
    Some(d)
}

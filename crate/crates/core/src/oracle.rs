//! Dense reference solver for small LCPs.
//!
//! Lemke's complementary pivoting with covering vector `e`, followed by a
//! polish step that re-solves the linear system on the detected support.
//! Intended for checking the matrix-free solvers on problems with a few
//! hundred unknowns at most.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `‖min(z, Mz + q)‖∞`.
pub fn natural_residual(m: &DMatrix<f64>, q: &[f64], z: &[f64]) -> f64 {
    let w = m * DVector::from_column_slice(z) + DVector::from_column_slice(q);
    z.iter()
        .zip(w.iter())
        .fold(0.0f64, |acc, (zi, wi)| acc.max(zi.min(*wi).abs()))
}

/// Solves `0 <= Mz + q ⊥ z >= 0` for a (copositive-plus) matrix `M`.
pub fn solve_lcp_dense(m: &DMatrix<f64>, q: &[f64]) -> Result<Vec<f64>> {
    let n = q.len();
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    if q.iter().all(|&v| v >= 0.0) {
        return Ok(vec![0.0; n]);
    }
    let z = lemke(m, q)?;
    Ok(polish(m, q, z))
}

fn lemke(m: &DMatrix<f64>, q: &[f64]) -> Result<Vec<f64>> {
    let n = q.len();
    // columns: w (0..n), z (n..2n), z0 (2n), rhs (2n+1)
    let cols = 2 * n + 2;
    let z0 = 2 * n;
    let rhs = 2 * n + 1;
    let mut t = DMatrix::zeros(n, cols);
    for i in 0..n {
        t[(i, i)] = 1.0;
        for j in 0..n {
            t[(i, n + j)] = -m[(i, j)];
        }
        t[(i, z0)] = -1.0;
        t[(i, rhs)] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();

    let pivot = |t: &mut DMatrix<f64>, row: usize, col: usize| {
        let p = t[(row, col)];
        for c in 0..cols {
            t[(row, c)] /= p;
        }
        for r in 0..n {
            if r != row {
                let f = t[(r, col)];
                if f != 0.0 {
                    for c in 0..cols {
                        let v = t[(row, c)];
                        t[(r, c)] -= f * v;
                    }
                }
            }
        }
    };

    let mut row = (0..n)
        .min_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)))
        .unwrap();
    pivot(&mut t, row, z0);
    let mut leaving = basis[row];
    basis[row] = z0;

    let scale = m.amax().max(1.0);
    let max_pivots = 50 * (n + 1);
    for _ in 0..max_pivots {
        let entering = if leaving < n { leaving + n } else { leaving - n };
        // ratio test on rows with negative entering coefficient (w = rhs + ... form
        // after pivoting is rhs - coeff * x, so positive coefficient limits)
        let mut best: Option<(usize, f64)> = None;
        for r in 0..n {
            let a = t[(r, entering)];
            if a > 1e-12 * scale {
                let ratio = t[(r, rhs)] / a;
                let better = match best {
                    None => true,
                    Some((br, bv)) => {
                        ratio < bv - 1e-14 * bv.abs().max(1.0)
                            || ((ratio - bv).abs() <= 1e-14 * bv.abs().max(1.0)
                                && (basis[r] == z0 || (basis[br] != z0 && basis[r] < basis[br])))
                    }
                };
                if better {
                    best = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = best else {
            return Err(Error::Singular("Lemke terminated on a secondary ray".into()));
        };
        row = r;
        pivot(&mut t, row, entering);
        leaving = basis[row];
        basis[row] = entering;
        if leaving == z0 {
            let mut z = vec![0.0; n];
            for (r, &var) in basis.iter().enumerate() {
                if (n..2 * n).contains(&var) {
                    z[var - n] = t[(r, rhs)].max(0.0);
                }
            }
            return Ok(z);
        }
    }
    Err(Error::Singular("Lemke pivot limit reached".into()))
}

/// Re-solves `M_SS z_S = -q_S` on the support and keeps the result if it is
/// at least as complementary as the pivoted solution.
fn polish(m: &DMatrix<f64>, q: &[f64], z: Vec<f64>) -> Vec<f64> {
    let n = q.len();
    let zmax = z.iter().fold(0.0f64, |a, v| a.max(*v));
    let support: Vec<usize> = (0..n).filter(|&i| z[i] > 1e-13 * zmax.max(1.0)).collect();
    if support.is_empty() {
        return z;
    }
    let k = support.len();
    let mss = DMatrix::from_fn(k, k, |i, j| m[(support[i], support[j])]);
    let rhs = DVector::from_fn(k, |i, _| -q[support[i]]);
    let Some(sol) = mss.lu().solve(&rhs) else {
        return z;
    };
    let mut polished = vec![0.0; n];
    for (i, &s) in support.iter().enumerate() {
        polished[s] = sol[i].max(0.0);
    }
    if natural_residual(m, q, &polished) <= natural_residual(m, q, &z) {
        polished
    } else {
        z
    }
}

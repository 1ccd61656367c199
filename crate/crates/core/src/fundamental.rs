//! Estimation of the fundamental quantity
//!
//! ```text
//! c(A) = min_{‖z‖∞ = 1} h(z),   h(z) = max_j z_j (Az)_j
//! ```
//!
//! which controls how far the solution of `LCP(A, b)` moves when `A` is
//! perturbed. `h` is nonsmooth and the minimization nonconvex, so the
//! estimate comes from multi-start projected subgradient descent over every
//! face `z_i = σ` of the unit cube; it is an upper estimate that always lies
//! in `[λ_min/n, λ_min]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf};
use crate::operators::{check_dim, infnorm_distance, DenseMatrix};

#[derive(Clone, Debug)]
pub struct CofaOptions {
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    /// Stop a descent once ten iterations together gain less than
    /// `rel_tol · |h|`.
    pub rel_tol: f64,
    /// Uniform random face points screened by `h`, spread round-robin over
    /// the `2n` faces.
    pub random_samples: usize,
    /// Best screened samples per face used as extra descent starts.
    pub screened_starts: usize,
    pub seed: u64,
}

impl Default for CofaOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            max_backtracks: 40,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            rel_tol: 1e-7,
            random_samples: 256,
            screened_starts: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CofaResult {
    pub c_est: f64,
    pub argmin_z: Vec<f64>,
    /// `λ_min / n`
    pub lower: f64,
    /// `λ_min`
    pub upper: f64,
}

fn pieces(a: &DMatrix<f64>, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let az = a * DVector::from_column_slice(z);
    let vals = z.iter().zip(az.iter()).map(|(zj, azj)| zj * azj).collect();
    (vals, az.as_slice().to_vec())
}

fn max_with_index(vals: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, &v) in vals.iter().enumerate() {
        if v > best.0 {
            best = (v, j);
        }
    }
    best
}

/// `h(z) = max_j z_j(Az)_j` and the first maximizing index.
pub fn h_value(a: &DenseMatrix, z: &[f64]) -> (f64, usize) {
    let (vals, _) = pieces(a.matrix(), z);
    max_with_index(&vals)
}

/// Gradient of the piece `z_j(Az)_j`: `(e_j e_jᵀA + Aᵀe_j e_jᵀ) z`.
fn piece_gradient(a: &DMatrix<f64>, z: &[f64], az: &[f64], j: usize) -> Vec<f64> {
    let mut g: Vec<f64> = a.row(j).iter().map(|v| v * z[j]).collect();
    g[j] += az[j];
    g
}

/// Almost-everywhere gradient of `h` using the piece chosen by [`h_value`].
pub fn h_subgradient(a: &DenseMatrix, z: &[f64]) -> Vec<f64> {
    let (vals, az) = pieces(a.matrix(), z);
    let (_, j) = max_with_index(&vals);
    piece_gradient(a.matrix(), z, &az, j)
}

/// Minimum-norm point of the convex hull of `ps` by Wolfe's algorithm.
fn min_norm_point(ps: &[Vec<f64>]) -> Vec<f64> {
    let combine = |set: &[usize], w: &[f64]| {
        let mut x = vec![0.0; ps[0].len()];
        for (&s, &ws) in set.iter().zip(w) {
            for (xv, pv) in x.iter_mut().zip(&ps[s]) {
                *xv += ws * pv;
            }
        }
        x
    };
    let scale = ps.iter().map(|p| dot(p, p)).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return vec![0.0; ps[0].len()];
    }
    let first = (0..ps.len())
        .min_by(|&a, &b| dot(&ps[a], &ps[a]).total_cmp(&dot(&ps[b], &ps[b])))
        .unwrap_or(0);
    let mut set = vec![first];
    let mut w = vec![1.0];
    let mut x = ps[first].clone();
    for _ in 0..10 * ps.len() + 10 {
        let xx = dot(&x, &x);
        let (j, xpj) = (0..ps.len())
            .map(|j| (j, dot(&x, &ps[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xx - xpj <= 1e-14 * scale || set.contains(&j) {
            break;
        }
        set.push(j);
        w.push(0.0);
        loop {
            // affine minimizer over the current set
            let k = set.len();
            let mut kkt = DMatrix::zeros(k + 1, k + 1);
            for a in 0..k {
                for b in 0..k {
                    kkt[(a, b)] = dot(&ps[set[a]], &ps[set[b]]);
                }
                kkt[(a, k)] = 1.0;
                kkt[(k, a)] = 1.0;
            }
            let mut rhs = DVector::zeros(k + 1);
            rhs[k] = 1.0;
            let sol = match kkt.clone().lu().solve(&rhs) {
                Some(v) if v.iter().all(|t| t.is_finite()) => v,
                _ => kkt.svd(true, true).solve(&rhs, 1e-12).unwrap_or(rhs),
            };
            let v: Vec<f64> = sol.iter().take(k).copied().collect();
            if v.iter().all(|&t| t > 1e-14) {
                w = v;
                break;
            }
            let theta = w
                .iter()
                .zip(&v)
                .filter(|(_, &vi)| vi <= 1e-14)
                .map(|(&wi, &vi)| if wi - vi > 0.0 { wi / (wi - vi) } else { 0.0 })
                .fold(1.0f64, f64::min);
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi += theta * (vi - *wi);
            }
            let keep: Vec<bool> = w.iter().map(|&wi| wi > 1e-14).collect();
            set = set.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
            w = w.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|wi| *wi /= total);
            if set.len() <= 1 {
                break;
            }
        }
        x = combine(&set, &w);
    }
    x
}

/// Descent direction (to be subtracted) from the min-norm combination of
/// the pieces in `active`, restricted to the face `z_i = σ`. Coordinates
/// sitting on the box boundary whose step would leave the box are frozen.
fn face_direction(a: &DMatrix<f64>, z: &[f64], az: &[f64], active: &[usize], i: usize) -> Vec<f64> {
    let n = z.len();
    let mut fixed = vec![false; n];
    fixed[i] = true;
    let raw: Vec<Vec<f64>> = active.iter().map(|&j| piece_gradient(a, z, az, j)).collect();
    loop {
        let gs: Vec<Vec<f64>> = raw
            .iter()
            .map(|g| g.iter().zip(&fixed).map(|(v, f)| if *f { 0.0 } else { *v }).collect())
            .collect();
        let d = if gs.len() == 1 { gs[0].clone() } else { min_norm_point(&gs) };
        let outward: Vec<usize> = (0..n)
            .filter(|&k| !fixed[k] && ((z[k] >= 1.0 && d[k] < 0.0) || (z[k] <= -1.0 && d[k] > 0.0)))
            .collect();
        if outward.is_empty() {
            return d;
        }
        for k in outward {
            fixed[k] = true;
        }
    }
}

fn project_face(z: &mut [f64], i: usize, sigma: f64) {
    for v in z.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    z[i] = sigma;
}

/// Projected descent on the face `z_i = σ` from `z`. Returns the best point.
///
/// Each iteration tries the subgradient of the maximizing piece and then
/// min-norm directions over ε-active pieces. A direction that only admits a
/// tiny step (zigzag across a ridge) does not end the search; the largest
/// decrease among all candidates is taken instead.
fn descend(a: &DMatrix<f64>, mut z: Vec<f64>, i: usize, sigma: f64, opts: &CofaOptions) -> (f64, Vec<f64>) {
    project_face(&mut z, i, sigma);
    let (mut vals, mut az) = pieces(a, &z);
    let (mut h, mut jstar) = max_with_index(&vals);
    let mut t = 1.0f64;
    let mut window_start = h;
    for iter in 0..opts.max_iter {
        if iter % 10 == 9 {
            if window_start - h < opts.rel_tol * h.abs() {
                break;
            }
            window_start = h;
        }
        let scale = h.abs().max(1e-300);
        let mut tried: Vec<Vec<usize>> = Vec::new();
        // (h, step, z, vals, az, jstar) of the best trial so far
        let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>, Vec<f64>, usize)> = None;
        for eps in [None, Some(0.3), Some(1e-1), Some(1e-2), Some(1e-3), Some(1e-4), Some(1e-7)] {
            let active: Vec<usize> = match eps {
                None => vec![jstar],
                Some(e) => (0..z.len()).filter(|&j| vals[j] >= h - e * scale).collect(),
            };
            if tried.contains(&active) {
                continue;
            }
            tried.push(active.clone());
            let d = face_direction(a, &z, &az, &active, i);
            if norm_inf(&d) == 0.0 {
                continue;
            }
            let mut step = t;
            for _ in 0..=opts.max_backtracks {
                let mut trial: Vec<f64> = z.iter().zip(&d).map(|(zv, dv)| zv - step * dv).collect();
                project_face(&mut trial, i, sigma);
                let displacement: f64 = trial.iter().zip(&z).zip(&d).map(|((tv, zv), dv)| dv * (zv - tv)).sum();
                let (tvals, taz) = pieces(a, &trial);
                let (th, tj) = max_with_index(&tvals);
                // strict decrease guards against accepting rounding noise
                if displacement > 0.0 && th < h && th <= h - opts.sufficient_decrease * displacement {
                    if best.as_ref().is_none_or(|b| th < b.0) {
                        best = Some((th, step, trial, tvals, taz, tj));
                    }
                    break;
                }
                step *= opts.shrink;
            }
        }
        match best {
            Some((th, step, tz, tvals, taz, tj)) => {
                h = th;
                z = tz;
                vals = tvals;
                az = taz;
                jstar = tj;
                t = (step * 2.0).clamp(1.0, 1e3);
            }
            None => break,
        }
    }
    (h, z)
}

/// Estimates `c(A)` for a symmetric positive-definite `A`.
pub fn fundamental_quantity(a: &DenseMatrix, opts: &CofaOptions) -> Result<CofaResult> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("c(A) of an empty matrix".into()));
    }
    let m = a.matrix();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let (kmin, lambda_min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    if !(lambda_min > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("λ_min = {lambda_min:e}")));
    }
    let v_min: Vec<f64> = eig.eigenvectors.column(kmin).iter().copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let faces = 2 * n;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..n {
        for sigma in [-1.0, 1.0] {
            let mut starts = vec![];
            let mut unit = vec![0.0; n];
            unit[i] = sigma;
            if v_min[i] != 0.0 {
                starts.push(v_min.iter().map(|v| sigma * v / v_min[i]).collect::<Vec<_>>());
            }
            starts.push(unit);
            let face = 2 * i + usize::from(sigma > 0.0);
            let count = opts.random_samples / faces + usize::from(face < opts.random_samples % faces);
            let mut screened: Vec<(f64, Vec<f64>)> = (0..count)
                .map(|_| {
                    let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    z[i] = sigma;
                    (max_with_index(&pieces(m, &z).0).0, z)
                })
                .collect();
            screened.sort_by(|a, b| a.0.total_cmp(&b.0));
            starts.extend(screened.into_iter().take(opts.screened_starts).map(|(_, z)| z));
            for z0 in starts {
                let (h, z) = descend(m, z0, i, sigma, opts);
                if best.as_ref().is_none_or(|(bh, _)| h < *bh) {
                    best = Some((h, z));
                }
            }
        }
    }
    let (c_est, argmin_z) = best.expect("n > 0 gives at least one restart");
    Ok(CofaResult {
        c_est,
        argmin_z,
        lower: lambda_min / n as f64,
        upper: lambda_min,
    })
}

/// Coefficient `‖(-b)₊‖∞ / (c - δ)²` bounding solution movement under
/// perturbations of size at most `δ < c`.
pub fn lipschitz_bound(c: f64, delta: f64, b: &[f64]) -> Result<f64> {
    if !(delta >= 0.0 && delta < c) {
        return Err(Error::InvalidArgument(format!(
            "perturbation radius {delta} must satisfy 0 <= δ < c = {c}"
        )));
    }
    let neg = b.iter().fold(0.0f64, |m, v| m.max(-v));
    Ok(neg / ((c - delta) * (c - delta)))
}

/// Whether `Â` lies in the neighborhood `‖A - Â‖∞ < c`.
pub fn neighborhood_check(a: &DenseMatrix, a_hat: &DenseMatrix, c: f64) -> Result<bool> {
    check_dim(a.dim(), a_hat.dim())?;
    Ok(infnorm_distance(a, a_hat)? < c)
}

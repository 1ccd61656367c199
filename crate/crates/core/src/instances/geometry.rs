//! Sphere configurations, gaps, contact detection and the contact Jacobian.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleConfig {
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
}

impl ParticleConfig {
    pub fn new(centers: Vec<[f64; 3]>, radii: Vec<f64>) -> Result<Self> {
        if centers.len() != radii.len() {
            return Err(Error::DimensionMismatch {
                expected: centers.len(),
                got: radii.len(),
            });
        }
        if let Some((i, r)) = radii.iter().enumerate().find(|(_, r)| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(format!("radius {i} = {r} is not positive")));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("particle centers"));
        }
        Ok(Self { centers, radii })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Centers scaled by `gamma` about the origin.
    pub fn scaled(&self, gamma: f64) -> Self {
        Self {
            centers: self.centers.iter().map(|c| c.map(|v| v * gamma)).collect(),
            radii: self.radii.clone(),
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().fold(0.0, |m: f64, r| m.max(*r))
    }

    pub fn min_radius(&self) -> f64 {
        self.radii.iter().fold(f64::INFINITY, |m: f64, r| m.min(*r))
    }
}

pub(crate) fn diff(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
}

pub(crate) fn length(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Signed separation `‖cj - ci‖ - ri - rj`.
pub fn gap(ci: &[f64; 3], ri: f64, cj: &[f64; 3], rj: f64) -> Result<f64> {
    let d = length(&diff(ci, cj));
    if d == 0.0 {
        return Err(Error::InvalidArgument("coincident sphere centers".into()));
    }
    Ok(d - ri - rj)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactSet {
    pub pairs: Vec<(usize, usize)>,
    pub gaps: Vec<f64>,
    pub normals: Vec<[f64; 3]>,
}

impl ContactSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pairs `(i, j)`, `i < j`, whose centers are within `reach` of each other,
/// found with a uniform cell list. Sorted lexicographically.
pub(crate) fn neighbor_pairs(centers: &[[f64; 3]], reach: f64) -> Vec<(usize, usize)> {
    let n = centers.len();
    if n < 2 {
        return Vec::new();
    }
    if !(reach > 0.0 && reach.is_finite()) {
        // degenerate reach: brute force
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if length(&diff(&centers[i], &centers[j])) <= reach {
                    out.push((i, j));
                }
            }
        }
        return out;
    }
    let cell = |c: &[f64; 3]| c.map(|v| (v / reach).floor() as i64);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, c) in centers.iter().enumerate() {
        grid.entry(cell(c)).or_default().push(i);
    }
    let mut out = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        let k = cell(c);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in list {
                            if j > i && length(&diff(c, &centers[j])) <= reach {
                                out.push((i, j));
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// All pairs with gap `Φ <= delta_t`.
pub fn active_set(config: &ParticleConfig, delta_t: f64) -> Result<ContactSet> {
    if !(delta_t >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta_t must be nonnegative, got {delta_t}")));
    }
    let reach = 2.0 * config.max_radius() + delta_t;
    let mut set = ContactSet::default();
    for (i, j) in neighbor_pairs(&config.centers, reach) {
        let (ci, cj) = (&config.centers[i], &config.centers[j]);
        let phi = gap(ci, config.radii[i], cj, config.radii[j])?;
        if phi <= delta_t {
            let d = diff(ci, cj);
            let len = length(&d);
            set.pairs.push((i, j));
            set.gaps.push(phi);
            set.normals.push(d.map(|v| v / len));
        }
    }
    Ok(set)
}

/// Number of pairs with gap `Φ <= delta_t`.
pub fn contact_count(config: &ParticleConfig, delta_t: f64) -> Result<usize> {
    Ok(active_set(config, delta_t)?.len())
}

/// Contact Jacobian `D` (`6Np × Nc`): column `ℓ` holds `-n_ℓ` in the force
/// block of particle `i` and `+n_ℓ` in that of particle `j`; torque rows are
/// zero for spheres.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseD {
    pub particles: usize,
    pub columns: Vec<(usize, usize, [f64; 3])>,
}

impl SparseD {
    pub fn assemble(config: &ParticleConfig, contacts: &ContactSet) -> Self {
        Self {
            particles: config.len(),
            columns: contacts
                .pairs
                .iter()
                .zip(&contacts.normals)
                .map(|(&(i, j), n)| (i, j, *n))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        6 * self.particles
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    /// Translational part `D x` (`3Np` entries; torques are identically 0).
    pub fn apply_translational(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; 3 * self.particles];
        for (&(i, j, n), &xl) in self.columns.iter().zip(x) {
            for k in 0..3 {
                f[3 * i + k] -= n[k] * xl;
                f[3 * j + k] += n[k] * xl;
            }
        }
        f
    }

    /// `Dᵀ` restricted to the translational part of a `3Np` vector.
    pub fn apply_transpose_translational(&self, u: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|&(i, j, n)| (0..3).map(|k| n[k] * (u[3 * j + k] - u[3 * i + k])).sum())
            .collect()
    }

    /// Full `6Np` force/torque vector `D x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let ft = self.apply_translational(x);
        let mut out = vec![0.0; self.rows()];
        for p in 0..self.particles {
            out[6 * p..6 * p + 3].copy_from_slice(&ft[3 * p..3 * p + 3]);
        }
        out
    }

    /// `Dᵀ u` for a `6Np` velocity vector.
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let ut: Vec<f64> = (0..self.particles)
            .flat_map(|p| u[6 * p..6 * p + 3].iter().copied())
            .collect();
        self.apply_transpose_translational(&ut)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows(), self.cols());
        for (l, &(i, j, n)) in self.columns.iter().enumerate() {
            for k in 0..3 {
                d[(6 * i + k, l)] = -n[k];
                d[(6 * j + k, l)] = n[k];
            }
        }
        d
    }
}

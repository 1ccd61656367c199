//! Analytic stand-ins for the Stokes mobility map from forces and torques to
//! velocities.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::check_dim;

use super::geometry::{diff, length, neighbor_pairs, ParticleConfig};

/// `1/(6π)`: unit-radius spheres then have unit translational drag.
pub const DEFAULT_VISCOSITY: f64 = 1.0 / (6.0 * PI);

/// Pair coupling reach in units of `2 max r`.
pub const DEFAULT_RPY_CUTOFF: f64 = 2.0;

/// Wendland C² taper `(1-t)⁴(4t+1)`, positive definite on `R³`.
pub fn wendland_taper(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t;
        s * s * s * s * (4.0 * t + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MobilityModel {
    /// Isolated spheres: `U = F/(6πηr)`, `Ω = T/(8πηr³)`.
    DragDiagonal { eta: f64 },
    /// Drag plus Rotne–Prager–Yamakawa translational coupling, tapered to
    /// zero at `cutoff · 2 max r`. A hard truncation loses positive
    /// definiteness in dense packings; the taper is an elementwise product
    /// with a positive-definite kernel and keeps it.
    RpyLike { eta: f64, cutoff: f64 },
}

impl MobilityModel {
    pub fn drag() -> Self {
        MobilityModel::DragDiagonal { eta: DEFAULT_VISCOSITY }
    }

    pub fn rpy() -> Self {
        MobilityModel::RpyLike {
            eta: DEFAULT_VISCOSITY,
            cutoff: DEFAULT_RPY_CUTOFF,
        }
    }

    pub fn eta(&self) -> f64 {
        match *self {
            MobilityModel::DragDiagonal { eta } | MobilityModel::RpyLike { eta, .. } => eta,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MobilityModel::DragDiagonal { .. } => "drag",
            MobilityModel::RpyLike { .. } => "rpy",
        }
    }

    fn validate(&self) -> Result<()> {
        let eta = self.eta();
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity must be positive, got {eta}")));
        }
        if let MobilityModel::RpyLike { cutoff, .. } = *self {
            if !(cutoff >= 0.0) {
                return Err(Error::InvalidArgument(format!("cutoff must be nonnegative, got {cutoff}")));
            }
        }
        Ok(())
    }
}

/// RPY translational pair tensor for centers separated by `r`.
pub fn rpy_pair_tensor(r: &[f64; 3], ai: f64, aj: f64, eta: f64) -> [[f64; 3]; 3] {
    let dist = length(r);
    let rh = r.map(|v| v / dist);
    let (iso, aniso) = if dist >= ai + aj {
        let s = ai * ai + aj * aj;
        let pre = 1.0 / (8.0 * PI * eta * dist);
        (pre * (1.0 + s / (3.0 * dist * dist)), pre * (1.0 - s / (dist * dist)))
    } else {
        // overlapping spheres, with the mean radius when radii differ
        let a = 0.5 * (ai + aj);
        let pre = 1.0 / (6.0 * PI * eta * a);
        (pre * (1.0 - 9.0 * dist / (32.0 * a)), pre * (3.0 * dist / (32.0 * a)))
    };
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = aniso * rh[i] * rh[j] + if i == j { iso } else { 0.0 };
        }
    }
    t
}

/// Mobility realized for one configuration.
#[derive(Clone, Debug)]
pub struct Mobility {
    translational: Vec<f64>,
    rotational: Vec<f64>,
    couplings: Vec<(usize, usize, [[f64; 3]; 3])>,
}

impl Mobility {
    pub fn new(model: &MobilityModel, config: &ParticleConfig) -> Result<Self> {
        model.validate()?;
        let eta = model.eta();
        let translational = config.radii.iter().map(|r| 1.0 / (6.0 * PI * eta * r)).collect();
        let rotational = config.radii.iter().map(|r| 1.0 / (8.0 * PI * eta * r * r * r)).collect();
        let mut couplings = Vec::new();
        if let MobilityModel::RpyLike { cutoff, .. } = *model {
            if cutoff > 0.0 {
                let reach = cutoff * 2.0 * config.max_radius();
                for (i, j) in neighbor_pairs(&config.centers, reach) {
                    let r = diff(&config.centers[i], &config.centers[j]);
                    let dist = length(&r);
                    if dist == 0.0 {
                        return Err(Error::InvalidArgument("coincident sphere centers".into()));
                    }
                    let w = if reach.is_finite() { wendland_taper(dist / reach) } else { 1.0 };
                    if w > 0.0 {
                        let t = rpy_pair_tensor(&r, config.radii[i], config.radii[j], eta).map(|row| row.map(|v| w * v));
                        couplings.push((i, j, t));
                    }
                }
            }
        }
        Ok(Self {
            translational,
            rotational,
            couplings,
        })
    }

    pub fn particles(&self) -> usize {
        self.translational.len()
    }

    pub fn coupling_count(&self) -> usize {
        self.couplings.len()
    }

    /// Translational block applied to `3Np` forces.
    pub fn apply_translational(&self, f: &[f64]) -> Vec<f64> {
        let mut u: Vec<f64> = f
            .chunks(3)
            .zip(&self.translational)
            .flat_map(|(fp, m)| fp.iter().map(move |v| v * m))
            .collect();
        for &(i, j, ref t) in &self.couplings {
            for a in 0..3 {
                let mut ui = 0.0;
                let mut uj = 0.0;
                for b in 0..3 {
                    ui += t[a][b] * f[3 * j + b];
                    uj += t[a][b] * f[3 * i + b];
                }
                u[3 * i + a] += ui;
                u[3 * j + a] += uj;
            }
        }
        u
    }

    /// Full `6Np` map from forces/torques to velocities.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let np = self.particles();
        check_dim(6 * np, f.len())?;
        let ft: Vec<f64> = (0..np).flat_map(|p| f[6 * p..6 * p + 3].iter().copied()).collect();
        let ut = self.apply_translational(&ft);
        let mut out = vec![0.0; 6 * np];
        for p in 0..np {
            out[6 * p..6 * p + 3].copy_from_slice(&ut[3 * p..3 * p + 3]);
            for k in 3..6 {
                out[6 * p + k] = f[6 * p + k] * self.rotational[p];
            }
        }
        Ok(out)
    }

    pub fn translational_dense(&self) -> DMatrix<f64> {
        let n = 3 * self.particles();
        let mut m = DMatrix::zeros(n, n);
        for (p, &v) in self.translational.iter().enumerate() {
            for k in 0..3 {
                m[(3 * p + k, 3 * p + k)] = v;
            }
        }
        for &(i, j, ref t) in &self.couplings {
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * i + a, 3 * j + b)] += t[a][b];
                    m[(3 * j + a, 3 * i + b)] += t[a][b];
                }
            }
        }
        m
    }

    /// Dense eigenvalue check; the rotational block is diagonal positive.
    pub fn is_positive_definite(&self) -> bool {
        if self.couplings.is_empty() {
            return true;
        }
        let ev = self.translational_dense().symmetric_eigenvalues();
        ev.min() > 0.0
    }
}

/// `M F` for a `6Np` force/torque vector.
pub fn mobility_apply(model: &MobilityModel, config: &ParticleConfig, f: &[f64]) -> Result<Vec<f64>> {
    Mobility::new(model, config)?.apply(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(centers: Vec<[f64; 3]>) -> ParticleConfig {
        let n = centers.len();
        ParticleConfig::new(centers, vec![1.0; n]).unwrap()
    }

    #[test]
    fn drag_unit_normalization() {
        let c = config(vec![[0.0; 3], [5.0, 0.0, 0.0]]);
        let f: Vec<f64> = (0..12).map(|k| k as f64 - 4.0).collect();
        let u = mobility_apply(&MobilityModel::drag(), &c, &f).unwrap();
        for p in 0..2 {
            for k in 0..3 {
                assert!((u[6 * p + k] - f[6 * p + k]).abs() < 1e-15);
                assert!((u[6 * p + 3 + k] - 0.75 * f[6 * p + 3 + k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rpy_reduces_to_drag_without_pairs() {
        let one = config(vec![[0.0; 3]]);
        let f = [1.0, -2.0, 3.0, 0.5, 0.1, -0.2];
        assert_eq!(
            mobility_apply(&MobilityModel::rpy(), &one, &f).unwrap(),
            mobility_apply(&MobilityModel::drag(), &one, &f).unwrap()
        );
        let far = config(vec![[0.0; 3], [10.0, 0.0, 0.0]]);
        let model = MobilityModel::RpyLike {
            eta: DEFAULT_VISCOSITY,
            cutoff: 1.0,
        };
        let f: Vec<f64> = (0..12).map(|k| (k as f64).sin()).collect();
        assert_eq!(
            mobility_apply(&model, &far, &f).unwrap(),
            mobility_apply(&MobilityModel::drag(), &far, &f).unwrap()
        );
    }

    #[test]
    fn rpy_tensor_is_continuous_at_contact() {
        let eta = DEFAULT_VISCOSITY;
        let a = rpy_pair_tensor(&[2.0, 0.0, 0.0], 1.0, 1.0, eta);
        let b = rpy_pair_tensor(&[2.0 - 1e-12, 0.0, 0.0], 1.0, 1.0, eta);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rpy_dense_is_symmetric_positive_definite_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let centers: Vec<[f64; 3]> = (0..20)
                .map(|_| [0, 1, 2].map(|_| rng.random_range(-4.0..4.0)))
                .collect();
            let c = config(centers);
            let m = Mobility::new(&MobilityModel::RpyLike { eta: DEFAULT_VISCOSITY, cutoff: f64::INFINITY }, &c).unwrap();
            let dense = m.translational_dense();
            assert!((&dense - dense.transpose()).amax() < 1e-14);
            assert!(m.is_positive_definite());
            let f: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
            let want = &dense * nalgebra::DVector::from_column_slice(&f);
            for (a, b) in m.apply_translational(&f).iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tapered_rpy_stays_positive_definite_in_dense_packings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for cutoff in [1.0, 1.5, 2.0, 3.0] {
            let centers: Vec<[f64; 3]> = (0..4)
                .flat_map(|i| (0..4).flat_map(move |j| (0..4).map(move |k| [i, j, k])))
                .map(|p| p.map(|v| 2.1 * v as f64 + rng.random_range(-0.5..0.5)))
                .collect();
            let m = Mobility::new(&MobilityModel::RpyLike { eta: DEFAULT_VISCOSITY, cutoff }, &config(centers)).unwrap();
            assert!(m.coupling_count() > 0);
            assert!(m.is_positive_definite(), "cutoff {cutoff}");
        }
    }

    #[test]
    fn taper_vanishes_beyond_cutoff() {
        assert_eq!(wendland_taper(0.0), 1.0);
        assert_eq!(wendland_taper(1.0), 0.0);
        assert_eq!(wendland_taper(3.0), 0.0);
        let c = config(vec![[0.0; 3], [3.9, 0.0, 0.0], [0.0, 4.1, 0.0]]);
        let m = Mobility::new(&MobilityModel::RpyLike { eta: DEFAULT_VISCOSITY, cutoff: 2.0 }, &c).unwrap();
        assert_eq!(m.coupling_count(), 1);
    }

    #[test]
    fn invalid_viscosity() {
        let c = config(vec![[0.0; 3]]);
        let model = MobilityModel::DragDiagonal { eta: 0.0 };
        assert!(Mobility::new(&model, &c).is_err());
    }
}

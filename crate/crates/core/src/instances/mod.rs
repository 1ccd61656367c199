//! Synthetic contact LCPs: sphere packings, contact Jacobians, mobility
//! stand-ins, low-fidelity operators and instance files.
//!
//! An instance is `A = Dᵀ M D`, `b = Φ/Δt + Dᵀ U_nc`, where `D` maps contact
//! forces to particle forces, `M` is the mobility and `U_nc` a random
//! background velocity.

pub mod format;
pub mod geometry;
pub mod lattice;
pub mod lowfi;
pub mod mobility;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    check_dim, CountedOperator, DenseMatrix, Fidelity, LinearMap, MatVecOperator, DEFAULT_DENSE_CAP,
};

pub use format::{load_instance, read_instance, save_instance, write_instance, FORMAT_VERSION};
pub use geometry::{active_set, contact_count, gap, ContactSet, ParticleConfig, SparseD};
pub use lattice::{initialize_configuration, jittered_lattice, LatticeParams, LatticeResult};
pub use lowfi::{make_low_fidelity, LowFiScheme, LowFidelity};
pub use mobility::{mobility_apply, Mobility, MobilityModel};

/// Default declared cost of one high-fidelity MVP in low-fidelity MVPs.
pub const DEFAULT_COST_RATIO: f64 = 10.0;

/// Instances whose `μ/L` falls below this are rejected at generation.
pub const MIN_INVERSE_CONDITION: f64 = 1e-10;

/// Everything needed to rebuild the contact operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactGeometry {
    pub config: ParticleConfig,
    pub delta_t: f64,
    pub model: MobilityModel,
}

impl ContactGeometry {
    pub fn contacts(&self) -> Result<ContactSet> {
        active_set(&self.config, self.delta_t)
    }

    pub fn operator(&self) -> Result<ContactOperator> {
        ContactOperator::new(&self.config, &self.contacts()?, &self.model)
    }
}

/// `x ↦ Dᵀ M D x` without forming `A`.
#[derive(Clone, Debug)]
pub struct ContactOperator {
    d: SparseD,
    mobility: Mobility,
}

impl ContactOperator {
    pub fn new(config: &ParticleConfig, contacts: &ContactSet, model: &MobilityModel) -> Result<Self> {
        Ok(Self {
            d: SparseD::assemble(config, contacts),
            mobility: Mobility::new(model, config)?,
        })
    }

    pub fn d(&self) -> &SparseD {
        &self.d
    }

    pub fn mobility(&self) -> &Mobility {
        &self.mobility
    }

    /// Dense `Dᵀ M D` through dense `D` and the full `6Np` mobility.
    pub fn dense_assembly(&self) -> Result<DenseMatrix> {
        let d = self.d.to_dense();
        let mut md = nalgebra::DMatrix::zeros(d.nrows(), d.ncols());
        for (l, col) in d.column_iter().enumerate() {
            let v = self.mobility.apply(col.as_slice())?;
            md.column_mut(l).copy_from_slice(&v);
        }
        Ok(DenseMatrix::new(d.transpose() * md))
    }
}

impl LinearMap for ContactOperator {
    fn dim(&self) -> usize {
        self.d.cols()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        // torque rows of D vanish, so only the translational block of M acts
        let f = self.d.apply_translational(x);
        let u = self.mobility.apply_translational(&f);
        out.copy_from_slice(&self.d.apply_transpose_translational(&u));
    }
}

/// How an instance was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub m: usize,
    pub dx: f64,
    pub eps_x: f64,
    pub gamma: f64,
    pub seed: u64,
    pub model: MobilityModel,
    pub delta_t: f64,
    pub dt: f64,
    pub contacts: usize,
    pub in_window: bool,
    pub attempts: usize,
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
}

impl GeneratorRecord {
    pub fn geometry(&self) -> Result<ContactGeometry> {
        Ok(ContactGeometry {
            config: ParticleConfig::new(self.centers.clone(), self.radii.clone())?,
            delta_t: self.delta_t,
            model: self.model,
        })
    }
}

/// One LCP with its high- and low-fidelity operators.
#[derive(Clone, Debug)]
pub struct LcpInstance {
    pub b: Vec<f64>,
    pub a_high: MatVecOperator,
    pub a_low: MatVecOperator,
    /// `None` when `Â` is `A` itself.
    pub lowfi_scheme: Option<LowFiScheme>,
    pub lowfi_params: BTreeMap<String, f64>,
    pub dense_a: Option<DenseMatrix>,
    pub dense_a_low: Option<DenseMatrix>,
    /// Largest and smallest eigenvalues of `A` when dense.
    pub lipschitz: Option<f64>,
    pub mu: Option<f64>,
    pub cost_ratio: f64,
    pub seed: u64,
    pub generator: Option<GeneratorRecord>,
}

impl LcpInstance {
    /// Instance with `Â = A` from an explicit matrix.
    pub fn from_dense(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        check_dim(a.dim(), b.len())?;
        let (mu, l) = if a.dim() > 0 {
            let (lo, hi) = a.extreme_eigenvalues();
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        let high = MatVecOperator::from_map(a.clone(), Fidelity::High);
        Ok(Self {
            b,
            a_low: high.with_fidelity(Fidelity::Low),
            a_high: high,
            lowfi_scheme: None,
            lowfi_params: BTreeMap::new(),
            dense_a_low: Some(a.clone()),
            dense_a: Some(a),
            lipschitz: l,
            mu,
            cost_ratio: DEFAULT_COST_RATIO,
            seed: 0,
            generator: None,
        })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Fresh counter over `A`.
    pub fn counted_high(&self) -> CountedOperator {
        CountedOperator::new(self.a_high.clone())
    }

    /// Fresh counter over `Â`.
    pub fn counted_low(&self) -> CountedOperator {
        CountedOperator::new(self.a_low.clone())
    }

    pub fn geometry(&self) -> Option<Result<ContactGeometry>> {
        self.generator.as_ref().map(GeneratorRecord::geometry)
    }

    /// Replaces `Â` according to `scheme`.
    pub fn with_low_fidelity<R: rand::Rng>(mut self, scheme: LowFiScheme, rng: &mut R) -> Result<Self> {
        let geometry = self.geometry().transpose()?;
        let low = make_low_fidelity(&self.a_high, self.dense_a.as_ref(), geometry.as_ref(), scheme, rng)?;
        self.a_low = low.operator;
        self.dense_a_low = low.dense;
        self.lowfi_params = low.params;
        self.lowfi_scheme = Some(scheme);
        Ok(self)
    }

    pub fn condition_number(&self) -> Option<f64> {
        Some(self.lipschitz? / self.mu?)
    }
}

/// `A = Dᵀ M D` and `b = Φ/dt + Dᵀ U_nc` for one configuration.
///
/// `A` is dense-materialized when `n <= dense_cap`. With no contacts the
/// instance is empty (`n = 0`).
pub fn assemble_lcp(geometry: &ContactGeometry, u_nc: &[f64], dt: f64, dense_cap: usize) -> Result<LcpInstance> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    check_dim(6 * geometry.config.len(), u_nc.len())?;
    let contacts = geometry.contacts()?;
    let op = ContactOperator::new(&geometry.config, &contacts, &geometry.model)?;
    let du = op.d().apply_transpose(u_nc);
    let b: Vec<f64> = contacts.gaps.iter().zip(&du).map(|(phi, v)| phi / dt + v).collect();
    let n = b.len();
    let high = MatVecOperator::from_map(op, Fidelity::High);
    let dense = if n > 0 && n <= dense_cap {
        Some(high.to_dense(dense_cap)?)
    } else {
        None
    };
    let (mu, l) = match &dense {
        Some(a) => {
            let (lo, hi) = a.extreme_eigenvalues();
            (Some(lo), Some(hi))
        }
        None => (None, None),
    };
    Ok(LcpInstance {
        b,
        a_low: high.with_fidelity(Fidelity::Low),
        a_high: high,
        lowfi_scheme: None,
        lowfi_params: BTreeMap::new(),
        dense_a_low: dense.clone(),
        dense_a: dense,
        lipschitz: l,
        mu,
        cost_ratio: DEFAULT_COST_RATIO,
        seed: 0,
        generator: None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub lattice: LatticeParams,
    pub model: MobilityModel,
    pub dt: f64,
    /// Standard deviation of each `U_nc` component in units of `δ_t/Δt`.
    pub velocity_scale: f64,
    pub lowfi: Option<LowFiScheme>,
    pub cost_ratio: f64,
    pub dense_cap: usize,
    /// Fresh configurations tried before giving up on positive definiteness.
    pub max_attempts: usize,
}

impl GeneratorParams {
    pub fn with_defaults(m: usize) -> Self {
        Self {
            lattice: LatticeParams::with_defaults(m),
            model: MobilityModel::drag(),
            dt: 1.0,
            velocity_scale: 1.0,
            lowfi: None,
            cost_ratio: DEFAULT_COST_RATIO,
            dense_cap: DEFAULT_DENSE_CAP,
            max_attempts: 20,
        }
    }
}

fn acceptable(inst: &LcpInstance, mobility_pd: bool) -> bool {
    if !mobility_pd {
        return false;
    }
    match (&inst.dense_a, inst.mu, inst.lipschitz) {
        (Some(_), Some(mu), Some(l)) => mu > 0.0 && mu > MIN_INVERSE_CONDITION * l,
        _ => true,
    }
}

/// Deterministic instance from `seed`.
///
/// Configurations whose `A` (or coupled mobility) fails the dense
/// positive-definiteness check are discarded and redrawn.
pub fn generate_instance(params: &GeneratorParams, seed: u64) -> Result<LcpInstance> {
    if !(params.cost_ratio >= 1.0) {
        return Err(Error::InvalidArgument(format!("cost ratio must be >= 1, got {}", params.cost_ratio)));
    }
    if !(params.velocity_scale >= 0.0 && params.velocity_scale.is_finite()) {
        return Err(Error::InvalidArgument("velocity scale must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = params.velocity_scale * params.lattice.delta_t / params.dt;
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for attempt in 1..=params.max_attempts.max(1) {
        let lat = initialize_configuration(&params.lattice, &mut rng)?;
        let geometry = ContactGeometry {
            config: lat.config.clone(),
            delta_t: params.lattice.delta_t,
            model: params.model,
        };
        let u_nc: Vec<f64> = (0..6 * lat.config.len()).map(|_| normal.sample(&mut rng)).collect();
        let mut inst = assemble_lcp(&geometry, &u_nc, params.dt, params.dense_cap)?;
        let mobility_pd = match params.model {
            MobilityModel::RpyLike { .. } if 3 * lat.config.len() <= params.dense_cap => {
                Mobility::new(&params.model, &lat.config)?.is_positive_definite()
            }
            _ => true,
        };
        if !acceptable(&inst, mobility_pd) {
            continue;
        }
        inst.cost_ratio = params.cost_ratio;
        inst.seed = seed;
        inst.generator = Some(GeneratorRecord {
            m: params.lattice.m,
            dx: params.lattice.dx,
            eps_x: params.lattice.eps_x,
            gamma: lat.gamma,
            seed,
            model: params.model,
            delta_t: params.lattice.delta_t,
            dt: params.dt,
            contacts: lat.contacts,
            in_window: lat.in_window,
            attempts: attempt,
            centers: lat.config.centers.clone(),
            radii: lat.config.radii.clone(),
        });
        if let Some(scheme) = params.lowfi {
            inst = inst.with_low_fidelity(scheme, &mut rng)?;
        }
        return Ok(inst);
    }
    Err(Error::NotPositiveDefinite(format!(
        "no acceptable configuration in {} attempts",
        params.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::infnorm_distance;

    fn two_spheres(sep: f64) -> ContactGeometry {
        ContactGeometry {
            config: ParticleConfig::new(vec![[0.0; 3], [sep, 0.0, 0.0]], vec![1.0, 1.0]).unwrap(),
            delta_t: 0.5,
            model: MobilityModel::drag(),
        }
    }

    #[test]
    fn single_contact_with_unit_drag() {
        let g = two_spheres(2.2);
        let inst = assemble_lcp(&g, &[0.0; 12], 0.5, 100).unwrap();
        assert_eq!(inst.n(), 1);
        let a = inst.dense_a.as_ref().unwrap();
        assert!((a.get(0, 0) - 2.0).abs() < 1e-14);
        // b = Φ/Δt with no background flow
        assert!((inst.b[0] - 0.2 / 0.5).abs() < 1e-14);
    }

    #[test]
    fn background_velocity_enters_b() {
        let g = two_spheres(2.2);
        let mut u = [0.0; 12];
        u[0] = 1.0; // sphere 0 moving toward sphere 1
        let inst = assemble_lcp(&g, &u, 1.0, 100).unwrap();
        assert!((inst.b[0] - (0.2 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn no_contacts_gives_empty_instance() {
        let g = two_spheres(5.0);
        let inst = assemble_lcp(&g, &[0.0; 12], 1.0, 100).unwrap();
        assert_eq!(inst.n(), 0);
        assert!(inst.dense_a.is_none());
    }

    #[test]
    fn matrix_free_matches_dense_assembly() {
        for (seed, model) in [(1, MobilityModel::drag()), (2, MobilityModel::rpy())] {
            let p = GeneratorParams {
                model,
                ..GeneratorParams::with_defaults(4)
            };
            let inst = generate_instance(&p, seed).unwrap();
            let geom = inst.geometry().unwrap().unwrap();
            let dense = geom.operator().unwrap().dense_assembly().unwrap();
            let a = inst.dense_a.as_ref().unwrap();
            assert!(infnorm_distance(a, &dense).unwrap() < 1e-10);
            assert!(a.asymmetry() <= 1e-10);
            assert!(inst.mu.unwrap() > 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GeneratorParams {
            lowfi: Some(LowFiScheme::Perturb { delta: 0.01 }),
            ..GeneratorParams::with_defaults(3)
        };
        let a = generate_instance(&p, 7).unwrap();
        let b = generate_instance(&p, 7).unwrap();
        assert_eq!(a.b, b.b);
        assert_eq!(a.dense_a, b.dense_a);
        assert_eq!(a.dense_a_low, b.dense_a_low);
        assert_eq!(a.generator, b.generator);
        let c = generate_instance(&p, 8).unwrap();
        assert_ne!(a.b, c.b);
    }

    #[test]
    fn some_instances_have_negative_b() {
        let p = GeneratorParams::with_defaults(3);
        let negatives = (0..10)
            .filter(|&s| generate_instance(&p, s).unwrap().b.iter().any(|v| *v < 0.0))
            .count();
        assert!(negatives >= 5, "{negatives}");
    }

    #[test]
    fn sparsify_infinite_and_drag_are_identity() {
        let p = GeneratorParams {
            model: MobilityModel::rpy(),
            lowfi: Some(LowFiScheme::Sparsify { cutoff: f64::INFINITY }),
            ..GeneratorParams::with_defaults(3)
        };
        let inst = generate_instance(&p, 3).unwrap();
        assert_eq!(inst.dense_a, inst.dense_a_low);

        let p = GeneratorParams {
            model: MobilityModel::rpy(),
            lowfi: Some(LowFiScheme::Sparsify { cutoff: 0.0 }),
            ..GeneratorParams::with_defaults(3)
        };
        let inst = generate_instance(&p, 3).unwrap();
        let drag = ContactGeometry {
            model: MobilityModel::drag(),
            ..inst.geometry().unwrap().unwrap()
        };
        let want = drag.operator().unwrap().dense_assembly().unwrap();
        assert!(infnorm_distance(inst.dense_a_low.as_ref().unwrap(), &want).unwrap() < 1e-12);
    }
}

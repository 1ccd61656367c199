//! Fixtures shared by the criterion benches.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lcp_pqn::instances::{generate_instance, GeneratorParams, LcpInstance, MobilityModel};
use lcp_pqn::DenseMatrix;

/// Contact instances on an `m³` lattice, alternating drag and RPY mobility.
pub fn contact_suite(m: usize, count: usize, seed: u64, lowfi: &str) -> Vec<LcpInstance> {
    (0..count)
        .map(|k| {
            let params = GeneratorParams {
                model: if k % 2 == 0 { MobilityModel::drag() } else { MobilityModel::rpy() },
                lowfi: Some(lowfi.parse().expect("valid low-fidelity scheme")),
                ..GeneratorParams::with_defaults(m)
            };
            generate_instance(&params, seed + k as u64).expect("generation succeeds")
        })
        .filter(|inst| inst.n() > 0)
        .collect()
}

/// `GGᵀ/n + shift·I` with uniform entries and a right-hand side with a mix of
/// active and inactive constraints.
pub fn random_spd_instance(n: usize, shift: f64, seed: u64) -> LcpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * shift;
    let b = (0..n).map(|_| rng.random_range(-1.0..0.5)).collect();
    LcpInstance::from_dense(DenseMatrix::new(a), b).expect("square matrix")
}

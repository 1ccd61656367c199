use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lcp_pqn::fundamental::{fundamental_quantity, CofaOptions};
use lcp_pqn::instances::{generate_instance, read_instance, write_instance, GeneratorParams, LowFiScheme, MobilityModel};
use lcp_pqn::operators::infnorm_distance;
use lcp_pqn::oracle::solve_lcp_dense;
use lcp_pqn::solvers::{bi_pqn, mono_pqn};
use lcp_pqn::SolveOptions;

fn params(m: usize, model: MobilityModel, lowfi: &str) -> GeneratorParams {
    GeneratorParams {
        model,
        lowfi: Some(lowfi.parse().unwrap()),
        ..GeneratorParams::with_defaults(m)
    }
}

fn inf_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn generated_instances_solve_to_the_oracle() {
    for (seed, model) in [(1, MobilityModel::drag()), (2, MobilityModel::rpy())] {
        let inst = generate_instance(&params(3, model, "perturb-c:0.05"), seed).unwrap();
        assert!(inst.n() > 0);
        let dense = inst.dense_a.as_ref().unwrap();
        assert!(dense.is_positive_definite());
        let x_star = solve_lcp_dense(dense.matrix(), &inst.b).unwrap();
        let x0 = vec![0.0; inst.n()];
        let opts = SolveOptions::default();
        let mono = mono_pqn(&inst.counted_high(), &inst.b, &x0, &opts).unwrap();
        let bi = bi_pqn(&inst.counted_high(), &inst.counted_low(), &inst.b, &x0, &opts).unwrap();
        for r in [mono, bi] {
            assert!(r.converged(), "{:?}", r.termination);
            assert!(inf_dist(&r.x_final, &x_star) <= 1e-6);
        }
    }
}

#[test]
fn relative_perturbation_stays_in_the_neighborhood() {
    let inst = generate_instance(&params(3, MobilityModel::rpy(), "perturb-c:0.5"), 11).unwrap();
    let a = inst.dense_a.as_ref().unwrap();
    let a_low = inst.dense_a_low.as_ref().unwrap();
    let c = fundamental_quantity(a, &CofaOptions::default()).unwrap().c_est;
    assert!(infnorm_distance(a, a_low).unwrap() <= 0.5 * c + 1e-12);
}

#[test]
fn file_round_trip_preserves_solutions() {
    for scheme in ["perturb:0.01", "precision32", "sparsify:1.5"] {
        let inst = generate_instance(&params(3, MobilityModel::rpy(), scheme), 5).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let back = read_instance(buf.as_slice()).unwrap();
        assert_eq!(back.b, inst.b);
        assert_eq!(back.lowfi_scheme, inst.lowfi_scheme);
        let x0 = vec![0.0; inst.n()];
        let opts = SolveOptions::default();
        let r1 = bi_pqn(&inst.counted_high(), &inst.counted_low(), &inst.b, &x0, &opts).unwrap();
        let r2 = bi_pqn(&back.counted_high(), &back.counted_low(), &back.b, &x0, &opts).unwrap();
        assert_eq!(r1.x_final, r2.x_final, "{scheme}");
        assert_eq!(r1.hi_mvps, r2.hi_mvps);
    }
}

#[test]
fn attaching_a_low_fidelity_model_later_matches_generation() {
    let base = generate_instance(
        &GeneratorParams {
            lowfi: None,
            ..GeneratorParams::with_defaults(3)
        },
        9,
    )
    .unwrap();
    let scheme: LowFiScheme = "perturb:0.02".parse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = base.with_low_fidelity(scheme, &mut rng).unwrap();
    assert_eq!(inst.lowfi_scheme, Some(scheme));
    let d = infnorm_distance(inst.dense_a.as_ref().unwrap(), inst.dense_a_low.as_ref().unwrap()).unwrap();
    assert!(d <= 0.02 + 1e-12);
}

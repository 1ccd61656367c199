use nalgebra::DMatrix;
use proptest::prelude::*;

use lcp_pqn::instances::LcpInstance;
use lcp_pqn::oracle::solve_lcp_dense;
use lcp_pqn::solvers::{a_pgd, bb_pgd, bi_pqn, min_map_newton, mono_pqn, pgd_fixed, zero_sr1};
use lcp_pqn::{CountedOperator, DenseMatrix, Fidelity, MatVecOperator, SolveOptions, SolverReport, Termination};

fn counted(a: &DMatrix<f64>, fidelity: Fidelity) -> CountedOperator {
    CountedOperator::new(MatVecOperator::from_map(DenseMatrix::new(a.clone()), fidelity))
}

fn spd(n: usize, entries: &[f64], shift: f64) -> DMatrix<f64> {
    let g = DMatrix::from_iterator(n, n, entries.iter().copied());
    &g * g.transpose() + DMatrix::identity(n, n) * shift
}

fn inf_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn problem() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (1usize..=12)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(-1.0f64..1.0, n * n),
                0.1f64..2.0,
                prop::collection::vec(-3.0f64..3.0, n),
            )
        })
        .prop_map(|(n, g, shift, b)| (spd(n, &g, shift), b))
}

fn run_all(a: &DMatrix<f64>, b: &[f64], opts: &SolveOptions) -> Vec<(&'static str, SolverReport)> {
    let n = b.len();
    let x0 = vec![0.0; n];
    let eig = a.clone().symmetric_eigen().eigenvalues;
    let (mu, l) = (eig.min(), eig.max());
    let mut hat = a.clone();
    hat[(0, 0)] *= 1.01;
    let mut out = vec![
        ("mono_pqn", mono_pqn(&counted(a, Fidelity::High), b, &x0, opts)),
        (
            "bi_pqn",
            bi_pqn(&counted(a, Fidelity::High), &counted(&hat, Fidelity::Low), b, &x0, opts),
        ),
        ("bb_pgd", bb_pgd(&counted(a, Fidelity::High), b, &x0, opts)),
        ("pgd", pgd_fixed(&counted(a, Fidelity::High), b, &x0, 1.0 / l, opts)),
        ("a_pgd", a_pgd(&counted(a, Fidelity::High), b, &x0, l, mu, opts)),
        ("zero_sr1", zero_sr1(&counted(a, Fidelity::High), b, &x0, opts)),
        ("min_map", min_map_newton(&counted(a, Fidelity::High), b, &x0, opts)),
    ]
    .into_iter()
    .map(|(name, r)| (name, r.unwrap()))
    .collect::<Vec<_>>();
    out.sort_by_key(|(name, _)| *name);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn absolute_kkt_convergence_matches_lemke((a, b) in problem()) {
        let x_star = solve_lcp_dense(&a, &b).unwrap();
        let opts = SolveOptions { k_max: 2000, ..SolveOptions::default() };
        for (name, r) in run_all(&a, &b, &opts) {
            prop_assert!(r.x_final.iter().all(|&v| v >= 0.0), "{name} left the orthant");
            if r.termination == Termination::KktAbs {
                let d = inf_dist(&r.x_final, &x_star);
                prop_assert!(d <= 1e-6, "{name}: |x - x*| = {d:e}");
            }
        }
    }

    #[test]
    fn pqn_converges_on_small_problems((a, b) in problem()) {
        let x_star = solve_lcp_dense(&a, &b).unwrap();
        let r = mono_pqn(&counted(&a, Fidelity::High), &b, &vec![0.0; b.len()], &SolveOptions::default()).unwrap();
        prop_assert!(r.converged(), "{:?}", r.termination);
        prop_assert!(inf_dist(&r.x_final, &x_star) <= 1e-6);
    }

    #[test]
    fn mvp_counts_are_counter_deltas((a, b) in problem()) {
        let opts = SolveOptions { refresh_period: 0, ..SolveOptions::default() };
        let hi = counted(&a, Fidelity::High);
        let r = mono_pqn(&hi, &b, &vec![0.0; b.len()], &opts).unwrap();
        prop_assert_eq!(r.hi_mvps, hi.count());
        prop_assert_eq!(r.hi_mvps, r.iterations + 1);
        prop_assert_eq!(r.lo_mvps, 0);
    }
}

#[test]
fn identical_fidelity_needs_one_high_mvp() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let b = [-1.0, 1.0];
    let r = bi_pqn(
        &counted(&a, Fidelity::High),
        &counted(&a, Fidelity::Low),
        &b,
        &[0.0, 0.0],
        &SolveOptions::default(),
    )
    .unwrap();
    assert!(r.converged());
    assert_eq!(r.hi_mvps, 1);
    assert!(inf_dist(&r.x_final, &[0.5, 0.0]) <= 1e-8);
}

#[test]
fn instance_helpers_drive_the_solvers() {
    let a = DenseMatrix::from_diagonal(&[1.0, 10.0]);
    let inst = LcpInstance::from_dense(a, vec![-1.0, -10.0]).unwrap();
    let r = mono_pqn(&inst.counted_high(), &inst.b, &[0.0, 0.0], &SolveOptions::default()).unwrap();
    assert!(r.converged());
    assert!(inf_dist(&r.x_final, &[1.0, 1.0]) <= 1e-8);
    let (mu, l) = (inst.mu.unwrap(), inst.lipschitz.unwrap());
    assert!((mu - 1.0).abs() < 1e-12 && (l - 10.0).abs() < 1e-12);
}

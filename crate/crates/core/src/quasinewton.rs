//! Unrolled BFGS Hessian models and the secant cache shared between
//! bifidelity subproblems.
//!
//! A model is stored as `B = B₀ + Σ uᵢuᵢᵀ - Σ vᵢvᵢᵀ` with
//! `uᵢ = yᵢ/√(yᵢᵀsᵢ)` and `vᵢ = Bsᵢ/√(sᵢᵀBsᵢ)` (full memory). `B₀` is either a
//! scaled identity or a counted operator.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm2};
use crate::operators::{check_dim, CountedOperator};
use crate::prox::ProxMetric;

/// Pairs with `yᵀs <= CURVATURE_SKIP · ‖s‖‖y‖` are not applied.
pub const CURVATURE_SKIP: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub enum BaseModel<'a> {
    /// `B₀ = τ⁻¹ I`; the payload is `τ⁻¹`.
    ScaledIdentity(f64),
    Operator(&'a CountedOperator),
}

#[derive(Clone, Debug, PartialEq)]
pub enum UpdateOutcome {
    Accepted { u: Vec<f64>, v: Vec<f64> },
    Skipped,
}

impl UpdateOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, UpdateOutcome::Accepted { .. })
    }
}

#[derive(Clone, Debug)]
pub struct BfgsAccumulator<'a> {
    n: usize,
    base: BaseModel<'a>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    raw: Vec<(Vec<f64>, Vec<f64>)>,
    skipped: usize,
}

impl<'a> BfgsAccumulator<'a> {
    pub fn scaled_identity(n: usize, inv_tau: f64) -> Result<Self> {
        if !(inv_tau > 0.0 && inv_tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "identity scaling must be positive, got {inv_tau}"
            )));
        }
        Ok(Self::with_base(n, BaseModel::ScaledIdentity(inv_tau)))
    }

    pub fn from_operator(op: &'a CountedOperator) -> Self {
        Self::with_base(op.dim(), BaseModel::Operator(op))
    }

    fn with_base(n: usize, base: BaseModel<'a>) -> Self {
        Self {
            n,
            base,
            u: Vec::new(),
            v: Vec::new(),
            raw: Vec::new(),
            skipped: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn base(&self) -> BaseModel<'a> {
        self.base
    }

    /// Number of accepted pairs.
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.u.iter().zip(&self.v).map(|(u, v)| (u.as_slice(), v.as_slice()))
    }

    pub fn raw_secants(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.raw
    }

    /// Drops all pairs, keeping the base.
    pub fn clear(&mut self) {
        self.u.clear();
        self.v.clear();
        self.raw.clear();
    }

    /// Adds `Σ uᵢ(uᵢᵀx) - Σ vᵢ(vᵢᵀx)` to `out`.
    pub fn add_low_rank(&self, x: &[f64], out: &mut [f64]) {
        for (u, v) in self.u.iter().zip(&self.v) {
            axpy(dot(u, x), u, out);
            axpy(-dot(v, x), v, out);
        }
    }

    /// `B x`; one base application (counted when the base is an operator).
    pub fn apply_b(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        let mut out = match self.base {
            BaseModel::ScaledIdentity(s) => x.iter().map(|v| s * v).collect(),
            BaseModel::Operator(op) => op.apply(x)?,
        };
        self.add_low_rank(x, &mut out);
        Ok(out)
    }

    /// `H g` with `H = B⁻¹`, by the inverse BFGS two-loop recursion.
    pub fn apply_h(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, g.len())?;
        let BaseModel::ScaledIdentity(inv_tau) = self.base else {
            return Err(Error::InverseUnavailable);
        };
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.raw.len());
        for (s, y) in self.raw.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push((a, rho));
        }
        let mut r: Vec<f64> = q.iter().map(|v| v / inv_tau).collect();
        for ((s, y), (a, rho)) in self.raw.iter().zip(alphas.into_iter().rev()) {
            let beta = rho * dot(y, &r);
            axpy(a - beta, s, &mut r);
        }
        Ok(r)
    }

    /// BFGS update from `(s, y)`; computes `Bs` with one base application.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> Result<UpdateOutcome> {
        check_dim(self.n, s.len())?;
        check_dim(self.n, y.len())?;
        if !all_finite(s) || !all_finite(y) {
            return Err(Error::NonFinite("secant pair"));
        }
        if !self.curvature_ok(s, y) {
            self.skipped += 1;
            return Ok(UpdateOutcome::Skipped);
        }
        let bs = self.apply_b(s)?;
        self.push(s, y, bs)
    }

    /// BFGS update when `Bs` is already known (e.g. harvested from cached
    /// products); no operator applications.
    pub fn update_with_product(&mut self, s: &[f64], y: &[f64], bs: &[f64]) -> Result<UpdateOutcome> {
        check_dim(self.n, s.len())?;
        check_dim(self.n, y.len())?;
        check_dim(self.n, bs.len())?;
        if !all_finite(s) || !all_finite(y) || !all_finite(bs) {
            return Err(Error::NonFinite("secant pair"));
        }
        if !self.curvature_ok(s, y) {
            self.skipped += 1;
            return Ok(UpdateOutcome::Skipped);
        }
        self.push(s, y, bs.to_vec())
    }

    fn curvature_ok(&self, s: &[f64], y: &[f64]) -> bool {
        let ys = dot(y, s);
        ys > CURVATURE_SKIP * norm2(s) * norm2(y) && ys > 0.0
    }

    fn push(&mut self, s: &[f64], y: &[f64], bs: Vec<f64>) -> Result<UpdateOutcome> {
        let sbs = dot(s, &bs);
        if !(sbs > 0.0) {
            self.skipped += 1;
            return Ok(UpdateOutcome::Skipped);
        }
        let ys = dot(y, s).sqrt();
        let sbs = sbs.sqrt();
        let u: Vec<f64> = y.iter().map(|v| v / ys).collect();
        let v: Vec<f64> = bs.iter().map(|w| w / sbs).collect();
        self.u.push(u.clone());
        self.v.push(v.clone());
        self.raw.push((s.to_vec(), y.to_vec()));
        Ok(UpdateOutcome::Accepted { u, v })
    }

    /// Diagonal-plus-low-rank form for the weighted prox; identity base only.
    pub fn prox_metric(&self) -> Result<ProxMetric> {
        let BaseModel::ScaledIdentity(inv_tau) = self.base else {
            return Err(Error::InverseUnavailable);
        };
        ProxMetric::new(vec![inv_tau; self.n], columns(self.n, &self.u), columns(self.n, &self.v))
    }
}

fn columns(n: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Subproblem steps and model-gradient differences carried between
/// bifidelity subproblems, kept consistent with the current model.
#[derive(Clone, Debug, Default)]
pub struct SecantCache {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl SecantCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        self.s.push(s);
        self.y.push(y);
    }

    pub fn extend(&mut self, pairs: impl IntoIterator<Item = (Vec<f64>, Vec<f64>)>) {
        for (s, y) in pairs {
            self.push(s, y);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.s.iter().zip(&self.y).map(|(s, y)| (s.as_slice(), y.as_slice()))
    }

    /// After `B ← B + uuᵀ - vvᵀ`, replaces each `y` by `y + u(uᵀs) - v(vᵀs)` so
    /// that `B S = Y` continues to hold.
    pub fn transform(&mut self, u: &[f64], v: &[f64]) {
        for (s, y) in self.s.iter().zip(self.y.iter_mut()) {
            axpy(dot(u, s), u, y);
            axpy(-dot(v, s), v, y);
        }
    }
}

/// `Âs = η(Âx̂ - Âx)` from two cached products; no operator applications.
pub fn harvest_low_fi_secant(ax_hat: &[f64], ax: &[f64], eta: f64) -> Vec<f64> {
    ax_hat.iter().zip(ax).map(|(a, b)| eta * (a - b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseMatrix, Fidelity, MatVecOperator};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_b(acc: &BfgsAccumulator, base: &DMatrix<f64>) -> DMatrix<f64> {
        let mut b = base.clone();
        for (u, v) in acc.pairs() {
            let u = DVector::from_column_slice(u);
            let v = DVector::from_column_slice(v);
            b += &u * u.transpose() - &v * v.transpose();
        }
        b
    }

    /// Textbook dense BFGS update of `B`.
    fn dense_bfgs(b: &DMatrix<f64>, s: &[f64], y: &[f64]) -> DMatrix<f64> {
        let s = DVector::from_column_slice(s);
        let y = DVector::from_column_slice(y);
        let bs = b * &s;
        b + &y * y.transpose() / y.dot(&s) - &bs * bs.transpose() / s.dot(&bs)
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn update_with_equal_pair_leaves_identity() {
        let mut acc = BfgsAccumulator::scaled_identity(2, 1.0).unwrap();
        let out = acc.update(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(
            out,
            UpdateOutcome::Accepted {
                u: vec![1.0, 0.0],
                v: vec![1.0, 0.0]
            }
        );
        assert_eq!(acc.apply_b(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn update_satisfies_secant() {
        let mut acc = BfgsAccumulator::scaled_identity(2, 1.0).unwrap();
        acc.update(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
        let bs = acc.apply_b(&[1.0, 0.0]).unwrap();
        assert!((bs[0] - 2.0).abs() < 1e-15 && bs[1].abs() < 1e-15);
    }

    #[test]
    fn zero_curvature_is_skipped() {
        let mut acc = BfgsAccumulator::scaled_identity(2, 1.0).unwrap();
        let out = acc.update(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(out, UpdateOutcome::Skipped);
        assert!(acc.is_empty());
        assert_eq!(acc.skipped(), 1);
    }

    #[test]
    fn non_finite_pair_is_error() {
        let mut acc = BfgsAccumulator::scaled_identity(2, 1.0).unwrap();
        assert!(acc.update(&[f64::NAN, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn apply_b_empty_identity() {
        let acc = BfgsAccumulator::scaled_identity(3, 1.0).unwrap();
        assert_eq!(acc.apply_b(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn apply_b_operator_base_counts_once() {
        let op = CountedOperator::new(MatVecOperator::from_map(
            DenseMatrix::from_diagonal(&[2.0, 3.0]),
            Fidelity::Low,
        ));
        let mut acc = BfgsAccumulator::from_operator(&op);
        assert_eq!(acc.apply_b(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(op.count(), 1);
        acc.update_with_product(&[1.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(op.count(), 1);
        let bs = acc.apply_b(&[1.0, 0.0]).unwrap();
        assert!((bs[0] - 1.0).abs() < 1e-15);
        assert_eq!(op.count(), 2);
        assert!(matches!(acc.apply_h(&[1.0, 0.0]), Err(Error::InverseUnavailable)));
        assert!(acc.prox_metric().is_err());
    }

    #[test]
    fn apply_b_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(&mut rng, 8);
        let mut acc = BfgsAccumulator::scaled_identity(8, 1.0).unwrap();
        let mut dense = DMatrix::identity(8, 8);
        for _ in 0..2 {
            let s: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = (&a * DVector::from_column_slice(&s)).as_slice().to_vec();
            dense = dense_bfgs(&dense, &s, &y);
            assert!(acc.update(&s, &y).unwrap().is_accepted());
        }
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = &dense * DVector::from_column_slice(&x);
        let got = acc.apply_b(&x).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((dense_b(&acc, &DMatrix::identity(8, 8)) - dense).amax() < 1e-12);
    }

    #[test]
    fn apply_h_examples() {
        let mut acc = BfgsAccumulator::scaled_identity(2, 1.0).unwrap();
        assert_eq!(acc.apply_h(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        acc.update(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
        let h = acc.apply_h(&[2.0, 0.0]).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-15 && h[1].abs() < 1e-15);
    }

    #[test]
    fn apply_h_inverts_apply_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = random_spd(&mut rng, 10);
            let mut acc = BfgsAccumulator::scaled_identity(10, rng.random_range(0.5..2.0)).unwrap();
            for _ in 0..3 {
                let s: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = (&a * DVector::from_column_slice(&s)).as_slice().to_vec();
                acc.update(&s, &y).unwrap();
            }
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let back = acc.apply_h(&acc.apply_b(&x).unwrap()).unwrap();
            for (b, x) in back.iter().zip(&x) {
                assert!((b - x).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn prox_metric_matches_apply_b() {
        let mut acc = BfgsAccumulator::scaled_identity(3, 2.0).unwrap();
        acc.update(&[1.0, 0.5, 0.0], &[3.0, 1.0, 0.2]).unwrap();
        let m = acc.prox_metric().unwrap();
        let x = [0.1, -0.4, 2.0];
        let a = m.apply(&x);
        let b = acc.apply_b(&x).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn transform_trivial_cases() {
        let mut cache = SecantCache::new();
        cache.transform(&[1.0, 2.0], &[0.0, 1.0]);
        assert!(cache.is_empty());
        cache.push(vec![1.0, 2.0], vec![3.0, 4.0]);
        cache.transform(&[0.0, 0.0], &[0.0, 0.0]);
        let (_, y) = cache.iter().next().unwrap();
        assert_eq!(y, &[3.0, 4.0]);
    }

    #[test]
    fn transform_keeps_secant_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 6;
        let b0 = random_spd(&mut rng, n);
        let mut cache = SecantCache::new();
        for _ in 0..2 {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = (&b0 * DVector::from_column_slice(&s)).as_slice().to_vec();
            cache.push(s, y);
        }
        let a = random_spd(&mut rng, n);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (&a * DVector::from_column_slice(&s)).as_slice().to_vec();
        let b1 = dense_bfgs(&b0, &s, &y);
        let sv = DVector::from_column_slice(&s);
        let yv = DVector::from_column_slice(&y);
        let bs = &b0 * &sv;
        let u = (&yv / yv.dot(&sv).sqrt()).as_slice().to_vec();
        let v = (&bs / sv.dot(&bs).sqrt()).as_slice().to_vec();
        cache.transform(&u, &v);
        for (s, y) in cache.iter() {
            let lhs = &b1 * DVector::from_column_slice(s);
            let y = DVector::from_column_slice(y);
            assert!((lhs - &y).amax() <= 1e-8 * y.amax().max(1.0));
        }
    }

    #[test]
    fn harvest_examples() {
        assert_eq!(harvest_low_fi_secant(&[1.0, 2.0], &[3.0, 4.0], 0.0), vec![0.0, 0.0]);
        assert_eq!(harvest_low_fi_secant(&[1.0, 2.0], &[1.0, 2.0], 1.0), vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_spd(&mut rng, 5);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xh: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eta = rng.random_range(0.0..2.0);
        let ax = &a * DVector::from_column_slice(&x);
        let axh = &a * DVector::from_column_slice(&xh);
        let got = harvest_low_fi_secant(axh.as_slice(), ax.as_slice(), eta);
        let diff: Vec<f64> = xh.iter().zip(&x).map(|(a, b)| eta * (a - b)).collect();
        let want = &a * DVector::from_column_slice(&diff);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn accepted_updates_keep_pd_and_latest_secant(seed in 0u64..10_000, n in 2usize..12, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, n);
            let mut acc = BfgsAccumulator::scaled_identity(n, 1.0).unwrap();
            for _ in 0..k {
                let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = (&a * DVector::from_column_slice(&s)).as_slice().to_vec();
                if acc.update(&s, &y).unwrap().is_accepted() {
                    let bs = acc.apply_b(&s).unwrap();
                    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    for (b, y) in bs.iter().zip(&y) {
                        prop_assert!((b - y).abs() <= 1e-9 * ymax);
                    }
                }
            }
            let dense = dense_b(&acc, &DMatrix::identity(n, n));
            let min_ev = dense.symmetric_eigenvalues().min();
            prop_assert!(min_ev > 0.0);
        }
    }
}

//! Matrix-free operator handles with exact MVP accounting.
//!
//! Every solver reaches `A` (and a low-fidelity `Â`) only through a
//! [`CountedOperator`]. The counter lives in the wrapper, not in the map, so
//! oracles and assertions can apply the underlying [`MatVecOperator`] without
//! disturbing the reported counts.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Default cap on the dimension for which a dense realization is formed.
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// A linear map `x ↦ A x` on `R^dim`.
pub trait LinearMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `A x` into `out`. Both slices have length `dim()`.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    High,
    Low,
}

/// Immutable, cheaply clonable handle to a symmetric positive-definite map.
#[derive(Clone, Debug)]
pub struct MatVecOperator {
    map: Arc<dyn LinearMap>,
    fidelity: Fidelity,
}

impl MatVecOperator {
    pub fn new(map: Arc<dyn LinearMap>, fidelity: Fidelity) -> Self {
        Self { map, fidelity }
    }

    pub fn from_map<M: LinearMap + 'static>(map: M, fidelity: Fidelity) -> Self {
        Self::new(Arc::new(map), fidelity)
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn fidelity(&self) -> Fidelity {
        self.fidelity
    }

    pub fn map(&self) -> &Arc<dyn LinearMap> {
        &self.map
    }

    pub fn with_fidelity(&self, fidelity: Fidelity) -> Self {
        Self {
            map: Arc::clone(&self.map),
            fidelity,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.map.apply_into(x, &mut out);
        Ok(out)
    }

    /// Materializes the operator column by column (`dim` applications).
    pub fn to_dense(&self, cap: usize) -> Result<DenseMatrix> {
        let n = self.dim();
        if n > cap {
            return Err(Error::DenseUnavailable(format!(
                "dimension {n} exceeds dense cap {cap}"
            )));
        }
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.map.apply_into(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(DenseMatrix::new(m))
    }
}

/// Operator wrapper that counts applications.
///
/// The counter is atomic so a shared reference may be applied from several
/// threads; the solvers themselves are single-threaded.
#[derive(Debug)]
pub struct CountedOperator {
    inner: MatVecOperator,
    count: AtomicUsize,
}

impl CountedOperator {
    pub fn new(inner: MatVecOperator) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn fidelity(&self) -> Fidelity {
        self.inner.fidelity()
    }

    pub fn inner(&self) -> &MatVecOperator {
        &self.inner
    }

    /// Applies the operator and increments the counter by exactly one.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.inner.apply(x)?;
        self.count.fetch_add(1, Ordering::SeqCst);
        Ok(out)
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::SeqCst);
    }
}

/// Dense square matrix. Used for oracles, serialization and `c(A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn new(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "dense operator must be square");
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            check_dim(n, r.len())?;
        }
        Ok(Self(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// Largest absolute asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let sym = (&self.0 + self.0.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// `(λ_min, λ_max)` of the symmetric part.
    pub fn extreme_eigenvalues(&self) -> (f64, f64) {
        let ev = self.symmetric_eigenvalues();
        match (ev.first(), ev.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => (0.0, 0.0),
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.dim() == 0 || self.extreme_eigenvalues().0 > 0.0
    }
}

impl LinearMap for DenseMatrix {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.0.nrows();
        out.iter_mut().for_each(|o| *o = 0.0);
        // column-major storage: accumulate column by column
        for j in 0..n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.0.column(j).iter()) {
                *o += a * xj;
            }
        }
    }
}

/// `diag(d)`.
#[derive(Clone, Debug)]
pub struct Diagonal(pub Vec<f64>);

impl LinearMap for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, d), xi) in out.iter_mut().zip(&self.0).zip(x) {
            *o = d * xi;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl LinearMap for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

/// `max_i Σ_j |a_ij - b_ij|`.
pub fn infnorm_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let n = a.dim();
    let mut worst = 0.0f64;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| (a.get(i, j) - b.get(i, j)).abs()).sum();
        worst = worst.max(row);
    }
    Ok(worst)
}

/// Applies `(D + UUᵀ)⁻¹` through the Woodbury identity
/// `C⁻¹ = D⁻¹ - D⁻¹U (I + UᵀD⁻¹U)⁻¹ UᵀD⁻¹`.
///
/// The `r × r` core is factored once at construction.
#[derive(Clone, Debug)]
pub struct WoodburyInverse {
    d_inv: DVector<f64>,
    d_inv_u: DMatrix<f64>,
    core: Option<Cholesky<f64, Dyn>>,
}

impl WoodburyInverse {
    pub fn new(d: &[f64], u: &DMatrix<f64>) -> Result<Self> {
        if u.ncols() > 0 {
            check_dim(d.len(), u.nrows())?;
        }
        for (index, &value) in d.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveDiagonal { index, value });
            }
        }
        let d_inv = DVector::from_iterator(d.len(), d.iter().map(|v| 1.0 / v));
        let r = u.ncols();
        let mut d_inv_u = u.clone();
        for mut col in d_inv_u.column_iter_mut() {
            col.component_mul_assign(&d_inv);
        }
        let core = if r == 0 {
            None
        } else {
            let k = DMatrix::identity(r, r) + u.transpose() * &d_inv_u;
            Some(
                Cholesky::new(k)
                    .ok_or_else(|| Error::Singular("Woodbury core I + UᵀD⁻¹U".into()))?,
            )
        };
        Ok(Self {
            d_inv,
            d_inv_u,
            core,
        })
    }

    pub fn dim(&self) -> usize {
        self.d_inv.len()
    }

    /// `D⁻¹U`, the product the prox reuses.
    pub fn d_inv_u(&self) -> &DMatrix<f64> {
        &self.d_inv_u
    }

    pub fn d_inv(&self) -> &DVector<f64> {
        &self.d_inv
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut y = rhs.component_mul(&self.d_inv);
        if let Some(core) = &self.core {
            // UᵀD⁻¹ rhs = (D⁻¹U)ᵀ rhs
            let t = self.d_inv_u.tr_mul(rhs);
            let w = core.solve(&t);
            y -= &self.d_inv_u * w;
        }
        y
    }

    /// Column-wise `C⁻¹ M`.
    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = m.clone();
        for mut col in y.column_iter_mut() {
            col.component_mul_assign(&self.d_inv);
        }
        if let Some(core) = &self.core {
            let t = self.d_inv_u.tr_mul(m);
            let w = core.solve(&t);
            y -= &self.d_inv_u * w;
        }
        y
    }
}

/// Solves `(D + UUᵀ) y = rhs` for diagonal `D > 0` and `U` of size `n × r`.
pub fn woodbury_apply_inverse(d: &[f64], u: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    check_dim(d.len(), rhs.len())?;
    let w = WoodburyInverse::new(d, u)?;
    Ok(w.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

//! Weighted proximal operator onto the nonnegative orthant.
//!
//! For a metric `B = D + UUᵀ - VVᵀ` with `D > 0` diagonal, the projection
//!
//! ```text
//! prox_B(x̃) = argmin_{x >= 0} ½ ‖x̃ - x‖²_B
//! ```
//!
//! has the closed form `(x̃ + C⁻¹Vα̃ - D⁻¹Uα)₊` with `C = D + UUᵀ`, where the
//! stacked dual point `(α, α̃)` is the root of the piecewise linear map
//!
//! ```text
//! L(α, α̃) = [ α + Uᵀ(x̃ + C⁻¹Vα̃ - w₊) ]      w = x̃ + C⁻¹Vα̃ - D⁻¹Uα
//!           [ α̃ + Vᵀ(x̃ - w₊)          ]
//! ```
//!
//! The root is found with a damped semi-smooth Newton iteration on the
//! `(r_U + r_V)`-dimensional dual; no operator applications are involved.
//! `U` and `V` may have different column counts (a zero-memory SR1 metric has
//! only one of them).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{check_dim, WoodburyInverse};

/// Diagonal-plus-low-rank metric `B = diag(d) + UUᵀ - VVᵀ`.
#[derive(Clone, Debug)]
pub struct ProxMetric {
    pub d: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl ProxMetric {
    pub fn new(d: Vec<f64>, u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let n = d.len();
        if u.ncols() > 0 {
            check_dim(n, u.nrows())?;
        }
        if v.ncols() > 0 {
            check_dim(n, v.nrows())?;
        }
        Ok(Self {
            d,
            u: if u.ncols() == 0 { DMatrix::zeros(n, 0) } else { u },
            v: if v.ncols() == 0 { DMatrix::zeros(n, 0) } else { v },
        })
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        let n = d.len();
        Self {
            d,
            u: DMatrix::zeros(n, 0),
            v: DMatrix::zeros(n, 0),
        }
    }

    /// `B = τ⁻¹ I` on `R^n`.
    pub fn scaled_identity(n: usize, inv_tau: f64) -> Self {
        Self::diagonal(vec![inv_tau; n])
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn rank_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn rank_v(&self) -> usize {
        self.v.ncols()
    }

    /// `B x`, `O(n r)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let mut out = xv.component_mul(&DVector::from_column_slice(&self.d));
        if self.rank_u() > 0 {
            out += &self.u * self.u.tr_mul(&xv);
        }
        if self.rank_v() > 0 {
            out -= &self.v * self.v.tr_mul(&xv);
        }
        out.as_slice().to_vec()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.d)) + &self.u * self.u.transpose()
            - &self.v * self.v.transpose()
    }
}

/// Stacked dual variables `(α, α̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPoint {
    pub alpha: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
}

impl DualPoint {
    pub fn zeros(rank_u: usize, rank_v: usize) -> Self {
        Self {
            alpha: vec![0.0; rank_u],
            alpha_tilde: vec![0.0; rank_v],
        }
    }

    fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.alpha.len() + self.alpha_tilde.len(),
            self.alpha.iter().chain(&self.alpha_tilde).copied(),
        )
    }

    fn from_stacked(z: &DVector<f64>, rank_u: usize) -> Self {
        Self {
            alpha: z.as_slice()[..rank_u].to_vec(),
            alpha_tilde: z.as_slice()[rank_u..].to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProxSolution {
    pub x_hat: Vec<f64>,
    pub dual: DualPoint,
    pub iterations: usize,
}

/// Default dual tolerance `1e-12 · max(1, ‖x̃‖∞)`.
pub fn default_tolerance(x_tilde: &[f64]) -> f64 {
    1e-12 * x_tilde.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

pub const DEFAULT_MAX_ITER: usize = 100;

/// Elementwise `max(x, 0)`.
pub fn project_nonneg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Precomputed pieces of the dual problem for one `(metric, x̃)` pair.
struct DualProblem<'a> {
    metric: &'a ProxMetric,
    x_tilde: DVector<f64>,
    d_inv_u: DMatrix<f64>,
    c_inv_v: DMatrix<f64>,
}

struct Evaluation {
    residual: DVector<f64>,
    active: Vec<bool>,
    /// Componentwise magnitude bound of the terms summed into the residual.
    magnitude: f64,
}

impl<'a> DualProblem<'a> {
    fn new(metric: &'a ProxMetric, x_tilde: &[f64]) -> Result<Self> {
        check_dim(metric.dim(), x_tilde.len())?;
        let woodbury = WoodburyInverse::new(&metric.d, &metric.u)?;
        let c_inv_v = woodbury.solve_matrix(&metric.v);
        Ok(Self {
            metric,
            x_tilde: DVector::from_column_slice(x_tilde),
            d_inv_u: woodbury.d_inv_u().clone(),
            c_inv_v,
        })
    }

    fn ru(&self) -> usize {
        self.metric.rank_u()
    }

    fn rv(&self) -> usize {
        self.metric.rank_v()
    }

    /// `B` is positive definite iff `I - VᵀC⁻¹V` is, given `C ≻ 0`.
    fn check_positive_definite(&self) -> Result<()> {
        if self.rv() == 0 {
            return Ok(());
        }
        let s = DMatrix::identity(self.rv(), self.rv()) - self.metric.v.tr_mul(&self.c_inv_v);
        let sym = (&s + s.transpose()) * 0.5;
        if nalgebra::Cholesky::new(sym).is_none() {
            return Err(Error::NotPositiveDefinite(
                "D + UUᵀ - VVᵀ is not positive definite".into(),
            ));
        }
        Ok(())
    }

    /// `y = x̃ + C⁻¹Vα̃` and `w = y - D⁻¹Uα`.
    fn shifted(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (alpha, alpha_t) = self.split(z);
        let mut y = self.x_tilde.clone();
        if self.rv() > 0 {
            y += &self.c_inv_v * alpha_t;
        }
        let mut w = y.clone();
        if self.ru() > 0 {
            w -= &self.d_inv_u * alpha;
        }
        (y, w)
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let ru = self.ru();
        (
            DVector::from_column_slice(&z.as_slice()[..ru]),
            DVector::from_column_slice(&z.as_slice()[ru..]),
        )
    }

    fn primal(&self, z: &DVector<f64>) -> Vec<f64> {
        let (_, w) = self.shifted(z);
        project_nonneg(w.as_slice())
    }

    fn evaluate(&self, z: &DVector<f64>) -> Evaluation {
        let (y, w) = self.shifted(z);
        let active: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
        let wp = w.map(|v| v.max(0.0));
        let ru = self.ru();
        let mut residual = z.clone();
        let mut magnitude = z.amax();
        if ru > 0 {
            let top = self.metric.u.tr_mul(&(&y - &wp));
            let bound = self.metric.u.abs().tr_mul(&(y.abs() + wp.abs()));
            magnitude = magnitude.max(bound.amax());
            residual.rows_mut(0, ru).add_assign(&top);
        }
        if self.rv() > 0 {
            let bottom = self.metric.v.tr_mul(&(&self.x_tilde - &wp));
            let bound = self.metric.v.abs().tr_mul(&(self.x_tilde.abs() + wp.abs()));
            magnitude = magnitude.max(bound.amax());
            residual.rows_mut(ru, self.rv()).add_assign(&bottom);
        }
        Evaluation {
            residual,
            active,
            magnitude,
        }
    }

    fn jacobian(&self, active: &[bool]) -> DMatrix<f64> {
        let ru = self.ru();
        let rv = self.rv();
        let m = ru + rv;
        let mut jac = DMatrix::identity(m, m);
        // Λ D⁻¹U and Λ C⁻¹V: zero the inactive rows
        let mask = |mat: &DMatrix<f64>, keep_active: bool| {
            let mut out = mat.clone();
            for (i, &a) in active.iter().enumerate() {
                if a != keep_active {
                    out.row_mut(i).fill(0.0);
                }
            }
            out
        };
        if ru > 0 {
            let lam_dinv_u = mask(&self.d_inv_u, true);
            jac.view_mut((0, 0), (ru, ru))
                .add_assign(&self.metric.u.tr_mul(&lam_dinv_u));
            if rv > 0 {
                jac.view_mut((ru, 0), (rv, ru))
                    .add_assign(&self.metric.v.tr_mul(&lam_dinv_u));
            }
        }
        if rv > 0 {
            if ru > 0 {
                let inactive_c_inv_v = mask(&self.c_inv_v, false);
                jac.view_mut((0, ru), (ru, rv))
                    .add_assign(&self.metric.u.tr_mul(&inactive_c_inv_v));
            }
            let lam_c_inv_v = mask(&self.c_inv_v, true);
            jac.view_mut((ru, ru), (rv, rv))
                .sub_assign(&self.metric.v.tr_mul(&lam_c_inv_v));
        }
        jac
    }
}

use std::ops::{AddAssign, SubAssign};

/// Evaluates the stacked dual residual `L(α, α̃)`.
pub fn residual_l(metric: &ProxMetric, x_tilde: &[f64], point: &DualPoint) -> Result<Vec<f64>> {
    let problem = DualProblem::new(metric, x_tilde)?;
    check_dim(metric.rank_u(), point.alpha.len())?;
    check_dim(metric.rank_v(), point.alpha_tilde.len())?;
    Ok(problem.evaluate(&point.stacked()).residual.as_slice().to_vec())
}

/// Generalized Jacobian of [`residual_l`]; `Λ_ii = 1` iff `w_i > 0`.
pub fn jacobian_l(metric: &ProxMetric, x_tilde: &[f64], point: &DualPoint) -> Result<DMatrix<f64>> {
    let problem = DualProblem::new(metric, x_tilde)?;
    check_dim(metric.rank_u(), point.alpha.len())?;
    check_dim(metric.rank_v(), point.alpha_tilde.len())?;
    let eval = problem.evaluate(&point.stacked());
    Ok(problem.jacobian(&eval.active))
}

/// Computes `argmin_{x >= 0} ½‖x̃ - x‖²_B` by semi-smooth Newton on the dual.
///
/// Converges when `‖L‖∞ <= tol`, or when the residual reaches the floating
/// point floor of its own terms.
pub fn weighted_prox(
    metric: &ProxMetric,
    x_tilde: &[f64],
    tol: f64,
    j_max: usize,
) -> Result<ProxSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("prox tolerance must be positive, got {tol}")));
    }
    if !x_tilde.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("prox input"));
    }
    let ru = metric.rank_u();
    let rv = metric.rank_v();
    let problem = DualProblem::new(metric, x_tilde)?;
    if ru + rv == 0 {
        return Ok(ProxSolution {
            x_hat: project_nonneg(x_tilde),
            dual: DualPoint::zeros(0, 0),
            iterations: 0,
        });
    }
    problem.check_positive_definite()?;

    let converged = |e: &Evaluation| {
        let r = e.residual.amax();
        r <= tol || r <= 64.0 * f64::EPSILON * e.magnitude
    };

    let mut z = DVector::zeros(ru + rv);
    let mut eval = problem.evaluate(&z);
    let mut failures = 0usize;
    for iter in 0..j_max {
        if converged(&eval) {
            return Ok(ProxSolution {
                x_hat: problem.primal(&z),
                dual: DualPoint::from_stacked(&z, ru),
                iterations: iter,
            });
        }
        let jac = problem.jacobian(&eval.active);
        let current = eval.residual.amax();
        let mut accepted = None;
        for regularize in [false, true] {
            let mut system = jac.clone();
            if regularize {
                let lambda = 1e-10 * system.abs().column_sum().amax().max(1.0);
                for i in 0..system.nrows() {
                    system[(i, i)] += lambda;
                }
            }
            let Some(step) = system.lu().solve(&(-&eval.residual)) else {
                continue;
            };
            if !step.iter().all(|v| v.is_finite()) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..=5 {
                let trial = &z + &step * t;
                let trial_eval = problem.evaluate(&trial);
                if trial_eval.residual.amax() < current || converged(&trial_eval) {
                    accepted = Some((trial, trial_eval));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((trial, trial_eval)) => {
                z = trial;
                eval = trial_eval;
                failures = 0;
            }
            None => {
                failures += 1;
                if failures >= 3 {
                    return Err(Error::NotPositiveDefinite(format!(
                        "semi-smooth Newton cannot decrease the dual residual ({current:e})"
                    )));
                }
                // nudge off a kink and retry
                z.iter_mut()
                    .for_each(|v| *v += 1e-12 * (1.0 + v.abs()));
                eval = problem.evaluate(&z);
            }
        }
    }
    if converged(&eval) {
        return Ok(ProxSolution {
            x_hat: problem.primal(&z),
            dual: DualPoint::from_stacked(&z, ru),
            iterations: j_max,
        });
    }
    Err(Error::ProxNotConverged {
        iterations: j_max,
        residual: eval.residual.amax(),
        best_x: problem.primal(&z),
    })
}

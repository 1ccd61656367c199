//! Step lengths for quadratic objectives: the exact over-relaxation
//! parameter, the Barzilai–Borwein step, and the cached-gradient advance.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::operators::check_dim;

/// Default number of cached advances between fresh gradient evaluations.
pub const DEFAULT_REFRESH_PERIOD: usize = 20;

/// Constant of the sufficient-decrease check on accepted steps.
pub const SUFFICIENT_DECREASE_ALPHA: f64 = 0.25;

/// Exact minimizer of `f(x + ηp)` over feasible `η >= 0`.
///
/// `ax_b = Ax + b` and `ap = Ap` are cached products. The unconstrained
/// minimizer `η' = -pᵀ(Ax+b)/pᵀAp` is capped by the first coordinate of
/// `x + ηp` to reach zero; coordinates with `p_ℓ >= 0` impose no bound.
pub fn optimal_eta(x: &[f64], p: &[f64], ax_b: &[f64], ap: &[f64]) -> Result<f64> {
    let n = x.len();
    check_dim(n, p.len())?;
    check_dim(n, ax_b.len())?;
    check_dim(n, ap.len())?;
    let curvature = dot(p, ap);
    if !(curvature > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "pᵀAp = {curvature:e} along the search direction"
        )));
    }
    let slope = dot(p, ax_b);
    if !(slope < 0.0) {
        return Err(Error::NotDescent(slope));
    }
    let mut eta = -slope / curvature;
    for (&xl, &pl) in x.iter().zip(p) {
        if pl < 0.0 {
            let bound = -xl.max(0.0) / pl;
            if bound < eta {
                eta = bound;
            }
        }
    }
    if eta <= 0.0 {
        return Err(Error::StalledStep);
    }
    Ok(eta)
}

/// Spectral step `‖s‖² / sᵀAs`; `None` when the denominator is not positive.
pub fn bb_step(s: &[f64], a_s: &[f64]) -> Option<f64> {
    let denom = dot(s, a_s);
    let tau = dot(s, s) / denom;
    (denom > 0.0 && tau.is_finite() && tau > 0.0).then_some(tau)
}

/// `f(x_new) <= f(x_old) + α η λ` with `λ = ∇f(x_old)ᵀp`.
pub fn sufficient_decrease(f_old: f64, f_new: f64, eta: f64, slope: f64, alpha: f64) -> bool {
    let slack = 1e-12 * f_old.abs().max(1.0);
    f_new <= f_old + alpha * eta * slope + slack
}

/// Cached `Ax + b`, advanced along accepted steps without operator
/// applications and recomputed every `refresh_period` advances.
#[derive(Clone, Debug)]
pub struct StepContext {
    pub ax_b: Vec<f64>,
    pub refresh_period: usize,
    advances: usize,
    refreshes: usize,
}

impl StepContext {
    /// `refresh_period = 0` disables periodic recomputation.
    pub fn new(ax_b: Vec<f64>, refresh_period: usize) -> Self {
        Self {
            ax_b,
            refresh_period,
            advances: 0,
            refreshes: 0,
        }
    }

    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    /// `Ax + b ← Ax + b + η Ap`. When a refresh is due, `fresh` is called to
    /// produce `Ax + b` at the new iterate instead. Returns whether it was.
    pub fn advance<F>(&mut self, eta: f64, ap: &[f64], fresh: F) -> Result<bool>
    where
        F: FnOnce() -> Result<Vec<f64>>,
    {
        check_dim(self.ax_b.len(), ap.len())?;
        self.advances += 1;
        if self.refresh_period > 0 && self.advances % self.refresh_period == 0 {
            let v = fresh()?;
            check_dim(self.ax_b.len(), v.len())?;
            self.ax_b = v;
            self.refreshes += 1;
            return Ok(true);
        }
        axpy(eta, ap, &mut self.ax_b);
        Ok(false)
    }
}

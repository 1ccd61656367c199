//! Solvers for `0 <= Ax + b ⊥ x >= 0` with symmetric positive-definite `A`.
//!
//! Every solver shares one contract: the KKT error is evaluated from a cached
//! gradient after every iteration, the run stops when the absolute or the
//! relative KKT error drops below `eps_kkt` (or at `k_max`), and the reported
//! MVP counts are the exact deltas of the operators' counters.

mod baselines;
mod pqn;

pub use baselines::{a_pgd, bb_pgd, min_map_newton, pgd_fixed, zero_sr1};
pub use pqn::{bi_pqn, mono_pqn};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm2, norm_inf, objective_from_gradient};
use crate::operators::{check_dim, CountedOperator};
use crate::quasinewton::BfgsAccumulator;
use crate::stepsize::DEFAULT_REFRESH_PERIOD;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KktNorm {
    #[default]
    Euclidean,
    Infinity,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub k_max: usize,
    pub eps_kkt: f64,
    /// Forward step; the quasi-Newton seed metric is `τ⁻¹ I`.
    pub tau: f64,
    pub subproblem_eps_factor: f64,
    pub subproblem_k_max: usize,
    /// Cached-gradient advances between fresh evaluations; 0 disables.
    pub refresh_period: usize,
    pub warm_start: Option<Vec<f64>>,
    pub kkt_norm: KktNorm,
    /// Low-fidelity MVPs per high-fidelity MVP, for the E-MVP figure.
    pub cost_ratio: f64,
    /// Build the prox center as `x + τ(x - Hg)` instead of `x - τHg`.
    pub literal_alg1: bool,
    /// Rescale the Mono-PQN seed metric by the first spectral step.
    pub bb_seed: bool,
    /// Use the exact over-relaxation step in fixed-step PGD.
    pub pgd_optimal_eta: bool,
    /// Keep every iterate in the report (for diagnostics and tests).
    pub record_iterates: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            k_max: 500,
            eps_kkt: 1e-8,
            tau: 1.0,
            subproblem_eps_factor: 1e-2,
            subproblem_k_max: 50,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            warm_start: None,
            kkt_norm: KktNorm::Euclidean,
            cost_ratio: 10.0,
            literal_alg1: false,
            bb_seed: false,
            pgd_optimal_eta: false,
            record_iterates: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_kkt > 0.0) {
            return Err(Error::InvalidArgument(format!("eps_kkt must be positive, got {}", self.eps_kkt)));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidArgument("k_max must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.cost_ratio >= 1.0) {
            return Err(Error::InvalidArgument(format!("cost_ratio must be >= 1, got {}", self.cost_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    KktAbs,
    KktRel,
    MaxIter,
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::KktAbs | Termination::KktRel)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverReport {
    pub x_final: Vec<f64>,
    pub iterations: usize,
    pub hi_mvps: usize,
    pub lo_mvps: usize,
    pub e_mvps: f64,
    pub kkt_abs_trace: Vec<f64>,
    pub kkt_rel_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub termination: Termination,
    /// Accepted step lengths η, one per iteration that moved.
    pub step_lengths: Vec<f64>,
    /// Accepted steps violating `f⁺ <= f + α η ∇fᵀp` with `α = 0.25`.
    pub sufficient_decrease_violations: usize,
    /// Fresh gradient evaluations replacing the cached one.
    pub refreshes: usize,
    pub hessian_resets: usize,
    /// Bi-PQN subproblems that stopped before their tolerance.
    pub subproblem_nonconverged: usize,
    /// Weighted prox calls that returned a best-effort point.
    pub prox_failures: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterates: Vec<Vec<f64>>,
}

impl SolverReport {
    pub fn kkt_final(&self) -> f64 {
        self.kkt_abs_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// Absolute and relative KKT errors.
///
/// `abs = ‖min(x, grad)‖`; `rel = |abs - prev| / max(abs, prev)`, infinite
/// without a previous value.
pub fn kkt_errors(x: &[f64], grad: &[f64], prev_abs: Option<f64>, norm: KktNorm) -> (f64, f64) {
    let m: Vec<f64> = x.iter().zip(grad).map(|(a, b)| a.min(*b)).collect();
    let abs = match norm {
        KktNorm::Euclidean => norm2(&m),
        KktNorm::Infinity => norm_inf(&m),
    };
    let rel = match prev_abs {
        None => f64::INFINITY,
        Some(prev) => {
            let denom = abs.max(prev);
            if denom > 0.0 {
                (abs - prev).abs() / denom
            } else {
                0.0
            }
        }
    };
    (abs, rel)
}

/// Matrix-free quadratic Hessians the PQN core can run on.
pub(crate) trait QuadModel {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl QuadModel for CountedOperator {
    fn dim(&self) -> usize {
        CountedOperator::dim(self)
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        CountedOperator::apply(self, x)
    }
}

impl QuadModel for BfgsAccumulator<'_> {
    fn dim(&self) -> usize {
        BfgsAccumulator::dim(self)
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_b(x)
    }
}

/// Per-run trace bookkeeping and the termination test.
struct Recorder {
    eps: f64,
    norm: KktNorm,
    record_iterates: bool,
    prev_abs: Option<f64>,
    kkt_abs: Vec<f64>,
    kkt_rel: Vec<f64>,
    objective: Vec<f64>,
    iterates: Vec<Vec<f64>>,
}

impl Recorder {
    fn new(opts: &SolveOptions) -> Self {
        Self::with_eps(opts, opts.eps_kkt)
    }

    fn with_eps(opts: &SolveOptions, eps: f64) -> Self {
        Self {
            eps,
            norm: opts.kkt_norm,
            record_iterates: opts.record_iterates,
            prev_abs: None,
            kkt_abs: Vec::new(),
            kkt_rel: Vec::new(),
            objective: Vec::new(),
            iterates: Vec::new(),
        }
    }

    /// Records the state at `x` with gradient `grad`; returns a termination
    /// reason once a KKT criterion is met.
    fn record(&mut self, x: &[f64], grad: &[f64], b: &[f64]) -> Result<Option<Termination>> {
        if !all_finite(x) || !all_finite(grad) {
            return Err(Error::NonFinite("solver iterate"));
        }
        let (abs, rel) = kkt_errors(x, grad, self.prev_abs, self.norm);
        self.prev_abs = Some(abs);
        self.kkt_abs.push(abs);
        self.kkt_rel.push(rel);
        self.objective.push(objective_from_gradient(x, grad, b));
        if self.record_iterates {
            self.iterates.push(x.to_vec());
        }
        Ok(if abs <= self.eps {
            Some(Termination::KktAbs)
        } else if rel <= self.eps {
            Some(Termination::KktRel)
        } else {
            None
        })
    }

    /// Records an iteration that did not move the iterate, without testing
    /// termination.
    fn repeat_last(&mut self) {
        if let (Some(&abs), Some(&f)) = (self.kkt_abs.last(), self.objective.last()) {
            self.kkt_abs.push(abs);
            self.kkt_rel.push(0.0);
            self.objective.push(f);
            if let Some(x) = self.iterates.last().cloned() {
                self.iterates.push(x);
            }
        }
    }

    fn last_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(0.0)
    }

    fn finish(self, x: Vec<f64>, iterations: usize, termination: Termination) -> SolverReport {
        SolverReport {
            x_final: x,
            iterations,
            hi_mvps: 0,
            lo_mvps: 0,
            e_mvps: 0.0,
            kkt_abs_trace: self.kkt_abs,
            kkt_rel_trace: self.kkt_rel,
            objective_trace: self.objective,
            termination,
            step_lengths: Vec::new(),
            sufficient_decrease_violations: 0,
            refreshes: 0,
            hessian_resets: 0,
            subproblem_nonconverged: 0,
            prox_failures: 0,
            iterates: self.iterates,
        }
    }
}

/// Checks dimensions and feasibility of the starting point.
fn check_problem(n: usize, b: &[f64], x0: &[f64]) -> Result<()> {
    check_dim(n, b.len())?;
    check_dim(n, x0.len())?;
    if !all_finite(b) {
        return Err(Error::NonFinite("b"));
    }
    if let Some((i, v)) = x0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("x0[{i}] = {v} is not nonnegative")));
    }
    Ok(())
}

/// Starting point: explicit `x0`, else the warm start, else zero.
pub fn initial_point(n: usize, opts: &SolveOptions) -> Vec<f64> {
    match &opts.warm_start {
        Some(w) if w.len() == n => w.iter().map(|v| v.max(0.0)).collect(),
        _ => vec![0.0; n],
    }
}

fn add_b(mut ax: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (a, bi) in ax.iter_mut().zip(b) {
        *a += bi;
    }
    ax
}

fn clamp_nonneg(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kkt_examples() {
        let (abs, rel) = kkt_errors(&[0.0, 0.0], &[1.0, 2.0], None, KktNorm::Euclidean);
        assert_eq!(abs, 0.0);
        assert!(rel.is_infinite());
        let (abs, _) = kkt_errors(&[1.0, 0.0], &[-0.5, 2.0], None, KktNorm::Euclidean);
        assert_eq!(abs, 0.5);
        let (abs, rel) = kkt_errors(&[1e-3], &[1.0], Some(2e-3), KktNorm::Euclidean);
        assert_eq!(abs, 1e-3);
        assert_eq!(rel, 0.5);
    }

    #[test]
    fn kkt_infinity_norm() {
        let (abs, _) = kkt_errors(&[1.0, 1.0], &[-3.0, -4.0], None, KktNorm::Infinity);
        assert_eq!(abs, 4.0);
        let (abs, _) = kkt_errors(&[1.0, 1.0], &[-3.0, -4.0], None, KktNorm::Euclidean);
        assert_eq!(abs, 5.0);
    }

    #[test]
    fn options_validation() {
        assert!(SolveOptions::default().validate().is_ok());
        let bad = SolveOptions {
            eps_kkt: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolveOptions {
            k_max: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn initial_point_uses_matching_warm_start() {
        let opts = SolveOptions {
            warm_start: Some(vec![1.0, -2.0]),
            ..Default::default()
        };
        assert_eq!(initial_point(2, &opts), vec![1.0, 0.0]);
        assert_eq!(initial_point(3, &opts), vec![0.0; 3]);
    }
}

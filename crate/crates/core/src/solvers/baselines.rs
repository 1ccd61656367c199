//! Reference methods: projected gradient variants, zero-memory SR1 and
//! min-map Newton.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, sub};
use crate::operators::CountedOperator;
use crate::prox::{default_tolerance, project_nonneg, weighted_prox, ProxMetric, DEFAULT_MAX_ITER};
use crate::stepsize::{bb_step, optimal_eta, StepContext};

use super::{add_b, check_problem, clamp_nonneg, Recorder, SolveOptions, SolverReport, Termination};

/// Scale applied to the spectral step to form the zero-memory SR1 seed.
pub const ZERO_SR1_GAMMA: f64 = 0.8;

/// Objective increases (consecutive or not) tolerated by fixed-step PGD.
const DIVERGENCE_INCREASES: usize = 10;

fn finish(mut report: SolverReport, a: &CountedOperator, start: usize, opts: &SolveOptions) -> SolverReport {
    let used = a.count() - start;
    match a.fidelity() {
        crate::Fidelity::High => {
            report.hi_mvps = used;
            report.e_mvps = used as f64;
        }
        crate::Fidelity::Low => {
            report.lo_mvps = used;
            report.e_mvps = used as f64 / opts.cost_ratio;
        }
    }
    report
}

fn projected_step(x: &[f64], g: &[f64], tau: f64) -> Vec<f64> {
    x.iter().zip(g).map(|(xi, gi)| (xi - tau * gi).max(0.0)).collect()
}

/// Projected gradient with the spectral step `‖s‖²/sᵀAs`; the first step
/// uses `opts.tau`. One MVP per iteration (`As` advances the gradient).
pub fn bb_pgd(a: &CountedOperator, b: &[f64], x0: &[f64], opts: &SolveOptions) -> Result<SolverReport> {
    opts.validate()?;
    check_problem(a.dim(), b, x0)?;
    let start = a.count();
    let mut x = x0.to_vec();
    let mut ctx = StepContext::new(add_b(a.apply(&x)?, b), opts.refresh_period);
    let mut rec = Recorder::new(opts);
    let mut tau = opts.tau;
    let mut iterations = 0;
    let mut termination = rec.record(&x, &ctx.ax_b, b)?;
    while termination.is_none() {
        if iterations >= opts.k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let x_new = projected_step(&x, &ctx.ax_b, tau);
        let s = sub(&x_new, &x);
        if s.iter().all(|v| *v == 0.0) {
            termination = Some(Termination::Stalled);
            break;
        }
        let a_s = a.apply(&s)?;
        iterations += 1;
        x = x_new;
        ctx.advance(1.0, &a_s, || a.apply(&x).map(|v| add_b(v, b)))?;
        if let Some(t) = bb_step(&s, &a_s) {
            tau = t;
        }
        termination = rec.record(&x, &ctx.ax_b, b)?;
    }
    let mut report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    report.refreshes = ctx.refreshes();
    Ok(finish(report, a, start, opts))
}

/// Projected gradient with a fixed step `tau`.
///
/// For `tau < 2/λ_max` the objective decreases monotonically; ten objective
/// increases over the run are reported as divergence.
pub fn pgd_fixed(a: &CountedOperator, b: &[f64], x0: &[f64], tau: f64, opts: &SolveOptions) -> Result<SolverReport> {
    opts.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    check_problem(a.dim(), b, x0)?;
    let start = a.count();
    let mut x = x0.to_vec();
    let mut ctx = StepContext::new(add_b(a.apply(&x)?, b), opts.refresh_period);
    let mut rec = Recorder::new(opts);
    let mut iterations = 0;
    let mut increases = 0;
    let mut steps = Vec::new();
    let mut termination = rec.record(&x, &ctx.ax_b, b)?;
    while termination.is_none() {
        if iterations >= opts.k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let x_new = projected_step(&x, &ctx.ax_b, tau);
        let p = sub(&x_new, &x);
        if p.iter().all(|v| *v == 0.0) {
            termination = Some(Termination::Stalled);
            break;
        }
        let ap = a.apply(&p)?;
        iterations += 1;
        let eta = if opts.pgd_optimal_eta {
            match optimal_eta(&x, &p, &ctx.ax_b, &ap) {
                Ok(e) => e,
                Err(Error::StalledStep) => {
                    termination = Some(Termination::Stalled);
                    break;
                }
                Err(e) => return Err(e),
            }
        } else {
            1.0
        };
        let f_old = rec.last_objective();
        axpy(eta, &p, &mut x);
        clamp_nonneg(&mut x);
        ctx.advance(eta, &ap, || a.apply(&x).map(|v| add_b(v, b)))?;
        steps.push(eta);
        termination = rec.record(&x, &ctx.ax_b, b)?;
        if rec.last_objective() > f_old + 1e-12 * f_old.abs().max(1.0) {
            increases += 1;
            if increases >= DIVERGENCE_INCREASES {
                return Err(Error::Diverged(format!(
                    "objective increased on {increases} iterations with step {tau}"
                )));
            }
        }
    }
    let mut report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    report.step_lengths = steps;
    report.refreshes = ctx.refreshes();
    Ok(finish(report, a, start, opts))
}

/// Accelerated projected gradient with constant momentum
/// `(√κ - 1)/(√κ + 1)`, `κ = L/μ`, and step `1/L`. One MVP per iteration;
/// the product at the extrapolated point follows by linearity.
pub fn a_pgd(
    a: &CountedOperator,
    b: &[f64],
    x0: &[f64],
    lipschitz: f64,
    mu: f64,
    opts: &SolveOptions,
) -> Result<SolverReport> {
    opts.validate()?;
    if !(lipschitz > 0.0 && mu > 0.0 && mu <= lipschitz && lipschitz.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < mu <= L, got mu = {mu}, L = {lipschitz}"
        )));
    }
    check_problem(a.dim(), b, x0)?;
    let start = a.count();
    let kappa_sqrt = (lipschitz / mu).sqrt();
    let beta = (kappa_sqrt - 1.0) / (kappa_sqrt + 1.0);
    let mut x = x0.to_vec();
    let mut ax = a.apply(&x)?;
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut rec = Recorder::new(opts);
    let mut iterations = 0;
    let mut termination = rec.record(&x, &add_b(ax.clone(), b), b)?;
    while termination.is_none() {
        if iterations >= opts.k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let gy = add_b(ay, b);
        let x_new = projected_step(&y, &gy, 1.0 / lipschitz);
        let ax_new = a.apply(&x_new)?;
        iterations += 1;
        y = x_new.iter().zip(&x).map(|(n, o)| n + beta * (n - o)).collect();
        ay = ax_new.iter().zip(&ax).map(|(n, o)| n + beta * (n - o)).collect();
        x = x_new;
        ax = ax_new;
        termination = rec.record(&x, &add_b(ax.clone(), b), b)?;
    }
    let report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    Ok(finish(report, a, start, opts))
}

/// Zero-memory SR1 proximal method.
///
/// The metric is `B = τ₀⁻¹I + σuuᵀ` built by one SR1 update of
/// `τ₀ = γ τ_bb` with the latest secant pair, and the step is the weighted
/// prox of `x - B⁻¹g` (unit over-relaxation). When the SR1 denominator is
/// negligible or `B` would be indefinite, the iteration takes a spectral
/// projected gradient step instead. One MVP per iteration.
pub fn zero_sr1(a: &CountedOperator, b: &[f64], x0: &[f64], opts: &SolveOptions) -> Result<SolverReport> {
    opts.validate()?;
    let n = a.dim();
    check_problem(n, b, x0)?;
    let start = a.count();
    let mut x = x0.to_vec();
    let mut ctx = StepContext::new(add_b(a.apply(&x)?, b), opts.refresh_period);
    let mut rec = Recorder::new(opts);
    let mut tau_bb = opts.tau;
    let mut last: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut prox_failures = 0;
    let mut termination = rec.record(&x, &ctx.ax_b, b)?;
    while termination.is_none() {
        if iterations >= opts.k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let g = &ctx.ax_b;
        let sr1 = last.as_ref().and_then(|(s, y)| {
            let tau0 = ZERO_SR1_GAMMA * tau_bb;
            let r: Vec<f64> = y.iter().zip(s).map(|(yi, si)| yi - si / tau0).collect();
            let denom = dot(&r, s);
            if denom.abs() <= 1e-8 * norm2(&r) * norm2(s) || denom == 0.0 {
                return None;
            }
            let sigma = denom.signum();
            let u: Vec<f64> = r.iter().map(|v| v / denom.abs().sqrt()).collect();
            let uu = dot(&u, &u);
            if sigma < 0.0 && 1.0 / tau0 - uu <= 0.0 {
                return None;
            }
            Some((tau0, sigma, u, uu))
        });
        let x_new = match sr1 {
            None => projected_step(&x, g, tau_bb),
            Some((tau0, sigma, u, uu)) => {
                // Sherman–Morrison: B⁻¹ = τ₀I - στ₀²uuᵀ/(1 + στ₀‖u‖²)
                let ug = dot(&u, g);
                let coef = sigma * tau0 * tau0 * ug / (1.0 + sigma * tau0 * uu);
                let x_tilde: Vec<f64> = x
                    .iter()
                    .zip(g)
                    .zip(&u)
                    .map(|((xi, gi), ui)| xi - (tau0 * gi - coef * ui))
                    .collect();
                let col = DMatrix::from_column_slice(n, 1, &u);
                let empty = DMatrix::zeros(n, 0);
                let (um, vm) = if sigma > 0.0 { (col, empty) } else { (empty, col) };
                let metric = ProxMetric::new(vec![1.0 / tau0; n], um, vm)?;
                match weighted_prox(&metric, &x_tilde, default_tolerance(&x_tilde), DEFAULT_MAX_ITER) {
                    Ok(sol) => sol.x_hat,
                    Err(Error::ProxNotConverged { best_x, .. }) => {
                        prox_failures += 1;
                        best_x
                    }
                    Err(Error::NotPositiveDefinite(_)) => projected_step(&x, g, tau_bb),
                    Err(e) => return Err(e),
                }
            }
        };
        let s = sub(&x_new, &x);
        if s.iter().all(|v| *v == 0.0) {
            termination = Some(Termination::Stalled);
            break;
        }
        let a_s = a.apply(&s)?;
        iterations += 1;
        x = x_new;
        ctx.advance(1.0, &a_s, || a.apply(&x).map(|v| add_b(v, b)))?;
        if let Some(t) = bb_step(&s, &a_s) {
            tau_bb = t;
        }
        last = Some((s, a_s));
        termination = rec.record(&x, &ctx.ax_b, b)?;
    }
    let mut report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    report.refreshes = ctx.refreshes();
    report.prox_failures = prox_failures;
    Ok(finish(report, a, start, opts))
}

/// Semi-smooth Newton on `F(x) = min(x, Ax + b)`.
///
/// Indices with `x_i <= (Ax+b)_i` are driven to zero; the remaining block
/// solves `A_FF Δx_F = -(Ax+b)_F - A_FA Δx_A` by conjugate gradients, where
/// every CG product is a full counted MVP. The Newton point is projected
/// onto `x >= 0`; a fresh gradient is only computed when the projection
/// changed it.
pub fn min_map_newton(a: &CountedOperator, b: &[f64], x0: &[f64], opts: &SolveOptions) -> Result<SolverReport> {
    opts.validate()?;
    let n = a.dim();
    check_problem(n, b, x0)?;
    let start = a.count();
    let mut x = x0.to_vec();
    let mut g = add_b(a.apply(&x)?, b);
    let mut rec = Recorder::new(opts);
    let mut iterations = 0;
    let mut termination = rec.record(&x, &g, b)?;
    while termination.is_none() {
        if iterations >= opts.k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let free: Vec<usize> = (0..n).filter(|&i| x[i] > g[i]).collect();
        let mut dx = vec![0.0; n];
        for i in 0..n {
            if x[i] <= g[i] {
                dx[i] = -x[i];
            }
        }
        // A Δx, accumulated as the Newton step is built
        let mut a_dx = if dx.iter().any(|v| *v != 0.0) { a.apply(&dx)? } else { vec![0.0; n] };
        if !free.is_empty() {
            let rhs: Vec<f64> = free.iter().map(|&i| -g[i] - a_dx[i]).collect();
            let forcing = rec.kkt_abs.last().copied().unwrap_or(1.0).min(0.1);
            let (d_free, a_d) = cg_on_free(a, &free, &rhs, forcing, opts.eps_kkt)?;
            for (k, &i) in free.iter().enumerate() {
                dx[i] = d_free[k];
            }
            axpy(1.0, &a_d, &mut a_dx);
        }
        iterations += 1;
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + di).collect();
        if trial.iter().all(|v| *v >= 0.0) {
            x = trial;
            axpy(1.0, &a_dx, &mut g);
        } else {
            x = project_nonneg(&trial);
            g = add_b(a.apply(&x)?, b);
        }
        termination = rec.record(&x, &g, b)?;
    }
    let report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    Ok(finish(report, a, start, opts))
}

/// CG on the principal block `A_FF`. Returns the solution on `free` and the
/// full product `A [d_F; 0]`.
fn cg_on_free(
    a: &CountedOperator,
    free: &[usize],
    rhs: &[f64],
    forcing: f64,
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.dim();
    let m = free.len();
    let rhs_norm = norm2(rhs);
    let mut d = vec![0.0; m];
    let mut a_d = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((d, a_d));
    }
    let tol = (forcing * rhs_norm).min(0.1 * eps).max(f64::EPSILON * rhs_norm);
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let max_iter = 2 * m + 20;
    for _ in 0..max_iter {
        if rr.sqrt() <= tol {
            return Ok((d, a_d));
        }
        let mut ext = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            ext[i] = p[k];
        }
        let ap_full = a.apply(&ext)?;
        let ap: Vec<f64> = free.iter().map(|&i| ap_full[i]).collect();
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgStagnation {
                iterations: m,
                residual: rr.sqrt(),
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut d);
        axpy(alpha, &ap_full, &mut a_d);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p = r.iter().zip(&p).map(|(ri, pi)| ri + beta * pi).collect();
    }
    if rr.sqrt() <= tol {
        return Ok((d, a_d));
    }
    Err(Error::CgStagnation {
        iterations: max_iter,
        residual: rr.sqrt(),
    })
}

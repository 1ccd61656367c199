//! Single- and bi-fidelity proximal quasi-Newton methods.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_inf, scale, sub};
use crate::operators::{CountedOperator, Fidelity};
use crate::prox::{default_tolerance, weighted_prox, DEFAULT_MAX_ITER};
use crate::quasinewton::{harvest_low_fi_secant, BfgsAccumulator, SecantCache};
use crate::stepsize::{optimal_eta, sufficient_decrease, StepContext, SUFFICIENT_DECREASE_ALPHA};

use super::{add_b, check_problem, clamp_nonneg, QuadModel, Recorder, SolveOptions, SolverReport, Termination};

pub(crate) struct CoreOutput {
    pub report: SolverReport,
    /// Hessian applied to the final iterate (from the cached gradient).
    pub product: Vec<f64>,
    /// Accepted secant pairs generated during this run.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// The Mono-PQN iteration on any quadratic model.
///
/// `seeds` are secant pairs of `op` applied to the identity seed metric
/// before the first step; `initial_product` is `op x0` when the caller
/// already has it.
pub(crate) fn mono_core<M: QuadModel + ?Sized>(
    op: &M,
    b: &[f64],
    x0: &[f64],
    opts: &SolveOptions,
    eps: f64,
    k_max: usize,
    seeds: &[(Vec<f64>, Vec<f64>)],
    initial_product: Option<Vec<f64>>,
) -> Result<CoreOutput> {
    let n = op.dim();
    check_problem(n, b, x0)?;
    let mut x = x0.to_vec();
    let product = match initial_product {
        Some(p) => {
            crate::operators::check_dim(n, p.len())?;
            p
        }
        None => op.apply(&x)?,
    };
    let mut ctx = StepContext::new(add_b(product, b), opts.refresh_period);
    let inv_tau = 1.0 / opts.tau;
    let mut model = BfgsAccumulator::scaled_identity(n, inv_tau)?;
    for (s, y) in seeds {
        model.update(s, y)?;
    }

    let mut rec = Recorder::with_eps(opts, eps);
    let mut pairs = Vec::new();
    let mut steps = Vec::new();
    let mut sd_violations = 0;
    let mut resets = 0;
    let mut prox_failures = 0;
    let mut iterations = 0;
    let mut reset_armed = true;
    let mut termination = rec.record(&x, &ctx.ax_b, b)?;

    while termination.is_none() {
        if iterations >= k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let g = &ctx.ax_b;
        let hg = model.apply_h(g)?;
        let x_tilde: Vec<f64> = if opts.literal_alg1 {
            x.iter().zip(&hg).map(|(xi, hi)| xi + opts.tau * (xi - hi)).collect()
        } else {
            sub(&x, &hg)
        };
        let metric = model.prox_metric()?;
        let x_hat = match weighted_prox(&metric, &x_tilde, default_tolerance(&x_tilde), DEFAULT_MAX_ITER) {
            Ok(sol) => Some(sol.x_hat),
            Err(Error::ProxNotConverged { best_x, .. }) => {
                prox_failures += 1;
                Some(best_x)
            }
            Err(Error::NotPositiveDefinite(_)) => None,
            Err(e) => return Err(e),
        };
        let direction = x_hat.map(|xh| sub(&xh, &x)).and_then(|p| {
            let slope = dot(g, &p);
            (norm_inf(&p) > 0.0 && slope < 0.0).then_some((p, slope))
        });
        let Some((p, slope)) = direction else {
            if reset_armed && !model.is_empty() {
                model.clear();
                resets += 1;
                reset_armed = false;
                continue;
            }
            termination = Some(Termination::Stalled);
            break;
        };

        let ap = op.apply(&p)?;
        iterations += 1;
        let eta = match optimal_eta(&x, &p, g, &ap) {
            Ok(eta) => eta,
            Err(Error::StalledStep | Error::NotDescent(_) | Error::NotPositiveDefinite(_)) => {
                rec.repeat_last();
                if reset_armed && !model.is_empty() {
                    model.clear();
                    resets += 1;
                    reset_armed = false;
                    continue;
                }
                termination = Some(Termination::Stalled);
                break;
            }
            Err(e) => return Err(e),
        };

        let f_old = rec.last_objective();
        axpy(eta, &p, &mut x);
        clamp_nonneg(&mut x);
        ctx.advance(eta, &ap, || op.apply(&x).map(|v| add_b(v, b)))?;
        let s = scale(eta, &p);
        let y = scale(eta, &ap);
        if opts.bb_seed && steps.is_empty() && seeds.is_empty() {
            let sy = dot(&s, &y);
            if sy > 0.0 {
                model = BfgsAccumulator::scaled_identity(n, sy / dot(&s, &s))?;
            }
        }
        if model.update(&s, &y)?.is_accepted() {
            pairs.push((s, y));
        }
        steps.push(eta);
        reset_armed = true;
        termination = rec.record(&x, &ctx.ax_b, b)?;
        if !sufficient_decrease(f_old, rec.last_objective(), eta, slope, SUFFICIENT_DECREASE_ALPHA) {
            sd_violations += 1;
        }
    }

    let product = sub(&ctx.ax_b, b);
    let mut report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    report.step_lengths = steps;
    report.sufficient_decrease_violations = sd_violations;
    report.refreshes = ctx.refreshes();
    report.hessian_resets = resets;
    report.prox_failures = prox_failures;
    Ok(CoreOutput { report, product, pairs })
}

fn fill_counts(report: &mut SolverReport, hi: usize, lo: usize, cost_ratio: f64) {
    report.hi_mvps = hi;
    report.lo_mvps = lo;
    report.e_mvps = hi as f64 + lo as f64 / cost_ratio;
}

/// Monofidelity proximal quasi-Newton.
///
/// Each iteration: prox center `x - H(Ax+b)`, weighted prox under the BFGS
/// model `B = H⁻¹`, exact step along `p = x̂ - x`, cached gradient advance and
/// BFGS update with `(ηp, ηAp)`. One MVP per iteration plus one up front.
pub fn mono_pqn(a: &CountedOperator, b: &[f64], x0: &[f64], opts: &SolveOptions) -> Result<SolverReport> {
    opts.validate()?;
    let start = a.count();
    let out = mono_core(a, b, x0, opts, opts.eps_kkt, opts.k_max, &[], None)?;
    let used = a.count() - start;
    let mut report = out.report;
    match a.fidelity() {
        Fidelity::High => fill_counts(&mut report, used, 0, opts.cost_ratio),
        Fidelity::Low => fill_counts(&mut report, 0, used, opts.cost_ratio),
    }
    Ok(report)
}

/// Bifidelity proximal quasi-Newton.
///
/// The starting point comes from Mono-PQN on `(Â, b)`. Each outer iteration
/// minimizes the model `½zᵀB z + (Ax+b-Bx)ᵀz` over `z >= 0` with Mono-PQN
/// (where `B = Â + low-rank` only ever costs low-fidelity MVPs), takes the
/// exact step on the true objective with one high-fidelity MVP, and updates
/// `B` by BFGS using a harvested `Bs`.
pub fn bi_pqn(
    a: &CountedOperator,
    a_hat: &CountedOperator,
    b: &[f64],
    x_init: &[f64],
    opts: &SolveOptions,
) -> Result<SolverReport> {
    opts.validate()?;
    if a.dim() != a_hat.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: a_hat.dim(),
        });
    }
    let n = a.dim();
    check_problem(n, b, x_init)?;
    let hi_start = a.count();
    let lo_start = a_hat.count();
    let sub_eps = opts.eps_kkt * opts.subproblem_eps_factor;

    let init = mono_core(a_hat, b, x_init, opts, sub_eps, opts.k_max, &[], None)?;
    let mut nonconverged = usize::from(!init.report.converged());
    let mut prox_failures = init.report.prox_failures;
    let mut cache = SecantCache::new();
    cache.extend(init.pairs);
    let mut x = init.report.x_final;

    let mut ctx = StepContext::new(add_b(a.apply(&x)?, b), opts.refresh_period);
    let mut model = BfgsAccumulator::from_operator(a_hat);
    let mut rec = Recorder::new(opts);
    let mut steps = Vec::new();
    let mut sd_violations = 0;
    let mut resets = 0;
    let mut iterations = 0;
    let mut reset_armed = true;
    let mut termination = rec.record(&x, &ctx.ax_b, b)?;

    while termination.is_none() {
        if iterations >= opts.k_max {
            termination = Some(Termination::MaxIter);
            break;
        }
        let g = &ctx.ax_b;
        let bx = model.apply_b(&x)?;
        let c = sub(g, &bx);
        let seeds: Vec<(Vec<f64>, Vec<f64>)> = cache.iter().map(|(s, y)| (s.to_vec(), y.to_vec())).collect();
        let subproblem = mono_core(&model, &c, &x, opts, sub_eps, opts.subproblem_k_max, &seeds, Some(bx.clone()))?;
        if !subproblem.report.converged() {
            nonconverged += 1;
        }
        prox_failures += subproblem.report.prox_failures;
        let bx_hat = subproblem.product;
        let p = sub(&subproblem.report.x_final, &x);
        let slope = dot(g, &p);
        if !(norm_inf(&p) > 0.0 && slope < 0.0) {
            if reset_armed && !model.is_empty() {
                model.clear();
                cache = SecantCache::new();
                resets += 1;
                reset_armed = false;
                continue;
            }
            termination = Some(Termination::Stalled);
            break;
        }

        let ap = a.apply(&p)?;
        iterations += 1;
        let eta = match optimal_eta(&x, &p, g, &ap) {
            Ok(eta) => eta,
            Err(Error::StalledStep | Error::NotDescent(_) | Error::NotPositiveDefinite(_)) => {
                rec.repeat_last();
                if reset_armed && !model.is_empty() {
                    model.clear();
                    cache = SecantCache::new();
                    resets += 1;
                    reset_armed = false;
                    continue;
                }
                termination = Some(Termination::Stalled);
                break;
            }
            Err(e) => return Err(e),
        };

        let f_old = rec.last_objective();
        axpy(eta, &p, &mut x);
        clamp_nonneg(&mut x);
        ctx.advance(eta, &ap, || a.apply(&x).map(|v| add_b(v, b)))?;
        let s = scale(eta, &p);
        let y = scale(eta, &ap);
        let bs = harvest_low_fi_secant(&bx_hat, &bx, eta);
        cache.extend(subproblem.pairs);
        if let crate::quasinewton::UpdateOutcome::Accepted { u, v } = model.update_with_product(&s, &y, &bs)? {
            cache.transform(&u, &v);
        }
        steps.push(eta);
        reset_armed = true;
        termination = rec.record(&x, &ctx.ax_b, b)?;
        if !sufficient_decrease(f_old, rec.last_objective(), eta, slope, SUFFICIENT_DECREASE_ALPHA) {
            sd_violations += 1;
        }
    }

    let mut report = rec.finish(x, iterations, termination.unwrap_or(Termination::MaxIter));
    report.step_lengths = steps;
    report.sufficient_decrease_violations = sd_violations;
    report.refreshes = ctx.refreshes();
    report.hessian_resets = resets;
    report.subproblem_nonconverged = nonconverged;
    report.prox_failures = prox_failures;
    fill_counts(&mut report, a.count() - hi_start, a_hat.count() - lo_start, opts.cost_ratio);
    Ok(report)
}

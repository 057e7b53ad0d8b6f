//! Primal-dual interior-point method with inertia correction and a filter
//! line search.
//!
//! Inequalities `h(x) <= 0` receive slacks `z > 0` with complementarity
//! `z ∘ μ = γ`. Simple variable bounds are condensed into the primal
//! diagonal; general inequalities stay in the augmented system
//!
//! ```txt
//!   [ W + Σ + δw I    Jgᵀ      Jhᵀ   ] [dx ]   [ -∇L - Σ-rhs ]
//!   [ Jg             -δc I     0     ] [dλ ] = [ -g         ]
//!   [ Jh              0     -Z/M     ] [dμ ]   [ -h - γ/μ   ]
//! ```
//!
//! which is factorized by the sparse LDLᵀ in [`crate::ldl`]. The inertia
//! must be `(n, m_eq + m_ineq, 0)`; otherwise `δw` is increased.

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::ldl::SymbolicLdl;
use crate::problem::{Dims, NlpProblem};
use crate::NlpError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IpmOptions {
    /// Tolerance on the scaled Lagrangian gradient.
    pub kkt_tol: f64,
    /// Absolute tolerance on constraint violation.
    pub feasibility_tol: f64,
    /// Tolerance on the scaled complementarity gap.
    pub complementarity_tol: f64,
    /// Tolerance on the relative objective change between iterations.
    pub cost_tol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Centering parameter for the barrier update.
    pub sigma: f64,
    /// Initial slack value.
    pub z0: f64,
    pub max_backtracks: usize,
    /// Run a minimum-violation phase after failure to certify infeasibility.
    pub detect_infeasibility: bool,
    /// Total ℓ1 violation above which the minimum-violation phase reports
    /// the problem infeasible.
    pub infeasibility_threshold: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            feasibility_tol: 1e-6,
            complementarity_tol: 1e-6,
            cost_tol: 1e-6,
            max_iter: 200,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
            max_backtracks: 8,
            detect_infeasibility: true,
            infeasibility_threshold: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NlpStatus {
    Optimal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: NlpStatus,
    pub iterations: usize,
    /// max(scaled gradient condition, scaled complementarity).
    pub kkt_residual: f64,
    /// Maximum absolute constraint or bound violation.
    pub max_violation: f64,
    /// Multipliers of `g`.
    pub eq_multipliers: Vec<f64>,
    /// Multipliers of `h`.
    pub ineq_multipliers: Vec<f64>,
}

/// One bound row `sign * x[var] + offset <= 0`.
#[derive(Debug, Clone, Copy)]
struct BoundRow {
    var: usize,
    sign: f64,
    offset: f64,
}

struct Layout {
    dims: Dims,
    bound_rows: Vec<BoundRow>,
    /// Variables fixed by `lower == upper`, enforced as extra equalities.
    fixed: Vec<(usize, f64)>,
    jac: Vec<(usize, usize)>,
    hess: Vec<(usize, usize)>,
}

impl Layout {
    fn m_eq(&self) -> usize {
        self.dims.eq + self.fixed.len()
    }
}

struct Iterate {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    hb: Vec<f64>,
}

fn eval(p: &dyn NlpProblem, lay: &Layout, x: Vec<f64>) -> Iterate {
    let d = lay.dims;
    let f = p.objective(&x);
    let mut g = vec![0.0; d.eq + lay.fixed.len()];
    let mut h = vec![0.0; d.ineq];
    p.constraints(&x, &mut g[..d.eq], &mut h);
    for (k, &(v, val)) in lay.fixed.iter().enumerate() {
        g[d.eq + k] = x[v] - val;
    }
    let hb = lay.bound_rows.iter().map(|b| b.sign * x[b.var] + b.offset).collect();
    Iterate { x, f, g, h, hb }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_violation(it: &Iterate) -> f64 {
    let g = inf_norm(&it.g);
    let h = it.h.iter().chain(&it.hb).fold(0.0f64, |m, &v| m.max(v));
    g.max(h)
}

fn has_nan(it: &Iterate) -> bool {
    !it.f.is_finite() || it.g.iter().chain(&it.h).any(|v| !v.is_finite())
}

/// Largest step in `(0, 1]` keeping `v + a dv` strictly positive.
fn step_to_boundary(v: &[f64], dv: &[f64], xi: f64) -> f64 {
    let mut a: f64 = 1.0;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            a = a.min(-xi * vi / di);
        }
    }
    a
}

/// Solve `problem` from `start` with the primal-dual interior-point method.
pub fn solve_nlp(
    problem: &dyn NlpProblem,
    start: &[f64],
    options: &IpmOptions,
) -> Result<NlpSolution, NlpError> {
    let dims = problem.dims();
    if start.len() != dims.vars {
        return Err(NlpError::DimensionMismatch {
            expected: dims.vars,
            found: start.len(),
        });
    }
    let mut lower = vec![f64::NEG_INFINITY; dims.vars];
    let mut upper = vec![f64::INFINITY; dims.vars];
    problem.bounds(&mut lower, &mut upper);

    let mut bound_rows = Vec::new();
    let mut fixed = Vec::new();
    for i in 0..dims.vars {
        let (lo, up) = (lower[i], upper[i]);
        if lo > up {
            return Err(NlpError::Infeasible {
                violation: lo - up,
                iterations: 0,
            });
        }
        if lo == up {
            fixed.push((i, lo));
            continue;
        }
        if lo.is_finite() {
            bound_rows.push(BoundRow { var: i, sign: -1.0, offset: lo });
        }
        if up.is_finite() {
            bound_rows.push(BoundRow { var: i, sign: 1.0, offset: -up });
        }
    }

    let layout = Layout {
        dims,
        bound_rows,
        fixed,
        jac: problem.jacobian_structure(),
        hess: problem.hessian_structure(),
    };
    let x0: Vec<f64> = start
        .iter()
        .zip(lower.iter().zip(&upper))
        .map(|(&x, (&lo, &up))| x.clamp(lo, up))
        .collect();

    match run(problem, &layout, x0.clone(), options) {
        Ok(mut sol) => {
            for &(i, v) in &layout.fixed {
                sol.x[i] = v;
            }
            Ok(sol)
        }
        Err(failure) if options.detect_infeasibility => Err(classify_failure(problem, &lower, &upper, &x0, failure, options)),
        Err(failure) => Err(failure.error),
    }
}

struct Failure {
    error: NlpError,
    last_x: Vec<f64>,
}

fn classify_failure(
    problem: &dyn NlpProblem,
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    failure: Failure,
    options: &IpmOptions,
) -> NlpError {
    let elastic = crate::elastic::ElasticProblem::new(problem, lower, upper);
    let opts = IpmOptions {
        detect_infeasibility: false,
        cost_tol: 1e-9,
        ..options.clone()
    };
    // The last iterate of a diverged run can be far out; the original start
    // is tried first.
    let mut outcome = solve_nlp(&elastic, &elastic.start_from(x0), &opts);
    if outcome.is_err() {
        outcome = solve_nlp(&elastic, &elastic.start_from(&failure.last_x), &opts);
    }
    match outcome {
        Ok(sol) if sol.objective > options.infeasibility_threshold => {
            debug!("minimum-violation phase certifies infeasibility: {:.3e}", sol.objective);
            NlpError::Infeasible {
                violation: sol.objective,
                iterations: failure.error.iterations() + sol.iterations,
            }
        }
        Ok(sol) => {
            debug!("minimum-violation phase found a feasible point ({:.3e})", sol.objective);
            failure.error
        }
        Err(e) => {
            debug!("minimum-violation phase failed: {e}");
            failure.error
        }
    }
}

fn run(
    problem: &dyn NlpProblem,
    lay: &Layout,
    x0: Vec<f64>,
    opt: &IpmOptions,
) -> Result<NlpSolution, Failure> {
    let n = lay.dims.vars;
    let m_eq = lay.m_eq();
    let m_ie = lay.dims.ineq;
    let nb = lay.bound_rows.len();
    let kdim = n + m_eq + m_ie;

    // KKT pattern: Hessian, equality Jacobian, inequality Jacobian, fixed rows.
    let mut kkt_pattern: Vec<(usize, usize)> = Vec::with_capacity(lay.hess.len() + lay.jac.len() + lay.fixed.len());
    kkt_pattern.extend(lay.hess.iter().copied());
    for &(r, c) in &lay.jac {
        kkt_pattern.push(if r < lay.dims.eq { (n + r, c) } else { (n + lay.fixed.len() + r, c) });
    }
    for (k, &(v, _)) in lay.fixed.iter().enumerate() {
        kkt_pattern.push((n + lay.dims.eq + k, v));
    }
    let symbolic = SymbolicLdl::analyse(kdim, &kkt_pattern);
    trace!("kkt dim {kdim}, nnz(L) {}", symbolic.factor_nnz());

    let mut it = eval(problem, lay, x0);
    if has_nan(&it) {
        return Err(Failure {
            error: NlpError::NumericalFailure("non-finite values at the starting point".into()),
            last_x: it.x,
        });
    }

    let mut z: Vec<f64> = it.h.iter().map(|&h| if h < -opt.z0 { -h } else { opt.z0 }).collect();
    let mut zb: Vec<f64> = it.hb.iter().map(|&h| if h < -opt.z0 { -h } else { opt.z0 }).collect();
    let mut gamma = 1.0;
    let mut mu: Vec<f64> = z.iter().map(|&z| gamma / z).collect();
    let mut mub: Vec<f64> = zb.iter().map(|&z| gamma / z).collect();
    let mut lam = vec![0.0; m_eq];

    let mut grad = vec![0.0; n];
    let mut jac_vals = vec![0.0; lay.jac.len()];
    let mut hess_vals = vec![0.0; lay.hess.len()];
    let mut kkt_vals = vec![0.0; kkt_pattern.len()];
    let mut multipliers = vec![0.0; lay.dims.eq + m_ie];
    let mut delta_w_last: f64 = 0.0;
    let mut f_prev = it.f;
    let mut tiny_steps = 0;
    let mut theta_max = f64::INFINITY;

    for iter in 0..=opt.max_iter {
        problem.gradient(&it.x, &mut grad);
        problem.jacobian_values(&it.x, &mut jac_vals);

        // ∇L
        let mut lx = grad.clone();
        for (&(r, c), &v) in lay.jac.iter().zip(&jac_vals) {
            lx[c] += v * if r < lay.dims.eq { lam[r] } else { mu[r - lay.dims.eq] };
        }
        for (k, &(v, _)) in lay.fixed.iter().enumerate() {
            lx[v] += lam[lay.dims.eq + k];
        }
        for (b, &m) in lay.bound_rows.iter().zip(&mub) {
            lx[b.var] += b.sign * m;
        }

        let viol = max_violation(&it);
        let xnorm = inf_norm(&it.x);
        let mult_norm = inf_norm(&lam).max(inf_norm(&mu)).max(inf_norm(&mub));
        let gradcond = inf_norm(&lx) / (1.0 + mult_norm);
        let compcond = (dot(&z, &mu) + dot(&zb, &mub)) / (1.0 + xnorm);
        let costcond = (it.f - f_prev).abs() / (1.0 + f_prev.abs());
        trace!(
            "it {iter:3} f {:.8e} viol {viol:.2e} grad {gradcond:.2e} comp {compcond:.2e} γ {gamma:.2e} δw {delta_w_last:.1e}",
            it.f
        );

        if viol <= opt.feasibility_tol
            && gradcond <= opt.kkt_tol
            && compcond <= opt.complementarity_tol
            && (iter > 0 && costcond <= opt.cost_tol || gradcond <= opt.kkt_tol * 1e-2)
        {
            return Ok(NlpSolution {
                objective: it.f,
                status: NlpStatus::Optimal,
                iterations: iter,
                kkt_residual: gradcond.max(compcond),
                max_violation: viol,
                eq_multipliers: lam[..lay.dims.eq].to_vec(),
                ineq_multipliers: mu,
                x: it.x,
            });
        }
        if iter == opt.max_iter {
            break;
        }
        if mult_norm > 1e12 {
            debug!("multipliers diverged at iteration {iter}");
            return Err(Failure {
                error: NlpError::NumericalFailure("multipliers diverged".into()),
                last_x: it.x,
            });
        }

        // Assemble KKT values in pattern order.
        multipliers[..lay.dims.eq].copy_from_slice(&lam[..lay.dims.eq]);
        multipliers[lay.dims.eq..].copy_from_slice(&mu);
        problem.hessian_values(&it.x, 1.0, &multipliers, &mut hess_vals);
        let nh = hess_vals.len();
        kkt_vals[..nh].copy_from_slice(&hess_vals);
        kkt_vals[nh..nh + jac_vals.len()].copy_from_slice(&jac_vals);
        for v in &mut kkt_vals[nh + jac_vals.len()..] {
            *v = 1.0;
        }

        let mut base_diag = vec![0.0; kdim];
        let mut rhs = vec![0.0; kdim];
        for i in 0..n {
            rhs[i] = -lx[i];
        }
        for (b, (&hb, (&zb_, &mb))) in lay.bound_rows.iter().zip(it.hb.iter().zip(zb.iter().zip(&mub))) {
            base_diag[b.var] += mb / zb_;
            rhs[b.var] -= b.sign * (mb * hb + gamma) / zb_;
        }
        for r in 0..m_eq {
            rhs[n + r] = -it.g[r];
        }
        for r in 0..m_ie {
            base_diag[n + m_eq + r] = -z[r] / mu[r];
            rhs[n + m_eq + r] = -it.h[r] - gamma / mu[r];
        }

        let delta_c = 1e-10;
        let mut delta_w: f64 = 0.0;
        let mut attempt = 0;
        let factor = loop {
            let mut diag = base_diag.clone();
            for d in diag.iter_mut().take(n) {
                *d += delta_w;
            }
            for d in diag.iter_mut().skip(n).take(m_eq) {
                *d -= delta_c;
            }
            if let Some(f) = symbolic.factor(&kkt_vals, &diag, 1e-300) {
                if f.inertia.positive == n && f.inertia.negative == m_eq + m_ie {
                    break (f, diag);
                }
            }
            attempt += 1;
            if attempt > 60 {
                return Err(Failure {
                    error: NlpError::NumericalFailure("inertia correction failed".into()),
                    last_x: it.x,
                });
            }
            delta_w = if delta_w == 0.0 {
                if delta_w_last == 0.0 {
                    1e-4
                } else {
                    (delta_w_last / 3.0).max(1e-20)
                }
            } else if delta_w_last == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
        };
        delta_w_last = delta_w;
        let (factor, diag) = factor;

        let mut sol = rhs.clone();
        symbolic.solve(&factor, &mut sol);
        // Iterative refinement against the matrix without dual regularization.
        for _ in 0..2 {
            let mut resid = rhs.clone();
            kkt_matvec(&kkt_pattern, &kkt_vals, &diag, delta_c, n, m_eq, &sol, &mut resid);
            let rn = inf_norm(&resid);
            if rn < 1e-14 * (1.0 + inf_norm(&rhs)) {
                break;
            }
            symbolic.solve(&factor, &mut resid);
            for (s, r) in sol.iter_mut().zip(&resid) {
                *s += r;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Failure {
                error: NlpError::NumericalFailure("non-finite Newton step".into()),
                last_x: it.x,
            });
        }

        let dx = &sol[..n];
        let dlam = &sol[n..n + m_eq];
        let dmu: Vec<f64> = sol[n + m_eq..].to_vec();

        // Jh dx for general inequalities.
        let mut jh_dx = vec![0.0; m_ie];
        for (&(r, c), &v) in lay.jac.iter().zip(&jac_vals) {
            if r >= lay.dims.eq {
                jh_dx[r - lay.dims.eq] += v * dx[c];
            }
        }
        let dz: Vec<f64> = (0..m_ie).map(|r| -it.h[r] - z[r] - jh_dx[r]).collect();
        let dzb: Vec<f64> = lay
            .bound_rows
            .iter()
            .enumerate()
            .map(|(k, b)| -it.hb[k] - zb[k] - b.sign * dx[b.var])
            .collect();
        let dmub: Vec<f64> = (0..nb).map(|k| -mub[k] + (gamma - mub[k] * dzb[k]) / zb[k]).collect();

        let alpha_p = step_to_boundary(&z, &dz, opt.xi).min(step_to_boundary(&zb, &dzb, opt.xi));
        let alpha_d = step_to_boundary(&mu, &dmu, opt.xi).min(step_to_boundary(&mub, &dmub, opt.xi));

        // Filter line search on (θ, φ); the filter is reset at every barrier update,
        // so it reduces to sufficient decrease with respect to the current iterate.
        let theta = |it: &Iterate, z: &[f64], zb: &[f64]| -> f64 {
            it.g.iter().map(|v| v.abs()).sum::<f64>()
                + it.h.iter().zip(z).map(|(h, z)| (h + z).abs()).sum::<f64>()
                + it.hb.iter().zip(zb).map(|(h, z)| (h + z).abs()).sum::<f64>()
        };
        let phi = |it: &Iterate, z: &[f64], zb: &[f64]| -> f64 {
            it.f - gamma * (z.iter().chain(zb).map(|v| v.ln()).sum::<f64>())
        };
        let theta0 = theta(&it, &z, &zb);
        let phi0 = phi(&it, &z, &zb);
        if iter == 0 {
            theta_max = 1e4 * theta0.max(1.0);
        }

        let mut alpha = alpha_p;
        let mut accepted: Option<(Iterate, Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..=opt.max_backtracks {
            let xt: Vec<f64> = it.x.iter().zip(dx).map(|(x, d)| x + alpha * d).collect();
            let zt: Vec<f64> = z.iter().zip(&dz).map(|(z, d)| z + alpha * d).collect();
            let zbt: Vec<f64> = zb.iter().zip(&dzb).map(|(z, d)| z + alpha * d).collect();
            let trial = eval(problem, lay, xt);
            if !has_nan(&trial) {
                let th = theta(&trial, &zt, &zbt);
                let ph = phi(&trial, &zt, &zbt);
                let decrease = th <= (1.0 - 1e-5) * theta0 || ph <= phi0 - 1e-5 * theta0;
                let in_filter = th <= theta_max;
                if decrease && in_filter {
                    accepted = Some((trial, zt, zbt, alpha));
                    break;
                }
                if accepted.is_none() && alpha == alpha_p {
                    // keep the full step as the fallback
                    accepted = Some((trial, zt, zbt, -alpha));
                }
            }
            alpha *= 0.5;
        }
        let (trial, zt, zbt, a) = match accepted {
            Some((t, zt, zbt, a)) => (t, zt, zbt, a.abs()),
            None => {
                return Err(Failure {
                    error: NlpError::NumericalFailure("no finite trial point".into()),
                    last_x: it.x,
                });
            }
        };
        let ad = alpha_d;
        if a < 1e-10 {
            tiny_steps += 1;
            if tiny_steps > 5 {
                return Err(Failure {
                    error: NlpError::NumericalFailure("step size collapsed".into()),
                    last_x: it.x,
                });
            }
        } else {
            tiny_steps = 0;
        }

        f_prev = it.f;
        it = trial;
        z = zt;
        zb = zbt;
        for (l, d) in lam.iter_mut().zip(dlam) {
            *l += ad * d;
        }
        for (m, d) in mu.iter_mut().zip(&dmu) {
            *m += ad * d;
        }
        for (m, d) in mub.iter_mut().zip(&dmub) {
            *m += ad * d;
        }
        let count = (m_ie + nb) as f64;
        gamma = if count > 0.0 {
            opt.sigma * (dot(&z, &mu) + dot(&zb, &mub)) / count
        } else {
            0.0
        };
    }

    let violation = max_violation(&it);
    Err(Failure {
        error: NlpError::IterationLimit {
            iterations: opt.max_iter,
            violation,
        },
        last_x: it.x,
    })
}

/// `resid -= K x` where K is the assembled KKT matrix (symmetric, given by
/// its lower triangle plus the diagonal), excluding the dual regularization.
#[allow(clippy::too_many_arguments)]
fn kkt_matvec(
    pattern: &[(usize, usize)],
    vals: &[f64],
    diag: &[f64],
    delta_c: f64,
    n: usize,
    m_eq: usize,
    x: &[f64],
    resid: &mut [f64],
) {
    for (&(r, c), &v) in pattern.iter().zip(vals) {
        resid[r] -= v * x[c];
        if r != c {
            resid[c] -= v * x[r];
        }
    }
    for (i, &d) in diag.iter().enumerate() {
        let d = if i >= n && i < n + m_eq { d + delta_c } else { d };
        resid[i] -= d * x[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Sink;

    /// min (x-2)² + (y-1)²  s.t. x + y = 1
    struct EqQuadratic;

    impl NlpProblem for EqQuadratic {
        fn dims(&self) -> Dims {
            Dims { vars: 2, eq: 1, ineq: 0 }
        }
        fn bounds(&self, _: &mut [f64], _: &mut [f64]) {}
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] - 1.0);
        }
        fn constraints(&self, x: &[f64], eq: &mut [f64], _: &mut [f64]) {
            eq[0] = x[0] + x[1] - 1.0;
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (0, 1)]
        }
        fn jacobian_values(&self, _: &[f64], v: &mut [f64]) {
            v[0] = 1.0;
            v[1] = 1.0;
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            let mut s = Vec::new();
            let mut sink = Sink::structure(&mut s);
            sink.push(0, 0, 0.0);
            sink.push(1, 1, 0.0);
            s
        }
        fn hessian_values(&self, _: &[f64], of: f64, _: &[f64], v: &mut [f64]) {
            v[0] = 2.0 * of;
            v[1] = 2.0 * of;
        }
    }

    #[test]
    fn equality_constrained_quadratic() {
        // Oracle: the stationarity system [2 0 1; 0 2 1; 1 1 0][x y λ]ᵀ = [4 2 1]ᵀ
        // solved by Cramer's rule.
        let a = [[2.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, 0.0]];
        let b = [4.0, 2.0, 1.0];
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(a);
        let oracle: Vec<f64> = (0..3)
            .map(|k| {
                let mut m = a;
                for r in 0..3 {
                    m[r][k] = b[r];
                }
                det3(m) / d
            })
            .collect();
        assert_eq!(oracle, vec![1.0, 0.0, 2.0]);

        let sol = solve_nlp(&EqQuadratic, &[0.0, 0.0], &IpmOptions::default()).unwrap();
        assert!((sol.x[0] - oracle[0]).abs() < 1e-8, "{sol:?}");
        assert!((sol.x[1] - oracle[1]).abs() < 1e-8, "{sol:?}");
        assert!((sol.eq_multipliers[0] - oracle[2]).abs() < 1e-6, "{sol:?}");
    }

    #[test]
    fn step_to_boundary_respects_positivity() {
        let a = step_to_boundary(&[1.0, 2.0], &[-2.0, 1.0], 1.0);
        assert!((a - 0.5).abs() < 1e-15);
        assert_eq!(step_to_boundary(&[1.0], &[1.0], 0.99), 1.0);
    }
}

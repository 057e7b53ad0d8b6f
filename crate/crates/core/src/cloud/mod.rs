//! Chance-constrained AC-OPF over a scenario cloud with affine response.
//!
//! The outer loop starts from the classical optimum, linearizes the power
//! flow there, tightens every limit by its closed-form margin and re-solves.
//! Within one solve the sensitivities are frozen while the response factors
//! stay decision variables (policies b and c), so each margin is an
//! auxiliary variable `λ` with `λ ≥ z ‖Σ^{1/2}(s_w + S_g α)ᵀ‖₂`, the norm
//! slightly smoothed so the row stays differentiable at zero.

mod margins;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use margins::{expected_cost_correction, power_rows, uncertainty_margins, ChanceSpec};

use crate::net::NetworkCase;
use crate::opf::{
    solve_opf_request, Coupling, LinearEq, MarginRow, MarginTarget, Margins, OpfError, OpfOptions, OpfRequest,
    OpfSolution, QuadForm,
};
use crate::powerflow::{ac_power_flow, sensitivity_basis, Demand, PfControls, PfError, PfOptions, SensitivityBasis};
use crate::uncertainty::{apply_response, psd_sqrt, PolicyKind, ResponsePolicy, ScenarioCloud, UncertaintyError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("violation probability {0} outside (0, 0.5]")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("power flow at the cloud center failed: {0}")]
    PowerFlow(#[from] PfError),
    #[error("infeasible at outer iteration {iteration} (margin norm {margin_norm:.3e}): {source}")]
    Infeasible {
        iteration: usize,
        margin_norm: f64,
        margins: Box<Margins>,
        source: OpfError,
    },
    #[error("solver failed at outer iteration {iteration}: {source}")]
    Solver { iteration: usize, source: OpfError },
    #[error("margins did not settle in {} outer iterations", history.len())]
    NoConvergence { history: Vec<OuterRecord> },
}

impl CloudError {
    /// Solver error that caused the failure, if any.
    pub fn opf_error(&self) -> Option<&OpfError> {
        match self {
            CloudError::Infeasible { source, .. } | CloudError::Solver { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CloudOptions {
    pub opf: OpfOptions,
    /// Largest margin change between outer iterations at convergence, p.u.
    pub fixed_point_tol: f64,
    pub objective_rel_tol: f64,
    pub max_outer: usize,
    pub pf: PfOptions,
}

impl Default for CloudOptions {
    fn default() -> Self {
        CloudOptions {
            opf: OpfOptions::default(),
            fixed_point_tol: 1e-4,
            objective_rel_tol: 1e-6,
            max_outer: 10,
            pf: PfOptions::default(),
        }
    }
}

/// One outer iteration. Iteration 0 is the classical solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub margin_norm: f64,
    pub margin_change: f64,
    pub expected_cost: f64,
    pub nlp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudSolution {
    pub base: OpfSolution,
    pub policy: ResponsePolicy,
    pub uncertain_buses: Vec<usize>,
    pub margins: Margins,
    pub spec: ChanceSpec,
    /// Generation cost at the base dispatch plus both corrections, $/h.
    pub expected_cost: f64,
    /// Quadratic-cost term of the linearized response, $/h.
    pub cost_correction: f64,
    /// Second-order growth of the slack unit's output under fluctuation,
    /// priced at its marginal cost, $/h.
    pub loss_correction: f64,
    pub outer_iterations: usize,
    pub history: Vec<OuterRecord>,
}

/// Demand at the cloud's center.
pub fn center_demand(case: &NetworkCase, cloud: &ScenarioCloud) -> Demand {
    let mut d = Demand::of(case);
    for (&b, &m) in cloud.uncertain_buses.iter().zip(&cloud.mean) {
        d.pd[b] = m;
    }
    d
}

/// Rows of one quantity class as affine functions of the response factors:
/// `y_i(α) = w_i + g_i α`, both as `N`-long rows.
struct AffineRows<'a> {
    w: &'a DMatrix<f64>,
    g: &'a DMatrix<f64>,
}

/// Maps response factors onto the NLP parameter vector.
struct Param {
    kind: PolicyKind,
    ng: usize,
    n: usize,
}

impl Param {
    fn count(&self) -> usize {
        match self.kind {
            PolicyKind::AlphaVector => self.ng,
            _ => self.ng * self.n,
        }
    }

    fn index(&self, g: usize, j: usize) -> usize {
        match self.kind {
            PolicyKind::AlphaVector => g,
            _ => g * self.n + j,
        }
    }

    fn start(&self, alpha: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.count()];
        for g in 0..self.ng {
            for j in 0..self.n {
                out[self.index(g, j)] = alpha[(g, j)];
            }
        }
        out
    }

    fn alpha(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.ng, self.n, |g, j| theta[self.index(g, j)])
    }

    fn column_sums(&self) -> Vec<LinearEq> {
        let cols = if self.kind == PolicyKind::AlphaVector { 1 } else { self.n };
        (0..cols)
            .map(|j| LinearEq {
                coeffs: (0..self.ng).map(|g| (self.index(g, j), 1.0)).collect(),
                rhs: 1.0,
            })
            .collect()
    }

    /// `Σ^{1/2} (w_i + g_i α)ᵀ` as a quadratic form in the parameters.
    fn form(&self, root: &DMatrix<f64>, rows: &AffineRows, i: usize) -> QuadForm {
        let n = self.n;
        let b: Vec<f64> = (0..n).map(|k| (0..n).map(|j| root[(k, j)] * rows.w[(i, j)]).sum()).collect();
        let mut p = DMatrix::zeros(n, self.count());
        for k in 0..n {
            for j in 0..n {
                if root[(k, j)] == 0.0 {
                    continue;
                }
                for g in 0..self.ng {
                    p[(k, self.index(g, j))] += root[(k, j)] * rows.g[(i, g)];
                }
            }
        }
        QuadForm { b, p }
    }

    /// Form of a non-slack unit's own response row `α_g`.
    fn unit_form(&self, root: &DMatrix<f64>, g: usize) -> QuadForm {
        let n = self.n;
        let mut p = DMatrix::zeros(n, self.count());
        for k in 0..n {
            for j in 0..n {
                p[(k, self.index(g, j))] += root[(k, j)];
            }
        }
        QuadForm { b: vec![0.0; n], p }
    }
}

fn coupling_for(
    case: &NetworkCase,
    basis: &SensitivityBasis,
    root: &DMatrix<f64>,
    spec: &ChanceSpec,
    param: &Param,
    alpha_start: &DMatrix<f64>,
) -> Coupling {
    let [zp, zq, zv, zf] = spec.factors();
    let slack = basis.slack_generator;
    let (w, g) = (&basis.wrt_w, &basis.wrt_pg);
    let mut rows = Vec::new();
    let mut cost_forms = Vec::new();
    for (k, gen) in case.generators.iter().enumerate() {
        let form = if k == slack {
            param.form(root, &AffineRows { w: &w.p_slack, g: &g.p_slack }, 0)
        } else {
            param.unit_form(root, k)
        };
        if gen.cost_a != 0.0 {
            cost_forms.push((gen.cost_a, form.clone()));
        }
        rows.push((MarginTarget::P(k), zp, form));
        let q = AffineRows { w: &w.q_gen, g: &g.q_gen };
        rows.push((MarginTarget::Q(k), zq, param.form(root, &q, k)));
    }
    let v = AffineRows { w: &w.v_pq, g: &g.v_pq };
    for (r, &bus) in basis.pq_buses.iter().enumerate() {
        rows.push((MarginTarget::V(bus), zv, param.form(root, &v, r)));
    }
    let ff = AffineRows { w: &w.f_from, g: &g.f_from };
    let ft = AffineRows { w: &w.f_to, g: &g.f_to };
    for (l, br) in case.branches.iter().enumerate() {
        if br.s_max > 0.0 {
            rows.push((MarginTarget::FFrom(l), zf, param.form(root, &ff, l)));
            rows.push((MarginTarget::FTo(l), zf, param.form(root, &ft, l)));
        }
    }
    Coupling {
        n_params: param.count(),
        param_start: param.start(alpha_start),
        param_eqs: param.column_sums(),
        margin_rows: rows
            .into_iter()
            .filter(|(_, z, form)| *z != 0.0 && !form.is_zero())
            .map(|(target, z, form)| MarginRow { target, z, form })
            .collect(),
        cost_forms,
    }
}

fn operating_point_at(
    case: &NetworkCase,
    sol: &OpfSolution,
    demand: &Demand,
    opts: &PfOptions,
) -> Result<crate::powerflow::OperatingPoint, PfError> {
    let controls = PfControls {
        pg: sol.pg.clone(),
        v_set: sol.v.clone(),
    };
    let op = ac_power_flow(case, &controls, demand, opts)?;
    if !op.converged {
        return Err(PfError::NotConverged);
    }
    Ok(op)
}

/// `½ c'_s Σ_k [p_s(+r_k) + p_s(−r_k) − 2 p_s(0)]` over the columns `r_k` of
/// `Σ^{1/2}`: the mean rise of the slack output under the affine response,
/// exact when it is quadratic in `w` and missed by the linearized rows.
fn loss_correction(
    case: &NetworkCase,
    sol: &OpfSolution,
    policy: &ResponsePolicy,
    root: &DMatrix<f64>,
    demand: &Demand,
    opts: &PfOptions,
    buses: &[usize],
) -> Result<f64, CloudError> {
    let slack = case.slack_generator();
    let slack_output = |w: &[f64]| -> Result<f64, CloudError> {
        let mut d = demand.clone();
        for (&b, x) in buses.iter().zip(w) {
            d.pd[b] += x;
        }
        let controls = PfControls {
            pg: apply_response(policy, &sol.pg, w)?,
            v_set: sol.v.clone(),
        };
        let op = ac_power_flow(case, &controls, &d, opts)?;
        if !op.converged {
            return Err(PfError::NotConverged.into());
        }
        Ok(op.pg[slack])
    };
    let n = root.ncols();
    if n == 0 || root.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let p0 = slack_output(&vec![0.0; n])?;
    let mut curvature = 0.0;
    for k in 0..n {
        let r: Vec<f64> = root.column(k).iter().copied().collect();
        let minus: Vec<f64> = r.iter().map(|x| -x).collect();
        curvature += slack_output(&r)? + slack_output(&minus)? - 2.0 * p0;
    }
    Ok(0.5 * case.generators[slack].marginal_cost(p0) * curvature)
}

/// Solve the cloud problem for `kind`. `fixed_alpha` supplies the factors of
/// policy a (equal shares when absent) and is ignored otherwise.
pub fn solve_cloud_opf(
    case: &NetworkCase,
    cloud: &ScenarioCloud,
    kind: PolicyKind,
    spec: &ChanceSpec,
    fixed_alpha: Option<&[f64]>,
    options: &CloudOptions,
) -> Result<CloudSolution, CloudError> {
    let ng = case.generators.len();
    let n = cloud.sources();
    if cloud.mean.len() != n || cloud.cov.shape() != (n, n) {
        return Err(CloudError::DimensionMismatch("cloud statistics do not match its bus list".into()));
    }
    if let Some(&b) = cloud.uncertain_buses.iter().find(|&&b| b >= case.buses.len()) {
        return Err(CloudError::DimensionMismatch(format!("uncertain bus index {b} out of range")));
    }
    let root = psd_sqrt(&cloud.cov)?;
    let mut alpha = match (kind, fixed_alpha) {
        (PolicyKind::FixedAlpha, Some(f)) => {
            if f.len() != ng {
                return Err(CloudError::DimensionMismatch(format!("{} participation factors for {ng} units", f.len())));
            }
            ResponsePolicy::from_vector(kind, f, n)?.alpha
        }
        _ => ResponsePolicy::equal_shares(kind, ng, n).alpha,
    };
    let demand = center_demand(case, cloud);
    let slack = case.slack_generator();
    let cost_a: Vec<f64> = case.generators.iter().map(|g| g.cost_a).collect();
    let coupled = kind.is_optimized() && !cloud.is_degenerate();
    let param = Param { kind, ng, n };

    let classical = solve_opf_request(
        case,
        &OpfRequest {
            demand: demand.clone(),
            margins: &Margins::zero(case),
            coupling: None,
            start: None,
        },
        &options.opf,
    )
    .map_err(|e| match e {
        OpfError::Infeasible { .. } => CloudError::Infeasible {
            iteration: 0,
            margin_norm: 0.0,
            margins: Box::new(Margins::zero(case)),
            source: e,
        },
        e => CloudError::Solver { iteration: 0, source: e },
    })?;
    let mut history = vec![OuterRecord {
        iteration: 0,
        margin_norm: 0.0,
        margin_change: 0.0,
        expected_cost: classical.generation_cost,
        nlp_iterations: classical.iterations,
    }];
    let mut prev = classical;
    let mut prev_margins = Margins::zero(case);
    let mut prev_cost = history[0].expected_cost;

    for k in 1..=options.max_outer {
        let op = operating_point_at(case, &prev, &demand, &options.pf)?;
        let basis = sensitivity_basis(case, &op, &cloud.uncertain_buses)?;
        let coupling = coupled.then(|| coupling_for(case, &basis, &root, spec, &param, &alpha));
        let fixed_margins = if coupled {
            Margins::zero(case)
        } else {
            uncertainty_margins(case, &basis.bundle(&alpha), &alpha, &cloud.cov, spec)?
        };
        let req = OpfRequest {
            demand: demand.clone(),
            margins: &fixed_margins,
            coupling: coupling.as_ref(),
            start: Some(&prev),
        };
        let sol = match solve_opf_request(case, &req, &options.opf) {
            Ok(s) => s,
            Err(e @ OpfError::Infeasible { .. }) => {
                let margins = if coupled {
                    uncertainty_margins(case, &basis.bundle(&alpha), &alpha, &cloud.cov, spec)?
                } else {
                    fixed_margins
                };
                return Err(CloudError::Infeasible {
                    iteration: k,
                    margin_norm: margins.norm(),
                    margins: Box::new(margins),
                    source: e,
                });
            }
            Err(e) => return Err(CloudError::Solver { iteration: k, source: e }),
        };
        if coupled {
            alpha = param.alpha(&sol.params);
        }
        let bundle = basis.bundle(&alpha);
        let margins = uncertainty_margins(case, &bundle, &alpha, &cloud.cov, spec)?;
        let delta: Vec<f64> = bundle.delta_p.row(0).iter().copied().collect();
        let correction = expected_cost_correction(&alpha, &delta, &cloud.cov, &cost_a, slack)?;
        let policy = ResponsePolicy { kind, alpha: alpha.clone() };
        let losses = loss_correction(case, &sol, &policy, &root, &demand, &options.pf, &cloud.uncertain_buses)?;
        let expected_cost = sol.generation_cost + correction + losses;
        let change = margins.max_abs_diff(&prev_margins);
        history.push(OuterRecord {
            iteration: k,
            margin_norm: margins.norm(),
            margin_change: change,
            expected_cost,
            nlp_iterations: sol.iterations,
        });
        log::debug!(
            "outer {k}: cost {expected_cost:.6} margin change {change:.3e} ({} NLP iterations)",
            sol.iterations
        );
        let rel = (expected_cost - prev_cost).abs() / prev_cost.abs().max(1e-12);
        if change < options.fixed_point_tol && rel < options.objective_rel_tol {
            return Ok(CloudSolution {
                base: sol,
                policy,
                uncertain_buses: cloud.uncertain_buses.clone(),
                margins,
                spec: *spec,
                expected_cost,
                cost_correction: correction,
                loss_correction: losses,
                outer_iterations: k + 1,
                history,
            });
        }
        prev = sol;
        prev_margins = margins;
        prev_cost = expected_cost;
    }
    Err(CloudError::NoConvergence { history })
}

/// Dispatch under the solved response after deviation `w`.
pub fn affine_dispatch(solution: &CloudSolution, w: &[f64]) -> Result<Vec<f64>, CloudError> {
    Ok(apply_response(&solution.policy, &solution.base.pg, w)?)
}

/// Stable JSON form of a [`CloudSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudReport {
    pub schema_version: u32,
    pub policy: char,
    pub uncertain_buses: Vec<u32>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Row per generator, column per uncertain bus.
    pub alpha: Vec<Vec<f64>>,
    pub margins: Margins,
    pub spec: ChanceSpec,
    pub generation_cost: f64,
    pub cost_correction: f64,
    pub loss_correction: f64,
    pub expected_cost: f64,
    pub outer_iterations: usize,
    pub history: Vec<OuterRecord>,
}

impl CloudSolution {
    pub fn report(&self, case: &NetworkCase) -> CloudReport {
        CloudReport {
            schema_version: 1,
            policy: self.policy.kind.letter(),
            uncertain_buses: self.uncertain_buses.iter().map(|&b| case.buses[b].id).collect(),
            pg: self.base.pg.clone(),
            qg: self.base.qg.clone(),
            v: self.base.v.clone(),
            theta: self.base.theta.clone(),
            alpha: self.policy.alpha.row_iter().map(|r| r.iter().copied().collect()).collect(),
            margins: self.margins.clone(),
            spec: self.spec,
            generation_cost: self.base.generation_cost,
            cost_correction: self.cost_correction,
            loss_correction: self.loss_correction,
            expected_cost: self.expected_cost,
            outer_iterations: self.outer_iterations,
            history: self.history.clone(),
        }
    }
}

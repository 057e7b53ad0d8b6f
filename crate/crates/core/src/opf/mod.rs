//! Deterministic AC-OPF with per-constraint tightening margins.

pub mod coupling;
mod model;

use cloudopf_nlp::{solve_nlp, IpmOptions, NlpDump, NlpError};
use serde::{Deserialize, Serialize};

use crate::net::{BusKind, NetworkCase};
use crate::powerflow::Demand;
pub use coupling::{Coupling, LinearEq, MarginRow, MarginTarget, QuadForm};
pub use model::OpfModel;

/// Tightening margins. `v` is indexed by bus and is zero at PV and ThetaV
/// buses; `f_from`/`f_to` are in p.u.² and indexed by branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub f_from: Vec<f64>,
    pub f_to: Vec<f64>,
}

impl Margins {
    pub fn zero(case: &NetworkCase) -> Self {
        let ng = case.generators.len();
        let nl = case.branches.len();
        Margins {
            p: vec![0.0; ng],
            q: vec![0.0; ng],
            v: vec![0.0; case.buses.len()],
            f_from: vec![0.0; nl],
            f_to: vec![0.0; nl],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.p.iter().chain(&self.q).chain(&self.v).chain(&self.f_from).chain(&self.f_to)
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|&x| x == 0.0)
    }

    pub fn max_abs_diff(&self, other: &Margins) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn get(&self, t: MarginTarget) -> f64 {
        match t {
            MarginTarget::P(g) => self.p[g],
            MarginTarget::Q(g) => self.q[g],
            MarginTarget::V(i) => self.v[i],
            MarginTarget::FFrom(l) => self.f_from[l],
            MarginTarget::FTo(l) => self.f_to[l],
        }
    }

    pub fn set(&mut self, t: MarginTarget, value: f64) {
        match t {
            MarginTarget::P(g) => self.p[g] = value,
            MarginTarget::Q(g) => self.q[g] = value,
            MarginTarget::V(i) => self.v[i] = value,
            MarginTarget::FFrom(l) => self.f_from[l] = value,
            MarginTarget::FTo(l) => self.f_to[l] = value,
        }
    }

    pub fn check(&self, case: &NetworkCase) -> Result<(), OpfError> {
        let dims = [
            ("p", self.p.len(), case.generators.len()),
            ("q", self.q.len(), case.generators.len()),
            ("v", self.v.len(), case.buses.len()),
            ("f_from", self.f_from.len(), case.branches.len()),
            ("f_to", self.f_to.len(), case.branches.len()),
        ];
        for (name, found, expected) in dims {
            if found != expected {
                return Err(OpfError::InconsistentDimensions(format!(
                    "margin class {name} has {found} entries, expected {expected}"
                )));
            }
        }
        if let Some(x) = self.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(OpfError::InconsistentDimensions(format!("margin {x} is not a finite nonnegative value")));
        }
        for (b, &m) in case.buses.iter().zip(&self.v) {
            if b.kind != BusKind::PQ && m != 0.0 {
                return Err(OpfError::InconsistentDimensions(format!(
                    "voltage margin at non-PQ bus {} must be zero",
                    b.id
                )));
            }
        }
        Ok(())
    }
}

/// Which sides of the two-sided limits (P, Q, V) a margin tightens. Flow
/// limits are upper-only in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MarginSides {
    #[default]
    Symmetric,
    UpperOnly,
}

#[derive(Debug, Clone)]
pub struct OpfOptions {
    pub ipm: IpmOptions,
    pub sides: MarginSides,
    /// On infeasibility with nonzero margins, re-solve with zero margins to
    /// tell base infeasibility from margin-induced infeasibility.
    pub retry_zero_margins: bool,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            ipm: IpmOptions::default(),
            sides: MarginSides::Symmetric,
            retry_zero_margins: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpfError {
    /// `base_feasible` is `Some(true)` when the same case solves with zero
    /// margins (the margins caused the infeasibility), `Some(false)` when it
    /// does not, and `None` when no retry was made.
    #[error("AC-OPF is infeasible (violation {violation:.3e}, base feasible: {base_feasible:?})")]
    Infeasible {
        violation: f64,
        iterations: usize,
        base_feasible: Option<bool>,
    },
    #[error("AC-OPF did not converge: {0}")]
    NoConvergence(NlpError),
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
}

impl OpfError {
    fn from_nlp(e: NlpError) -> Self {
        match e {
            NlpError::Infeasible { violation, iterations } => OpfError::Infeasible {
                violation,
                iterations,
                base_feasible: None,
            },
            NlpError::DimensionMismatch { expected, found } => {
                OpfError::InconsistentDimensions(format!("start has {found} entries, expected {expected}"))
            }
            other => OpfError::NoConvergence(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Generation cost `Σ a·pg² + b·pg + c`, $/h.
    pub generation_cost: f64,
    /// Optimal NLP objective, $/h (generation cost plus any policy term).
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Policy parameters (empty without a coupling).
    pub params: Vec<f64>,
    /// Coupled margin variables, one per coupling margin row.
    pub lambdas: Vec<f64>,
    /// Policy-dependent objective term.
    pub policy_cost: f64,
    /// Full NLP vector, usable as a warm start.
    #[serde(skip)]
    pub x: Vec<f64>,
}

impl OpfSolution {
    /// Voltage magnitude setpoint of each generator.
    pub fn v_set(&self, case: &NetworkCase) -> Vec<f64> {
        case.generators.iter().map(|g| self.v[g.bus]).collect()
    }
}

/// Everything an OPF solve needs besides the case.
pub struct OpfRequest<'a> {
    pub demand: Demand,
    pub margins: &'a Margins,
    pub coupling: Option<&'a Coupling>,
    /// Warm start: voltages, angles and dispatch are taken from here.
    pub start: Option<&'a OpfSolution>,
}

pub fn build_opf_model<'a>(
    case: &'a NetworkCase,
    demand: &Demand,
    margins: &Margins,
    coupling: Option<&Coupling>,
    options: &OpfOptions,
) -> Result<OpfModel<'a>, OpfError> {
    margins.check(case)?;
    if demand.pd.len() != case.buses.len() || demand.qd.len() != case.buses.len() {
        return Err(OpfError::InconsistentDimensions("demand length differs from bus count".into()));
    }
    if let Some(c) = coupling {
        if c.param_start.len() != c.n_params {
            return Err(OpfError::InconsistentDimensions("parameter start length".into()));
        }
        let forms = c.margin_rows.iter().map(|r| &r.form).chain(c.cost_forms.iter().map(|(_, f)| f));
        for f in forms {
            if f.p.ncols() != c.n_params || f.p.nrows() != f.b.len() {
                return Err(OpfError::InconsistentDimensions("quadratic form shape".into()));
            }
        }
    }
    Ok(OpfModel::new(case, demand, margins, options.sides, coupling))
}

fn start_vector(model: &OpfModel, start: Option<&OpfSolution>) -> Vec<f64> {
    let mut x = model.flat_start();
    if let Some(s) = start {
        let lay = model.layout();
        for i in 0..lay.nb {
            x[lay.v(i)] = s.v[i];
            x[lay.th(i)] = s.theta[i];
        }
        for g in 0..lay.ng {
            x[lay.pg(g)] = s.pg[g];
            x[lay.qg(g)] = s.qg[g];
        }
        model.complete_start(&mut x);
    }
    x
}

/// Solve one OPF instance and return the solution together with the NLP
/// vector at the optimum.
pub fn solve_opf_request(case: &NetworkCase, req: &OpfRequest, options: &OpfOptions) -> Result<OpfSolution, OpfError> {
    let model = build_opf_model(case, &req.demand, req.margins, req.coupling, options)?;
    let x0 = start_vector(&model, req.start);
    let result = solve_nlp(&model, &x0, &options.ipm);
    let result = match result {
        Err(e) if req.start.is_some() && !matches!(e, NlpError::Infeasible { .. }) => {
            log::debug!("warm-started OPF failed ({e}); retrying from a flat start");
            solve_nlp(&model, &model.flat_start(), &options.ipm)
        }
        r => r,
    };
    match result {
        Ok(sol) => {
            let lay = model.layout();
            let x = sol.x;
            Ok(OpfSolution {
                pg: (0..lay.ng).map(|g| x[lay.pg(g)]).collect(),
                qg: (0..lay.ng).map(|g| x[lay.qg(g)]).collect(),
                v: (0..lay.nb).map(|i| x[lay.v(i)]).collect(),
                theta: (0..lay.nb).map(|i| x[lay.th(i)]).collect(),
                generation_cost: model.generation_cost(&x),
                objective: sol.objective,
                iterations: sol.iterations,
                kkt_residual: sol.kkt_residual,
                max_violation: sol.max_violation,
                params: model.params(&x).to_vec(),
                lambdas: (0..lay.n_lam).map(|r| x[lay.lam(r)]).collect(),
                policy_cost: model.policy_cost(&x),
                x,
            })
        }
        Err(e) => {
            let mut err = OpfError::from_nlp(e);
            let tightened = !req.margins.is_zero() || req.coupling.is_some();
            if let OpfError::Infeasible { base_feasible, .. } = &mut err {
                if options.retry_zero_margins && tightened {
                    let zero = Margins::zero(case);
                    let base = OpfRequest {
                        demand: req.demand.clone(),
                        margins: &zero,
                        coupling: None,
                        start: req.start,
                    };
                    let retry = OpfOptions {
                        retry_zero_margins: false,
                        ..options.clone()
                    };
                    *base_feasible = Some(solve_opf_request(case, &base, &retry).is_ok());
                }
            }
            Err(err)
        }
    }
}

/// Classical (or margin-tightened) AC-OPF at the case's own demand.
pub fn solve_ac_opf(case: &NetworkCase, margins: &Margins, options: &OpfOptions) -> Result<OpfSolution, OpfError> {
    let req = OpfRequest {
        demand: Demand::of(case),
        margins,
        coupling: None,
        start: None,
    };
    solve_opf_request(case, &req, options)
}

/// Debug dump of the OPF program at its flat start.
pub fn dump_opf_model(case: &NetworkCase, margins: &Margins, options: &OpfOptions) -> Result<NlpDump, OpfError> {
    let model = build_opf_model(case, &Demand::of(case), margins, None, options)?;
    let x0 = model.flat_start();
    Ok(NlpDump::capture(&model, &x0))
}

//! JSON debug dump of an NLP at a given point.

use serde::{Deserialize, Serialize};

use crate::problem::NlpProblem;

pub const DUMP_SCHEMA_VERSION: u32 = 1;

/// Variables, bounds and constraint residuals of a problem at one point.
///
/// Schema (version 1):
/// `{ schema_version, vars: [{index, lower, upper, value}], objective,
///    eq_residuals: [f64], ineq_residuals: [f64], jacobian_nnz, hessian_nnz }`.
/// Infinite bounds are written as `null`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NlpDump {
    pub schema_version: u32,
    pub vars: Vec<VarEntry>,
    pub objective: f64,
    pub eq_residuals: Vec<f64>,
    pub ineq_residuals: Vec<f64>,
    pub jacobian_nnz: usize,
    pub hessian_nnz: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VarEntry {
    pub index: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub value: f64,
}

impl NlpDump {
    pub fn capture(problem: &dyn NlpProblem, x: &[f64]) -> Self {
        let d = problem.dims();
        let mut lower = vec![f64::NEG_INFINITY; d.vars];
        let mut upper = vec![f64::INFINITY; d.vars];
        problem.bounds(&mut lower, &mut upper);
        let mut eq = vec![0.0; d.eq];
        let mut ineq = vec![0.0; d.ineq];
        problem.constraints(x, &mut eq, &mut ineq);
        let finite = |v: f64| v.is_finite().then_some(v);
        NlpDump {
            schema_version: DUMP_SCHEMA_VERSION,
            vars: (0..d.vars)
                .map(|i| VarEntry {
                    index: i,
                    lower: finite(lower[i]),
                    upper: finite(upper[i]),
                    value: x[i],
                })
                .collect(),
            objective: problem.objective(x),
            eq_residuals: eq,
            ineq_residuals: ineq,
            jacobian_nnz: problem.jacobian_structure().len(),
            hessian_nnz: problem.hessian_structure().len(),
        }
    }
}

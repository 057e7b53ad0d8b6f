//! Closed-form tightening margins and the expected-cost correction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::CloudError;
use crate::net::NetworkCase;
use crate::opf::Margins;
use crate::powerflow::SensitivityBundle;
use crate::uncertainty::psd_sqrt;

/// Per-class violation probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceSpec {
    pub eps_p: f64,
    pub eps_q: f64,
    pub eps_v: f64,
    pub eps_f: f64,
}

impl Default for ChanceSpec {
    fn default() -> Self {
        ChanceSpec::uniform(0.01).unwrap()
    }
}

fn quantile(eps: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - eps)
}

impl ChanceSpec {
    pub fn uniform(eps: f64) -> Result<Self, CloudError> {
        ChanceSpec::new(eps, eps, eps, eps)
    }

    pub fn new(eps_p: f64, eps_q: f64, eps_v: f64, eps_f: f64) -> Result<Self, CloudError> {
        for e in [eps_p, eps_q, eps_v, eps_f] {
            // 0.5 is the median and yields zero margins
            if !(e > 0.0 && e <= 0.5) {
                return Err(CloudError::InvalidEpsilon(e));
            }
        }
        Ok(ChanceSpec { eps_p, eps_q, eps_v, eps_f })
    }

    /// `Φ⁻¹(1 − ε)` for the P, Q, V and F classes.
    pub fn factors(&self) -> [f64; 4] {
        [self.eps_p, self.eps_q, self.eps_v, self.eps_f].map(|e| if e == 0.5 { 0.0 } else { quantile(e) })
    }
}

fn row_norm(root: &DMatrix<f64>, row: impl Iterator<Item = f64>) -> f64 {
    let r = DVector::from_iterator(root.nrows(), row);
    (root * r).norm()
}

/// Active-power response rows: `α_g` for non-slack units, `α_slack + δp`
/// for the slack unit.
pub fn power_rows(bundle: &SensitivityBundle, alpha: &DMatrix<f64>, slack: usize) -> DMatrix<f64> {
    let mut rows = alpha.clone();
    for j in 0..alpha.ncols() {
        rows[(slack, j)] += bundle.delta_p[(0, j)];
    }
    rows
}

/// Margins `Φ⁻¹(1 − ε) ‖row · Σ^{1/2}‖₂` for every limited quantity.
pub fn uncertainty_margins(
    case: &NetworkCase,
    bundle: &SensitivityBundle,
    alpha: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    spec: &ChanceSpec,
) -> Result<Margins, CloudError> {
    let n = cov.nrows();
    let ng = case.generators.len();
    let nl = case.branches.len();
    let pq = case.pq_buses();
    let r = &bundle.rows;
    let shapes = [
        ("alpha", alpha.shape(), (ng, n)),
        ("delta_p", bundle.delta_p.shape(), (1, n)),
        ("v_pq", r.v_pq.shape(), (pq.len(), n)),
        ("q_gen", r.q_gen.shape(), (ng, n)),
        ("f_from", r.f_from.shape(), (nl, n)),
        ("f_to", r.f_to.shape(), (nl, n)),
    ];
    for (what, found, expected) in shapes {
        if found != expected {
            return Err(CloudError::DimensionMismatch(format!("{what} is {found:?}, expected {expected:?}")));
        }
    }
    let root = psd_sqrt(cov)?;
    let [zp, zq, zv, zf] = spec.factors();
    let p_rows = power_rows(bundle, alpha, case.slack_generator());
    let mut m = Margins::zero(case);
    for g in 0..ng {
        m.p[g] = zp * row_norm(&root, p_rows.row(g).iter().copied());
        m.q[g] = zq * row_norm(&root, r.q_gen.row(g).iter().copied());
    }
    for (k, &bus) in pq.iter().enumerate() {
        m.v[bus] = zv * row_norm(&root, r.v_pq.row(k).iter().copied());
    }
    for l in 0..nl {
        m.f_from[l] = zf * row_norm(&root, r.f_from.row(l).iter().copied());
        m.f_to[l] = zf * row_norm(&root, r.f_to.row(l).iter().copied());
    }
    Ok(m)
}

/// Expected quadratic-cost increase `Σ_g a_g · r_g Σ r_gᵀ` with `r_g` the
/// active response row of unit `g` (`α_g`, plus `slack_row` for the slack).
pub fn expected_cost_correction(
    alpha: &DMatrix<f64>,
    slack_row: &[f64],
    cov: &DMatrix<f64>,
    cost_a: &[f64],
    slack: usize,
) -> Result<f64, CloudError> {
    let (ng, n) = alpha.shape();
    if cost_a.len() != ng || slack_row.len() != n || cov.shape() != (n, n) || (ng > 0 && slack >= ng) {
        return Err(CloudError::DimensionMismatch(format!(
            "alpha {ng}x{n}, slack row {}, covariance {:?}, {} cost terms",
            slack_row.len(),
            cov.shape(),
            cost_a.len()
        )));
    }
    let mut total = 0.0;
    for g in 0..ng {
        let mut r = DVector::from_iterator(n, alpha.row(g).iter().copied());
        if g == slack {
            r += DVector::from_column_slice(slack_row);
        }
        total += cost_a[g] * (r.transpose() * cov * &r)[(0, 0)];
    }
    Ok(total)
}

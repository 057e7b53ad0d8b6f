//! AC power flow in polar coordinates and its linear sensitivities.

pub mod flows;
mod sensitivity;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::net::{BusKind, NetworkCase};
pub use flows::{branch_flows, BranchAdmittance, EndAdmittance, EndFlow};
pub use sensitivity::{sensitivity_basis, sensitivity_matrices, SensitivityBasis, SensitivityBundle, SensitivityRows};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PfError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("power-flow Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("operating point is not a converged power-flow solution")]
    NotConverged,
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), PfError> {
    if expected == found {
        Ok(())
    } else {
        Err(PfError::DimensionMismatch { what, expected, found })
    }
}

/// Uncontrolled consumption per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
}

impl Demand {
    pub fn of(case: &NetworkCase) -> Self {
        Demand {
            pd: case.buses.iter().map(|b| b.pd).collect(),
            qd: case.buses.iter().map(|b| b.qd).collect(),
        }
    }

    /// Base demand with `w[j]` added to the active demand of `buses[j]`.
    pub fn with_deviation(case: &NetworkCase, buses: &[usize], w: &[f64]) -> Self {
        let mut d = Demand::of(case);
        for (&b, &x) in buses.iter().zip(w) {
            d.pd[b] += x;
        }
        d
    }
}

/// Active-power balance residuals at every bus followed by reactive-power
/// residuals, each `injection(V, θ) − (generation − demand)`.
///
/// Evaluated through a complex bus admittance matrix assembled here from the
/// raw branch data, independently of the polar formulas used by the solvers.
pub fn mismatch(
    case: &NetworkCase,
    v: &[f64],
    theta: &[f64],
    pg: &[f64],
    qg: &[f64],
    demand: &Demand,
) -> Result<Vec<f64>, PfError> {
    let nb = case.buses.len();
    let ng = case.generators.len();
    check_len("v", nb, v.len())?;
    check_len("theta", nb, theta.len())?;
    check_len("pg", ng, pg.len())?;
    check_len("qg", ng, qg.len())?;
    check_len("pd", nb, demand.pd.len())?;
    check_len("qd", nb, demand.qd.len())?;

    let mut ybus = vec![Complex64::new(0.0, 0.0); nb * nb];
    for br in &case.branches {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let charging = Complex64::new(0.0, br.b_charging / 2.0);
        let t = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        let (f, k) = (br.from, br.to);
        ybus[f * nb + f] += (ys + charging) / (t * t.conj());
        ybus[f * nb + k] -= ys / t.conj();
        ybus[k * nb + f] -= ys / t;
        ybus[k * nb + k] += ys + charging;
    }
    for (i, b) in case.buses.iter().enumerate() {
        ybus[i * nb + i] += Complex64::new(b.gs, b.bs);
    }
    let volts: Vec<Complex64> = v.iter().zip(theta).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let mut gen = vec![Complex64::new(0.0, 0.0); nb];
    for (k, g) in case.generators.iter().enumerate() {
        gen[g.bus] += Complex64::new(pg[k], qg[k]);
    }
    let mut out = vec![0.0; 2 * nb];
    for i in 0..nb {
        let current: Complex64 = (0..nb).map(|k| ybus[i * nb + k] * volts[k]).sum();
        let s = volts[i] * current.conj();
        let net = gen[i] - Complex64::new(demand.pd[i], demand.qd[i]);
        out[i] = s.re - net.re;
        out[nb + i] = s.im - net.im;
    }
    Ok(out)
}

/// Power-flow controls: active dispatch per generator (the slack unit's
/// entry is ignored) and voltage magnitude per bus (used at PV/ThetaV buses).
#[derive(Debug, Clone, PartialEq)]
pub struct PfControls {
    pub pg: Vec<f64>,
    pub v_set: Vec<f64>,
}

impl PfControls {
    /// Units loaded in proportion to their capacity so that generation
    /// covers total demand; voltage setpoints from the case.
    pub fn default_for(case: &NetworkCase) -> Self {
        let demand: f64 = case.buses.iter().map(|b| b.pd).sum();
        let capacity: f64 = case.generators.iter().map(|g| g.pmax).sum();
        let share = if capacity > 0.0 { demand / capacity } else { 0.0 };
        let mut v_set = vec![1.0; case.buses.len()];
        for g in case.generators.iter().rev() {
            v_set[g.bus] = g.v_set;
        }
        PfControls {
            pg: case.generators.iter().map(|g| g.pmax * share).collect(),
            v_set,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { tol: 1e-8, max_iter: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub p_fr: Vec<f64>,
    pub q_fr: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    pub converged: bool,
    /// Largest absolute power-balance residual, p.u.
    pub mismatch_norm: f64,
    pub iterations: usize,
}

impl OperatingPoint {
    pub fn f_from(&self) -> Vec<f64> {
        self.p_fr.iter().zip(&self.q_fr).map(|(p, q)| p * p + q * q).collect()
    }

    pub fn f_to(&self) -> Vec<f64> {
        self.p_to.iter().zip(&self.q_to).map(|(p, q)| p * p + q * q).collect()
    }

    /// Active losses: total generation minus total demand.
    pub fn losses(&self, demand: &Demand) -> f64 {
        self.pg.iter().sum::<f64>() - demand.pd.iter().sum::<f64>()
    }
}

/// Bus injections `(P, Q)` computed from the branch flows and shunts.
pub(crate) fn bus_injections(
    case: &NetworkCase,
    adm: &[BranchAdmittance],
    v: &[f64],
    theta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = case.buses.iter().zip(v).map(|(b, &vi)| b.gs * vi * vi).collect();
    let mut q: Vec<f64> = case.buses.iter().zip(v).map(|(b, &vi)| -b.bs * vi * vi).collect();
    for (br, y) in case.branches.iter().zip(adm) {
        let (f, t) = (br.from, br.to);
        let (pf, qf) = y.from.power(v[f], v[t], theta[f], theta[t]);
        let (pt, qt) = y.to.power(v[t], v[f], theta[t], theta[f]);
        p[f] += pf;
        q[f] += qf;
        p[t] += pt;
        q[t] += qt;
    }
    (p, q)
}

/// Derivatives of the bus injections. Both matrices are `nb × 2nb` with
/// columns `[v_0 … v_{nb−1}, θ_0 … θ_{nb−1}]`.
pub(crate) fn injection_jacobian(
    case: &NetworkCase,
    adm: &[BranchAdmittance],
    v: &[f64],
    theta: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nb = case.buses.len();
    let mut dp = DMatrix::zeros(nb, 2 * nb);
    let mut dq = DMatrix::zeros(nb, 2 * nb);
    for (i, b) in case.buses.iter().enumerate() {
        dp[(i, i)] += 2.0 * b.gs * v[i];
        dq[(i, i)] -= 2.0 * b.bs * v[i];
    }
    for (br, y) in case.branches.iter().zip(adm) {
        for (own, other, end) in [(br.from, br.to, &y.from), (br.to, br.from, &y.to)] {
            let flow = end.flow(v[own], v[other], theta[own], theta[other]);
            let cols = [own, other, nb + own, nb + other];
            for (k, &c) in cols.iter().enumerate() {
                dp[(own, c)] += flow.dp[k];
                dq[(own, c)] += flow.dq[k];
            }
        }
    }
    (dp, dq)
}

/// Unknowns of the power flow: angles at non-slack buses, then magnitudes at
/// PQ buses. Equations are P balance at non-slack buses, then Q at PQ buses.
pub(crate) struct PfIndex {
    pub angle_buses: Vec<usize>,
    pub pq_buses: Vec<usize>,
}

impl PfIndex {
    pub fn new(case: &NetworkCase) -> Self {
        PfIndex {
            angle_buses: (0..case.buses.len()).filter(|&i| i != case.slack).collect(),
            pq_buses: case.pq_buses(),
        }
    }

    pub fn len(&self) -> usize {
        self.angle_buses.len() + self.pq_buses.len()
    }

    /// Square Jacobian of the reduced system.
    pub fn reduce(&self, nb: usize, dp: &DMatrix<f64>, dq: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len();
        let cols: Vec<usize> = self
            .angle_buses
            .iter()
            .map(|&i| nb + i)
            .chain(self.pq_buses.iter().copied())
            .collect();
        DMatrix::from_fn(n, n, |r, c| {
            let col = cols[c];
            if r < self.angle_buses.len() {
                dp[(self.angle_buses[r], col)]
            } else {
                dq[(self.pq_buses[r - self.angle_buses.len()], col)]
            }
        })
    }

    /// Scatter a reduced step into full `(dv, dθ)` vectors.
    pub fn expand(&self, nb: usize, dx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dv = vec![0.0; nb];
        let mut dth = vec![0.0; nb];
        let na = self.angle_buses.len();
        for (k, &i) in self.angle_buses.iter().enumerate() {
            dth[i] = dx[k];
        }
        for (k, &i) in self.pq_buses.iter().enumerate() {
            dv[i] = dx[na + k];
        }
        (dv, dth)
    }
}

/// Newton–Raphson power flow from a flat start. The slack unit absorbs the
/// active imbalance; reactive output at a bus is shared equally among its
/// units. Generator reactive limits are not enforced.
pub fn ac_power_flow(
    case: &NetworkCase,
    controls: &PfControls,
    demand: &Demand,
    options: &PfOptions,
) -> Result<OperatingPoint, PfError> {
    let nb = case.buses.len();
    let ng = case.generators.len();
    check_len("pg", ng, controls.pg.len())?;
    check_len("v_set", nb, controls.v_set.len())?;
    check_len("pd", nb, demand.pd.len())?;
    check_len("qd", nb, demand.qd.len())?;

    let adm = BranchAdmittance::for_case(case);
    let index = PfIndex::new(case);
    let slack_gen = case.slack_generator();
    let mut p_spec: Vec<f64> = demand.pd.iter().map(|d| -d).collect();
    for (k, g) in case.generators.iter().enumerate() {
        if k != slack_gen {
            p_spec[g.bus] += controls.pg[k];
        }
    }

    let mut v: Vec<f64> = (0..nb)
        .map(|i| if case.buses[i].kind == BusKind::PQ { 1.0 } else { controls.v_set[i] })
        .collect();
    let mut theta = vec![0.0; nb];
    let residual = |v: &[f64], theta: &[f64]| -> Vec<f64> {
        let (p, q) = bus_injections(case, &adm, v, theta);
        index
            .angle_buses
            .iter()
            .map(|&i| p[i] - p_spec[i])
            .chain(index.pq_buses.iter().map(|&i| q[i] + demand.qd[i]))
            .collect()
    };
    let norm = |f: &[f64]| f.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) });

    let mut f = residual(&v, &theta);
    let mut mis = norm(&f);
    let mut iterations = 0;
    let mut converged = mis <= options.tol;
    while !converged && iterations < options.max_iter && mis.is_finite() {
        let (dp, dq) = injection_jacobian(case, &adm, &v, &theta);
        let jac = index.reduce(nb, &dp, &dq);
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|x| -x));
        let dx = jac
            .lu()
            .solve(&rhs)
            .filter(|d| d.iter().all(|x| x.is_finite()))
            .ok_or(PfError::SingularJacobian { iteration: iterations })?;
        let (dv, dth) = index.expand(nb, dx.as_slice());
        for i in 0..nb {
            v[i] += dv[i];
            theta[i] += dth[i];
        }
        iterations += 1;
        f = residual(&v, &theta);
        mis = norm(&f);
        converged = mis <= options.tol;
    }
    if !mis.is_finite() {
        converged = false;
    }

    let (p, q) = bus_injections(case, &adm, &v, &theta);
    let at = case.generators_at();
    let mut pg = controls.pg.clone();
    let mut qg = vec![0.0; ng];
    let s = case.slack;
    pg[slack_gen] = p[s] + demand.pd[s] - at[s].iter().filter(|&&k| k != slack_gen).map(|&k| pg[k]).sum::<f64>();
    for (i, units) in at.iter().enumerate() {
        if !units.is_empty() {
            let share = (q[i] + demand.qd[i]) / units.len() as f64;
            for &k in units {
                qg[k] = share;
            }
        }
    }
    let [p_fr, q_fr, p_to, q_to] = branch_flows(case, &adm, &v, &theta);
    Ok(OperatingPoint {
        v,
        theta,
        pg,
        qg,
        p_fr,
        q_fr,
        p_to,
        q_to,
        converged,
        mismatch_norm: mis,
        iterations,
    })
}

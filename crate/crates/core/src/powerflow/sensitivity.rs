//! First-order response of the power-flow solution to uncertain demand.
//!
//! A source `w_j` adds consumption at `uncertain[j]`. Non-slack units
//! follow `pg_g += Σ_j α_gj w_j` while generator voltage setpoints stay
//! fixed, so every dependent quantity `y` responds as
//! `dy/dw = S_w + S_g α` with the Jacobian frozen at the operating point.

use nalgebra::{DMatrix, DVector};

use super::{injection_jacobian, BranchAdmittance, OperatingPoint, PfError, PfIndex};
use crate::net::NetworkCase;

/// Derivatives of every dependent quantity class with respect to a set of
/// sources (one column per source).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRows {
    /// Voltage magnitude at PQ buses (ascending internal index).
    pub v_pq: DMatrix<f64>,
    /// Reactive output per generator.
    pub q_gen: DMatrix<f64>,
    /// Active output of the slack generator (1 row).
    pub p_slack: DMatrix<f64>,
    /// Squared apparent power at the from end of each branch.
    pub f_from: DMatrix<f64>,
    /// Squared apparent power at the to end of each branch.
    pub f_to: DMatrix<f64>,
}

impl SensitivityRows {
    fn zeros(nq: usize, ng: usize, nl: usize, cols: usize) -> Self {
        SensitivityRows {
            v_pq: DMatrix::zeros(nq, cols),
            q_gen: DMatrix::zeros(ng, cols),
            p_slack: DMatrix::zeros(1, cols),
            f_from: DMatrix::zeros(nl, cols),
            f_to: DMatrix::zeros(nl, cols),
        }
    }

    fn affine(&self, other: &SensitivityRows, alpha: &DMatrix<f64>) -> SensitivityRows {
        SensitivityRows {
            v_pq: &self.v_pq + &other.v_pq * alpha,
            q_gen: &self.q_gen + &other.q_gen * alpha,
            p_slack: &self.p_slack + &other.p_slack * alpha,
            f_from: &self.f_from + &other.f_from * alpha,
            f_to: &self.f_to + &other.f_to * alpha,
        }
    }
}

/// Policy-independent pieces: responses to each uncertain source with all
/// non-slack dispatch fixed (`wrt_w`) and to each generator's setpoint
/// (`wrt_pg`, the slack column is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBasis {
    pub uncertain: Vec<usize>,
    pub pq_buses: Vec<usize>,
    pub slack_generator: usize,
    pub wrt_w: SensitivityRows,
    pub wrt_pg: SensitivityRows,
}

/// Sensitivities at a fixed response matrix `α` (`ng × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    pub rows: SensitivityRows,
    /// Slack residual response `dP_slack/dw − α_slack` (1 row).
    pub delta_p: DMatrix<f64>,
    /// Active response of every unit: `α_g` for non-slack units, the total
    /// slack response for the slack unit.
    pub p_gen: DMatrix<f64>,
}

impl SensitivityBasis {
    pub fn sources(&self) -> usize {
        self.uncertain.len()
    }

    /// Combine with a response matrix `alpha` of shape `ng × N`.
    pub fn bundle(&self, alpha: &DMatrix<f64>) -> SensitivityBundle {
        let rows = self.wrt_w.affine(&self.wrt_pg, alpha);
        let delta_p = &rows.p_slack - alpha.rows(self.slack_generator, 1);
        let mut p_gen = alpha.clone();
        p_gen.set_row(self.slack_generator, &rows.p_slack.row(0));
        SensitivityBundle { rows, delta_p, p_gen }
    }
}

/// Differentiate the power-flow equations at `op` (implicit function theorem,
/// one LU factorization, one back-solve per source).
pub fn sensitivity_basis(
    case: &NetworkCase,
    op: &OperatingPoint,
    uncertain: &[usize],
) -> Result<SensitivityBasis, PfError> {
    if !op.converged {
        return Err(PfError::NotConverged);
    }
    let nb = case.buses.len();
    let ng = case.generators.len();
    let nl = case.branches.len();
    if let Some(&b) = uncertain.iter().find(|&&b| b >= nb) {
        return Err(PfError::DimensionMismatch {
            what: "uncertain bus index",
            expected: nb,
            found: b,
        });
    }
    let adm = BranchAdmittance::for_case(case);
    let index = PfIndex::new(case);
    let slack_gen = case.slack_generator();
    let n = index.len();
    let na = index.angle_buses.len();
    let row_of_p = |bus: usize| index.angle_buses.iter().position(|&i| i == bus);

    let (dp, dq) = injection_jacobian(case, &adm, &op.v, &op.theta);
    let lu = index.reduce(nb, &dp, &dq).lu();

    let nw = uncertain.len();
    // Columns 0..nw are the demand sources, nw.. the generators.
    let mut rhs = DMatrix::zeros(n, nw + ng);
    let mut direct_slack = vec![0.0; nw + ng];
    for (j, &bus) in uncertain.iter().enumerate() {
        // residual is P_calc − Σpg + pd
        match row_of_p(bus) {
            Some(r) => rhs[(r, j)] = -1.0,
            None => direct_slack[j] = 1.0,
        }
    }
    for (k, g) in case.generators.iter().enumerate() {
        if k == slack_gen {
            continue;
        }
        match row_of_p(g.bus) {
            Some(r) => rhs[(r, nw + k)] = 1.0,
            None => direct_slack[nw + k] = -1.0,
        }
    }
    let dx = if n == 0 {
        DMatrix::zeros(0, nw + ng)
    } else {
        let sol = lu.solve(&rhs).ok_or(PfError::SingularJacobian { iteration: 0 })?;
        if sol.iter().any(|x| !x.is_finite()) {
            return Err(PfError::SingularJacobian { iteration: 0 });
        }
        sol
    };

    let at = case.generators_at();
    let mut all = SensitivityRows::zeros(index.pq_buses.len(), ng, nl, nw + ng);
    for c in 0..nw + ng {
        let col: Vec<f64> = dx.column(c).iter().copied().collect();
        let (dv, dth) = index.expand(nb, &col);
        let full = DVector::from_iterator(2 * nb, dv.iter().chain(&dth).copied());
        let dpi = &dp * &full;
        let dqi = &dq * &full;
        for (r, _) in index.pq_buses.iter().enumerate() {
            all.v_pq[(r, c)] = col[na + r];
        }
        for (bus, units) in at.iter().enumerate() {
            for &k in units {
                all.q_gen[(k, c)] = dqi[bus] / units.len() as f64;
            }
        }
        all.p_slack[(0, c)] = dpi[case.slack] + direct_slack[c];
        for (l, (br, y)) in case.branches.iter().zip(&adm).enumerate() {
            let (f, t) = (br.from, br.to);
            let ff = y.from.flow(op.v[f], op.v[t], op.theta[f], op.theta[t]);
            let ft = y.to.flow(op.v[t], op.v[f], op.theta[t], op.theta[f]);
            let d_from = [dv[f], dv[t], dth[f], dth[t]];
            let d_to = [dv[t], dv[f], dth[t], dth[f]];
            let dot = |g: &[f64; 4], d: &[f64; 4]| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
            all.f_from[(l, c)] = 2.0 * (ff.p * dot(&ff.dp, &d_from) + ff.q * dot(&ff.dq, &d_from));
            all.f_to[(l, c)] = 2.0 * (ft.p * dot(&ft.dp, &d_to) + ft.q * dot(&ft.dq, &d_to));
        }
    }
    let split = |m: &DMatrix<f64>| (m.columns(0, nw).into_owned(), m.columns(nw, ng).into_owned());
    let (vw, vg) = split(&all.v_pq);
    let (qw, qg) = split(&all.q_gen);
    let (pw, pgm) = split(&all.p_slack);
    let (ffw, ffg) = split(&all.f_from);
    let (ftw, ftg) = split(&all.f_to);
    Ok(SensitivityBasis {
        uncertain: uncertain.to_vec(),
        pq_buses: index.pq_buses,
        slack_generator: slack_gen,
        wrt_w: SensitivityRows {
            v_pq: vw,
            q_gen: qw,
            p_slack: pw,
            f_from: ffw,
            f_to: ftw,
        },
        wrt_pg: SensitivityRows {
            v_pq: vg,
            q_gen: qg,
            p_slack: pgm,
            f_from: ffg,
            f_to: ftg,
        },
    })
}

/// Sensitivities at `op` for uncertain buses `uncertain` under response
/// matrix `alpha` (`ng × N`).
pub fn sensitivity_matrices(
    case: &NetworkCase,
    op: &OperatingPoint,
    uncertain: &[usize],
    alpha: &DMatrix<f64>,
) -> Result<SensitivityBundle, PfError> {
    let ng = case.generators.len();
    if alpha.nrows() != ng {
        return Err(PfError::DimensionMismatch {
            what: "alpha rows",
            expected: ng,
            found: alpha.nrows(),
        });
    }
    if alpha.ncols() != uncertain.len() {
        return Err(PfError::DimensionMismatch {
            what: "alpha columns",
            expected: uncertain.len(),
            found: alpha.ncols(),
        });
    }
    Ok(sensitivity_basis(case, op, uncertain)?.bundle(alpha))
}

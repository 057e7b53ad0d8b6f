//! Comparison against the multi-scenario ground truth, out-of-sample replay
//! of cloud solutions, and grid sweeps.

mod experiment;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use experiment::{prepare_experiment, sweep, sweep_csv, ClassOverrides, Experiment, MsCache, SweepGrid, SweepOptions, SweepRow};

use crate::cloud::{affine_dispatch, center_demand, ChanceSpec, CloudError, CloudSolution};
use crate::ms::{MsError, MsSolution, SampleStatus};
use crate::net::NetworkCase;
use crate::powerflow::{ac_power_flow, PfControls, PfOptions};
use crate::uncertainty::{ScenarioCloud, UncertaintyError};

/// Slack on every limit before a replayed value counts as a violation, p.u.
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("no sample of the multi-scenario run solved")]
    NoGroundTruth,
    #[error("invalid sweep: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Ms(#[from] MsError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintClass {
    /// Active power of every generator.
    P,
    /// Reactive power of every generator.
    Q,
    /// Voltage magnitude at PQ buses.
    V,
    /// Squared apparent flow at each rated branch end.
    F,
}

impl ConstraintClass {
    pub const ALL: [ConstraintClass; 4] = [ConstraintClass::P, ConstraintClass::Q, ConstraintClass::V, ConstraintClass::F];

    fn eps(self, spec: &ChanceSpec) -> f64 {
        match self {
            ConstraintClass::P => spec.eps_p,
            ConstraintClass::Q => spec.eps_q,
            ConstraintClass::V => spec.eps_v,
            ConstraintClass::F => spec.eps_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassViolation {
    pub class: ConstraintClass,
    pub constraints: usize,
    pub target_eps: f64,
    /// Largest violation frequency of a single constraint of the class.
    pub worst_frequency: f64,
    /// Label of that constraint, if any was violated.
    pub worst_constraint: Option<String>,
    /// Fraction of replays violating at least one constraint of the class.
    pub any_frequency: f64,
    /// `√(ε(1 − ε)/M)` over the converged replays.
    pub std_error: f64,
}

impl ClassViolation {
    /// Whether the worst frequency is within `k` standard errors of ε.
    pub fn within(&self, k: f64) -> bool {
        self.worst_frequency <= self.target_eps + k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub schema_version: u32,
    pub samples: usize,
    pub replayed: usize,
    /// Replays whose power flow did not converge; not part of any frequency.
    pub pf_failures: usize,
    pub classes: Vec<ClassViolation>,
}

impl ViolationReport {
    pub fn class(&self, c: ConstraintClass) -> &ClassViolation {
        self.classes.iter().find(|v| v.class == c).expect("every class is reported")
    }
}

/// Labels of every checked constraint, grouped by class.
fn constraint_labels(case: &NetworkCase) -> [Vec<String>; 4] {
    let gens = |p: &str| {
        case.generators
            .iter()
            .enumerate()
            .map(|(g, gen)| format!("{p} gen {g} (bus {})", case.buses[gen.bus].id))
            .collect::<Vec<_>>()
    };
    let v = case.pq_buses().iter().map(|&i| format!("V bus {}", case.buses[i].id)).collect();
    let mut f = Vec::new();
    for br in case.branches.iter().filter(|b| b.s_max > 0.0) {
        let (a, b) = (case.buses[br.from].id, case.buses[br.to].id);
        f.push(format!("F {a}-{b} at {a}"));
        f.push(format!("F {a}-{b} at {b}"));
    }
    [gens("P"), gens("Q"), v, f]
}

/// One flag per constraint, in the order of [`constraint_labels`].
fn violations_at(case: &NetworkCase, pg: &[f64], qg: &[f64], v: &[f64], f_from: &[f64], f_to: &[f64]) -> [Vec<bool>; 4] {
    let out = |x: f64, lo: f64, hi: f64| x < lo - VIOLATION_TOL || x > hi + VIOLATION_TOL;
    let p = case.generators.iter().zip(pg).map(|(g, &x)| out(x, g.pmin, g.pmax)).collect();
    let q = case.generators.iter().zip(qg).map(|(g, &x)| out(x, g.qmin, g.qmax)).collect();
    let vv = case
        .pq_buses()
        .iter()
        .map(|&i| out(v[i], case.buses[i].vmin, case.buses[i].vmax))
        .collect();
    let mut f = Vec::new();
    for (l, br) in case.branches.iter().enumerate().filter(|(_, b)| b.s_max > 0.0) {
        let cap = br.s_max * br.s_max;
        f.push(f_from[l] > cap + VIOLATION_TOL);
        f.push(f_to[l] > cap + VIOLATION_TOL);
    }
    [p, q, vv, f]
}

/// Replay `samples` (deviations from the cloud mean) through the full AC
/// power flow: generators follow the affine response, voltage setpoints stay
/// at the cloud solution and the slack unit balances the rest.
pub fn out_of_sample_validate(
    case: &NetworkCase,
    cloud: &ScenarioCloud,
    solution: &CloudSolution,
    samples: &DMatrix<f64>,
    pf: &PfOptions,
) -> Result<ViolationReport, EvalError> {
    if samples.ncols() != solution.uncertain_buses.len() || cloud.uncertain_buses != solution.uncertain_buses {
        return Err(EvalError::ConfigMismatch("samples, cloud and solution disagree on the uncertain buses".into()));
    }
    let center = center_demand(case, cloud);
    let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
    let flags: Vec<Option<[Vec<bool>; 4]>> = rows
        .par_iter()
        .map(|w| {
            let pg = affine_dispatch(solution, w).ok()?;
            let mut demand = center.clone();
            for (&b, x) in solution.uncertain_buses.iter().zip(w) {
                demand.pd[b] += x;
            }
            let controls = PfControls {
                pg,
                v_set: solution.base.v.clone(),
            };
            let op = ac_power_flow(case, &controls, &demand, pf).ok().filter(|op| op.converged)?;
            Some(violations_at(case, &op.pg, &op.qg, &op.v, &op.f_from(), &op.f_to()))
        })
        .collect();
    let replayed = flags.iter().filter(|f| f.is_some()).count();
    let labels = constraint_labels(case);
    let mut classes = Vec::with_capacity(4);
    for (k, class) in ConstraintClass::ALL.into_iter().enumerate() {
        let n = labels[k].len();
        let mut counts = vec![0usize; n];
        let mut any = 0usize;
        for f in flags.iter().flatten() {
            let mut hit = false;
            for (c, &v) in counts.iter_mut().zip(&f[k]) {
                if v {
                    *c += 1;
                    hit = true;
                }
            }
            any += hit as usize;
        }
        let denom = replayed.max(1) as f64;
        let worst = counts.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i)));
        let eps = class.eps(&solution.spec);
        classes.push(ClassViolation {
            class,
            constraints: n,
            target_eps: eps,
            worst_frequency: worst.map_or(0.0, |(_, &c)| c as f64 / denom),
            worst_constraint: worst.filter(|(_, &c)| c > 0).map(|(i, _)| labels[k][i].clone()),
            any_frequency: any as f64 / denom,
            std_error: (eps * (1.0 - eps) / denom).sqrt(),
        });
    }
    Ok(ViolationReport {
        schema_version: 1,
        samples: rows.len(),
        replayed,
        pf_failures: rows.len() - replayed,
        classes,
    })
}

/// Configuration echo of one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub case_name: String,
    pub case_hash: String,
    pub loading: f64,
    pub sigma_ratio: f64,
    pub spec: ChanceSpec,
    pub seed: u64,
    pub samples: usize,
}

/// A cloud solution and the seconds it took.
#[derive(Debug, Clone)]
pub struct TimedCloud {
    pub solution: CloudSolution,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub policy: char,
    pub expected_cost: f64,
    pub relative_gap: f64,
    pub outer_iterations: usize,
    pub wall_time: f64,
    /// Row per generator, column per uncertain bus.
    pub alpha: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScatter {
    pub policy: char,
    /// Affine response at each ground-truth sample, in the same order.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    pub generators: (usize, usize),
    pub ms: Vec<(f64, f64)>,
    pub policies: Vec<PolicyScatter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub ms_mean_cost: f64,
    pub ms_optimal: usize,
    pub ms_infeasible: usize,
    pub ms_failed: usize,
    pub ms_wall_time: f64,
    pub entries: Vec<PolicyEntry>,
    pub scatter: Option<ScatterData>,
}

/// `(cloud − ms) / ms`.
pub fn relative_gap(cloud_cost: f64, ms_mean: f64) -> f64 {
    (cloud_cost - ms_mean) / ms_mean
}

/// Compare cloud solutions with the ground truth on the deviations it was
/// solved for. `pair` selects the generators of the scatter dataset.
pub fn compare(
    ms: &MsSolution,
    clouds: &[TimedCloud],
    deviations: &DMatrix<f64>,
    pair: Option<(usize, usize)>,
    config: RunConfig,
) -> Result<ComparisonReport, EvalError> {
    if deviations.nrows() != ms.samples.len() || deviations.ncols() != ms.uncertain_buses.len() {
        return Err(EvalError::ConfigMismatch(format!(
            "{}x{} deviations for {} samples over {} buses",
            deviations.nrows(),
            deviations.ncols(),
            ms.samples.len(),
            ms.uncertain_buses.len()
        )));
    }
    if deviations.nrows() != config.samples {
        return Err(EvalError::ConfigMismatch(format!("{} samples, configuration says {}", deviations.nrows(), config.samples)));
    }
    for c in clouds {
        if c.solution.uncertain_buses != ms.uncertain_buses {
            return Err(EvalError::ConfigMismatch(format!(
                "policy {} was solved for other uncertain buses",
                c.solution.policy.kind.letter()
            )));
        }
    }
    let mean = ms.mean_cost.ok_or(EvalError::NoGroundTruth)?;
    let entries = clouds
        .iter()
        .map(|c| PolicyEntry {
            policy: c.solution.policy.kind.letter(),
            expected_cost: c.solution.expected_cost,
            relative_gap: relative_gap(c.solution.expected_cost, mean),
            outer_iterations: c.solution.outer_iterations,
            wall_time: c.wall_time,
            alpha: c.solution.policy.alpha.row_iter().map(|r| r.iter().copied().collect()).collect(),
        })
        .collect();
    let scatter = match pair {
        None => None,
        Some((i, j)) => {
            let ng = clouds.first().map_or_else(
                || ms.samples.iter().find(|s| !s.pg.is_empty()).map_or(0, |s| s.pg.len()),
                |c| c.solution.base.pg.len(),
            );
            let points = crate::ms::ms_dispatch_scatter(ms, ng, (i, j))?;
            let solved: Vec<usize> = (0..ms.samples.len()).filter(|&a| ms.samples[a].status == SampleStatus::Optimal).collect();
            let mut policies = Vec::with_capacity(clouds.len());
            for c in clouds {
                let mut pts = Vec::with_capacity(solved.len());
                for &a in &solved {
                    let w: Vec<f64> = deviations.row(a).iter().copied().collect();
                    let pg = affine_dispatch(&c.solution, &w)?;
                    pts.push((pg[i], pg[j]));
                }
                policies.push(PolicyScatter {
                    policy: c.solution.policy.kind.letter(),
                    points: pts,
                });
            }
            Some(ScatterData {
                generators: (i, j),
                ms: points,
                policies,
            })
        }
    };
    Ok(ComparisonReport {
        schema_version: 1,
        config,
        ms_mean_cost: mean,
        ms_optimal: ms.optimal_count,
        ms_infeasible: ms.infeasible_count,
        ms_failed: ms.failed_count,
        ms_wall_time: ms.total_time,
        entries,
        scatter,
    })
}

impl ComparisonReport {
    /// Scatter rows `series,sample,pg_i,pg_j` with `series` either `ms` or a
    /// policy letter.
    pub fn scatter_csv(&self) -> Option<String> {
        let s = self.scatter.as_ref()?;
        let mut out = format!("series,sample,pg_{},pg_{}\n", s.generators.0, s.generators.1);
        let series = std::iter::once(("ms".to_string(), &s.ms)).chain(s.policies.iter().map(|p| (p.policy.to_string(), &p.points)));
        for (name, pts) in series {
            for (a, (x, y)) in pts.iter().enumerate() {
                out.push_str(&format!("{name},{a},{},{}\n", crate::report::sig12(*x), crate::report::sig12(*y)));
            }
        }
        Some(out)
    }
}

/// The two non-slack units whose ground-truth dispatch varies most.
pub fn representative_pair(ms: &MsSolution, slack: usize) -> Option<(usize, usize)> {
    let solved: Vec<&Vec<f64>> = ms.samples.iter().filter(|s| s.objective.is_some()).map(|s| &s.pg).collect();
    let ng = solved.first()?.len();
    let m = solved.len() as f64;
    let mut spread: Vec<(usize, f64)> = (0..ng)
        .filter(|&g| g != slack)
        .map(|g| {
            let mean = solved.iter().map(|p| p[g]).sum::<f64>() / m;
            (g, solved.iter().map(|p| (p[g] - mean).powi(2)).sum::<f64>() / m)
        })
        .collect();
    spread.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match spread[..] {
        [(a, _), (b, _), ..] => Some((a.min(b), a.max(b))),
        _ => None,
    }
}

/// Principal axes of a planar point set: the ratio of leading to second
/// singular value of the centered points and the unit leading direction.
pub fn principal_axes(points: &[(f64, f64)]) -> Option<(f64, (f64, f64))> {
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / m, my / m);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let eig = nalgebra::SymmetricEigen::new(nalgebra::Matrix2::new(sxx, sxy, sxy, syy));
    let (hi, lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (l1, l2) = (eig.eigenvalues[hi].max(0.0), eig.eigenvalues[lo].max(0.0));
    let dir = eig.eigenvectors.column(hi);
    let ratio = if l2 == 0.0 { f64::INFINITY } else { (l1 / l2).sqrt() };
    Some((ratio, (dir[0], dir[1])))
}

/// Angle in degrees between two lines through the origin, in `[0, 90]`.
pub fn line_angle_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    // atan2 keeps full precision near 0°, where acos of the cosine does not
    let dot = (a.0 * b.0 + a.1 * b.1).abs();
    let cross = (a.0 * b.1 - a.1 * b.0).abs();
    cross.atan2(dot).to_degrees()
}

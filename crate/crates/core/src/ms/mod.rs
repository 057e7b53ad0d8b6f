//! Multi-scenario AC-OPF: one full AC-OPF per demand sample.
//!
//! Every sample re-optimizes all controls, voltage setpoints included, so
//! its optimum bounds from below the cost of any restricted response.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::center_demand;
use crate::net::NetworkCase;
use crate::opf::{solve_opf_request, Margins, OpfError, OpfOptions, OpfRequest, OpfSolution};
use crate::uncertainty::ScenarioCloud;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown generator {0}")]
    UnknownGenerator(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleStatus {
    Optimal,
    Infeasible,
    Failed,
}

impl SampleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleStatus::Optimal => "optimal",
            SampleStatus::Infeasible => "infeasible",
            SampleStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub status: SampleStatus,
    /// Generation cost, $/h, of an optimal sample.
    pub objective: Option<f64>,
    /// Empty unless optimal.
    pub pg: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSolution {
    pub uncertain_buses: Vec<usize>,
    pub samples: Vec<SampleResult>,
    /// Mean over optimal samples.
    pub mean_cost: Option<f64>,
    pub optimal_count: usize,
    pub infeasible_count: usize,
    pub failed_count: usize,
    /// Seconds, including the base solve.
    pub total_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MsOptions {
    pub opf: OpfOptions,
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

fn run_sample(case: &NetworkCase, cloud: &ScenarioCloud, w: &[f64], base: Option<&OpfSolution>, opf: &OpfOptions) -> SampleResult {
    let started = Instant::now();
    let mut demand = center_demand(case, cloud);
    for (&b, x) in cloud.uncertain_buses.iter().zip(w) {
        demand.pd[b] += x;
    }
    let zero = Margins::zero(case);
    let req = OpfRequest {
        demand,
        margins: &zero,
        coupling: None,
        start: base,
    };
    let outcome = solve_opf_request(case, &req, opf);
    let wall_time = started.elapsed().as_secs_f64();
    match outcome {
        Ok(sol) => SampleResult {
            status: SampleStatus::Optimal,
            objective: Some(sol.generation_cost),
            pg: sol.pg,
            v: sol.v,
            iterations: sol.iterations,
            wall_time,
        },
        Err(e) => {
            let (status, iterations) = match e {
                OpfError::Infeasible { iterations, .. } => (SampleStatus::Infeasible, iterations),
                _ => (SampleStatus::Failed, 0),
            };
            SampleResult {
                status,
                objective: None,
                pg: vec![],
                v: vec![],
                iterations,
                wall_time,
            }
        }
    }
}

/// Solve one AC-OPF per row of `samples` (deviations from the cloud mean,
/// columns ordered as `cloud.uncertain_buses`). Each solve starts from the
/// optimum at the cloud mean and falls back to a flat start on failure.
pub fn solve_ms_opf(
    case: &NetworkCase,
    cloud: &ScenarioCloud,
    samples: &DMatrix<f64>,
    options: &MsOptions,
) -> Result<MsSolution, MsError> {
    if samples.ncols() != cloud.sources() || cloud.mean.len() != cloud.sources() {
        return Err(MsError::DimensionMismatch(format!(
            "{} sample columns for {} uncertain buses",
            samples.ncols(),
            cloud.sources()
        )));
    }
    if let Some(&b) = cloud.uncertain_buses.iter().find(|&&b| b >= case.buses.len()) {
        return Err(MsError::DimensionMismatch(format!("uncertain bus index {b} out of range")));
    }
    let started = Instant::now();
    let zero = Margins::zero(case);
    let base = solve_opf_request(
        case,
        &OpfRequest {
            demand: center_demand(case, cloud),
            margins: &zero,
            coupling: None,
            start: None,
        },
        &options.opf,
    )
    .ok();
    let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
    let results: Vec<SampleResult> = rows
        .par_iter()
        .map(|w| run_sample(case, cloud, w, base.as_ref(), &options.opf))
        .collect();
    let count = |s| results.iter().filter(|r| r.status == s).count();
    let optimal_count = count(SampleStatus::Optimal);
    let total = compensated_sum(results.iter().filter_map(|r| r.objective));
    Ok(MsSolution {
        uncertain_buses: cloud.uncertain_buses.clone(),
        mean_cost: (optimal_count > 0).then(|| total / optimal_count as f64),
        optimal_count,
        infeasible_count: count(SampleStatus::Infeasible),
        failed_count: count(SampleStatus::Failed),
        samples: results,
        total_time: started.elapsed().as_secs_f64(),
    })
}

/// `(pg_i, pg_j)` of every optimal sample for zero-based generators `i, j`.
pub fn ms_dispatch_scatter(ms: &MsSolution, ng: usize, pair: (usize, usize)) -> Result<Vec<(f64, f64)>, MsError> {
    for g in [pair.0, pair.1] {
        if g >= ng {
            return Err(MsError::UnknownGenerator(g));
        }
    }
    Ok(ms
        .samples
        .iter()
        .filter(|s| s.status == SampleStatus::Optimal)
        .map(|s| (s.pg[pair.0], s.pg[pair.1]))
        .collect())
}

impl MsSolution {
    /// Header `sample,status,objective,pg_0,...`; failed samples leave the
    /// numeric fields empty.
    pub fn to_csv(&self, ng: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample".to_string(), "status".into(), "objective".into()];
        header.extend((0..ng).map(|g| format!("pg_{g}")));
        w.write_record(&header).expect("in-memory csv write");
        for (a, s) in self.samples.iter().enumerate() {
            let mut rec = vec![a.to_string(), s.status.as_str().to_string()];
            if let Some(obj) = s.objective {
                rec.push(crate::report::sig12(obj));
                rec.extend(s.pg.iter().map(|&p| crate::report::sig12(p)));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), ng + 1));
            }
            w.write_record(&rec).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_cancelled_terms() {
        let naive: f64 = [1e16, 1.0, -1e16].iter().sum();
        assert_eq!(naive, 0.0);
        assert_eq!(compensated_sum([1e16, 1.0, -1e16]), 1.0);
        assert_eq!(compensated_sum([]), 0.0);
    }

    #[test]
    fn scatter_checks_generators() {
        let ms = MsSolution {
            samples: vec![SampleResult {
                status: SampleStatus::Optimal,
                objective: Some(1.0),
                pg: vec![0.1, 0.2],
                v: vec![],
                iterations: 1,
                wall_time: 0.0,
            }],
            uncertain_buses: vec![0],
            mean_cost: Some(1.0),
            optimal_count: 1,
            infeasible_count: 0,
            failed_count: 0,
            total_time: 0.0,
        };
        assert_eq!(ms_dispatch_scatter(&ms, 2, (1, 0)).unwrap(), vec![(0.2, 0.1)]);
        assert_eq!(ms_dispatch_scatter(&ms, 2, (0, 2)), Err(MsError::UnknownGenerator(2)));
        assert_eq!(ms.to_csv(2), "sample,status,objective,pg_0,pg_1\n0,optimal,1,0.1,0.2\n");
    }
}

//! Sample-fitted experiments, the ground-truth cache and grid sweeps.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{relative_gap, EvalError};
use crate::cloud::{solve_cloud_opf, ChanceSpec, CloudError, CloudOptions};
use crate::ms::{solve_ms_opf, MsOptions, MsSolution};
use crate::net::NetworkCase;
use crate::report::sig12;
use crate::uncertainty::{cloud_from_samples, default_uncertain_buses, gaussian_cloud, sample_cloud, PolicyKind, ScenarioCloud};

/// One (loading, σ) setting with a cloud fitted to its own samples.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub case: NetworkCase,
    pub loading: f64,
    pub sigma_ratio: f64,
    pub seed: u64,
    /// Statistics of the Gaussian the samples were drawn from.
    pub nominal: ScenarioCloud,
    /// Population statistics of the drawn demands.
    pub cloud: ScenarioCloud,
    /// Drawn demands minus the fitted mean, one row per sample.
    pub deviations: DMatrix<f64>,
}

/// Scale `base` to `loading`, draw `samples` demands with `σ_i =
/// sigma_ratio · pd_i` and fit the cloud to them. `buses` defaults to every
/// bus with positive demand.
pub fn prepare_experiment(
    base: &NetworkCase,
    loading: f64,
    sigma_ratio: f64,
    buses: Option<&[usize]>,
    samples: usize,
    seed: u64,
) -> Result<Experiment, EvalError> {
    let case = base
        .scale_loading(loading)
        .map_err(|e| EvalError::InvalidGrid(e.to_string()))?;
    let buses = buses.map_or_else(|| default_uncertain_buses(&case), <[usize]>::to_vec);
    let nominal = gaussian_cloud(&case, &buses, sigma_ratio)?;
    let draws = sample_cloud(&nominal, samples, seed)?;
    let absolute = DMatrix::from_fn(samples, buses.len(), |a, j| nominal.mean[j] + draws[(a, j)]);
    let cloud = cloud_from_samples(&absolute, &buses)?;
    let deviations = DMatrix::from_fn(samples, buses.len(), |a, j| absolute[(a, j)] - cloud.mean[j]);
    Ok(Experiment {
        case,
        loading,
        sigma_ratio,
        seed,
        nominal,
        cloud,
        deviations,
    })
}

/// Ground-truth runs keyed by case hash, loading, σ ratio, seed and sample
/// count; kept in memory and, with a directory, as JSON files.
#[derive(Debug, Default)]
pub struct MsCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Arc<MsSolution>>>,
}

impl MsCache {
    pub fn in_memory() -> Self {
        MsCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        MsCache {
            dir: Some(dir.into()),
            memory: Mutex::default(),
        }
    }

    fn key(exp: &Experiment) -> String {
        format!(
            "{}|{:?}|{:?}|{}|{}",
            exp.case.content_hash(),
            exp.loading,
            exp.sigma_ratio,
            exp.seed,
            exp.deviations.nrows()
        )
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        let digest = Sha256::digest(key.as_bytes());
        let name: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
        self.dir.as_ref().map(|d| d.join(format!("ms-{name}.json")))
    }

    pub fn len(&self) -> usize {
        self.memory.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cached run for `exp`, solving and storing it on a miss.
    pub fn get_or_solve(&self, exp: &Experiment, options: &MsOptions) -> Result<Arc<MsSolution>, EvalError> {
        let key = MsCache::key(exp);
        if let Some(hit) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let path = self.file(&key);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let text = std::fs::read_to_string(p).map_err(|e| EvalError::Cache(e.to_string()))?;
            let stored: CacheFile = serde_json::from_str(&text).map_err(|e| EvalError::Cache(e.to_string()))?;
            if stored.key == key {
                let sol = Arc::new(stored.solution);
                self.memory.lock().expect("cache lock").insert(key, sol.clone());
                return Ok(sol);
            }
        }
        let sol = Arc::new(solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, options)?);
        if let Some(p) = path {
            let file = CacheFile {
                schema_version: 1,
                key: key.clone(),
                solution: (*sol).clone(),
            };
            let text = serde_json::to_string(&file).map_err(|e| EvalError::Cache(e.to_string()))?;
            std::fs::write(&p, text).map_err(|e| EvalError::Cache(format!("{}: {e}", p.display())))?;
        }
        self.memory.lock().expect("cache lock").insert(key, sol.clone());
        Ok(sol)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    schema_version: u32,
    key: String,
    solution: MsSolution,
}

/// Per-class probabilities that replace the grid's uniform ε.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassOverrides {
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub v: Option<f64>,
    pub f: Option<f64>,
}

impl ClassOverrides {
    pub fn apply(&self, eps: f64) -> Result<ChanceSpec, CloudError> {
        ChanceSpec::new(
            self.p.unwrap_or(eps),
            self.q.unwrap_or(eps),
            self.v.unwrap_or(eps),
            self.f.unwrap_or(eps),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub loadings: Vec<f64>,
    pub sigma_ratios: Vec<f64>,
    pub eps: Vec<f64>,
    pub policies: Vec<PolicyKind>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub samples: usize,
    pub seed: u64,
    pub uncertain_buses: Option<Vec<usize>>,
    /// Participation factors of policy a; equal shares when absent.
    pub fixed_alpha: Option<Vec<f64>>,
    pub overrides: ClassOverrides,
    pub cloud: CloudOptions,
    pub ms: MsOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            samples: 1000,
            seed: 1,
            uncertain_buses: None,
            fixed_alpha: None,
            overrides: ClassOverrides::default(),
            cloud: CloudOptions::default(),
            ms: MsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub loading: f64,
    pub sigma_ratio: f64,
    pub eps: f64,
    pub policy: char,
    pub seed: u64,
    pub samples: usize,
    /// `optimal`, `infeasible`, `no-convergence` or `failed`.
    pub status: String,
    pub ms_mean_cost: Option<f64>,
    pub ms_infeasible: usize,
    pub cloud_expected_cost: Option<f64>,
    pub relative_gap: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub cloud_time: f64,
    pub ms_time: f64,
}

fn status_of(e: &CloudError) -> &'static str {
    match e {
        CloudError::Infeasible { .. } => "infeasible",
        CloudError::NoConvergence { .. } => "no-convergence",
        _ => "failed",
    }
}

/// Run every grid cell. Ground truth is solved once per (loading, σ) and
/// shared through `cache`; cell failures become marked rows.
pub fn sweep(case: &NetworkCase, grid: &SweepGrid, options: &SweepOptions, cache: &MsCache) -> Result<Vec<SweepRow>, EvalError> {
    if grid.loadings.is_empty() || grid.sigma_ratios.is_empty() || grid.eps.is_empty() || grid.policies.is_empty() {
        return Err(EvalError::InvalidGrid("every axis needs at least one value".into()));
    }
    for &e in &grid.eps {
        options.overrides.apply(e)?;
    }
    let mut settings = Vec::new();
    for &l in &grid.loadings {
        for &s in &grid.sigma_ratios {
            settings.push(prepare_experiment(
                case,
                l,
                s,
                options.uncertain_buses.as_deref(),
                options.samples,
                options.seed,
            )?);
        }
    }
    let truths = settings
        .par_iter()
        .map(|exp| cache.get_or_solve(exp, &options.ms))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for (k, _) in settings.iter().enumerate() {
        for &eps in &grid.eps {
            for &policy in &grid.policies {
                cells.push((k, eps, policy));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(k, eps, policy)| {
            let (exp, ms) = (&settings[k], &truths[k]);
            let spec = options.overrides.apply(eps).expect("validated above");
            let started = Instant::now();
            let solved = solve_cloud_opf(
                &exp.case,
                &exp.cloud,
                policy,
                &spec,
                options.fixed_alpha.as_deref(),
                &options.cloud,
            );
            let cloud_time = started.elapsed().as_secs_f64();
            let (status, cost, iters) = match &solved {
                Ok(s) => ("optimal", Some(s.expected_cost), Some(s.outer_iterations)),
                Err(e) => (status_of(e), None, None),
            };
            SweepRow {
                loading: exp.loading,
                sigma_ratio: exp.sigma_ratio,
                eps,
                policy: policy.letter(),
                seed: exp.seed,
                samples: exp.deviations.nrows(),
                status: status.to_string(),
                ms_mean_cost: ms.mean_cost,
                ms_infeasible: ms.infeasible_count,
                cloud_expected_cost: cost,
                relative_gap: cost.zip(ms.mean_cost).map(|(c, m)| relative_gap(c, m)),
                outer_iterations: iters,
                cloud_time,
                ms_time: ms.total_time,
            }
        })
        .collect();
    Ok(rows)
}

/// RFC 4180 rows with 12 significant digits; missing values are empty.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "loading",
        "sigma_ratio",
        "eps",
        "policy",
        "seed",
        "samples",
        "status",
        "ms_mean_cost",
        "ms_infeasible",
        "cloud_expected_cost",
        "relative_gap",
        "outer_iterations",
        "cloud_time_s",
        "ms_time_s",
    ])
    .expect("in-memory csv write");
    let opt = |x: Option<f64>| x.map(sig12).unwrap_or_default();
    for r in rows {
        w.write_record([
            sig12(r.loading),
            sig12(r.sigma_ratio),
            sig12(r.eps),
            r.policy.to_string(),
            r.seed.to_string(),
            r.samples.to_string(),
            r.status.clone(),
            opt(r.ms_mean_cost),
            r.ms_infeasible.to_string(),
            opt(r.cloud_expected_cost),
            opt(r.relative_gap),
            r.outer_iterations.map(|k| k.to_string()).unwrap_or_default(),
            sig12(r.cloud_time),
            sig12(r.ms_time),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

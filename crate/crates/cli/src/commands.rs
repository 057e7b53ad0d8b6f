use std::path::Path;
use std::time::Instant;

use cloudopf::cloud::{solve_cloud_opf, ChanceSpec, CloudOptions, CloudSolution};
use cloudopf::eval::{
    compare, out_of_sample_validate, prepare_experiment, representative_pair, sweep, sweep_csv, ClassOverrides, Experiment,
    MsCache, RunConfig, SweepGrid, SweepOptions, TimedCloud,
};
use cloudopf::ms::{solve_ms_opf, MsOptions};
use cloudopf::opf::{solve_ac_opf, Margins, OpfOptions, OpfSolution};
use cloudopf::report::sig12;
use cloudopf::uncertainty::{
    cloud_from_samples, default_uncertain_buses, gaussian_cloud, read_alpha_csv, read_samples_csv, sample_cloud,
    write_samples_csv, PolicyKind,
};
use cloudopf::{parse_matpower_case, NetworkCase, PfOptions};
use log::info;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{CaseArgs, ChanceArgs, CloudArgs, Command, CompareArgs, Format, MsArgs, Policy, SweepArgs, UncertaintyArgs, ValidateArgs};
use crate::output::{emit, json, table, LongTable};
use crate::Failure;

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::SolveOpf(a) => solve_opf_cmd(&a),
        Command::SolveCloud(a) => solve_cloud_cmd(&a),
        Command::SolveMs(a) => solve_ms_cmd(&a),
        Command::Validate(a) => validate_cmd(&a),
        Command::Compare(a) => compare_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_case(path: Option<&Path>) -> Result<NetworkCase, Failure> {
    let Some(p) = path else {
        return Ok(NetworkCase::ieee30());
    };
    let text = read(p)?;
    let case = if p.extension().is_some_and(|e| e == "json") {
        NetworkCase::from_json(&text)
    } else {
        parse_matpower_case(&text)
    };
    case.map_err(|e| Failure::input(format!("{}: {e}", p.display())))
}

fn kind(p: Policy) -> PolicyKind {
    match p {
        Policy::A => PolicyKind::FixedAlpha,
        Policy::B => PolicyKind::AlphaVector,
        Policy::C => PolicyKind::AlphaMatrix,
    }
}

fn overrides(p: Option<f64>, q: Option<f64>, v: Option<f64>, f: Option<f64>) -> ClassOverrides {
    ClassOverrides { p, q, v, f }
}

fn chance_spec(c: &ChanceArgs) -> Result<ChanceSpec, Failure> {
    overrides(c.eps_p, c.eps_q, c.eps_v, c.eps_line)
        .apply(c.eps)
        .map_err(Failure::input)
}

fn bus_indices(case: &NetworkCase, ids: Option<&[u32]>) -> Result<Option<Vec<usize>>, Failure> {
    ids.map(|ids| {
        ids.iter()
            .map(|&id| case.bus_index(id).ok_or_else(|| Failure::input(format!("unknown bus id {id}"))))
            .collect()
    })
    .transpose()
}

fn fixed_alpha(case: &NetworkCase, path: Option<&Path>) -> Result<Option<Vec<f64>>, Failure> {
    path.map(|p| read_alpha_csv(&read(p)?, case.generators.len()).map_err(|e| Failure::input(format!("{}: {e}", p.display()))))
        .transpose()
}

fn scaled(case: &NetworkCase, loading: f64) -> Result<NetworkCase, Failure> {
    case.scale_loading(loading).map_err(Failure::input)
}

/// Experiment from drawn samples, or from a deviation file relative to the
/// scaled case demand.
fn experiment(base: &NetworkCase, loading: f64, u: &UncertaintyArgs, samples: usize) -> Result<Experiment, Failure> {
    let buses = bus_indices(base, u.buses.as_deref())?;
    let Some(path) = &u.samples_file else {
        return Ok(prepare_experiment(base, loading, u.sigma_ratio, buses.as_deref(), samples, u.seed)?);
    };
    let case = scaled(base, loading)?;
    let (file_buses, w) = read_samples_csv(&case, &read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if buses.as_ref().is_some_and(|b| *b != file_buses) {
        return Err(Failure::input("--buses disagrees with the sample file header"));
    }
    let absolute = DMatrix::from_fn(w.nrows(), w.ncols(), |a, j| case.buses[file_buses[j]].pd + w[(a, j)]);
    let cloud = cloud_from_samples(&absolute, &file_buses).map_err(Failure::input)?;
    let deviations = DMatrix::from_fn(w.nrows(), w.ncols(), |a, j| absolute[(a, j)] - cloud.mean[j]);
    Ok(Experiment {
        case,
        loading,
        sigma_ratio: u.sigma_ratio,
        seed: u.seed,
        nominal: cloud.clone(),
        cloud,
        deviations,
    })
}

#[derive(Serialize)]
struct OpfReport<'a> {
    schema_version: u32,
    case: &'a str,
    loading: f64,
    solution: &'a OpfSolution,
}

fn solution_table(t: &mut LongTable, case: &NetworkCase, sol: &OpfSolution) {
    let gen_bus = |g: usize| case.buses[case.generators[g].bus].id;
    let bus_id = |i: usize| case.buses[i].id;
    t.series("pg", &sol.pg, gen_bus);
    t.series("qg", &sol.qg, gen_bus);
    t.series("v", &sol.v, bus_id);
    t.series("theta", &sol.theta, bus_id);
}

fn solve_opf_cmd(a: &CaseArgs) -> Result<(), Failure> {
    let case = scaled(&load_case(a.case.as_deref())?, a.loading)?;
    let sol = solve_ac_opf(&case, &Margins::zero(&case), &OpfOptions::default())?;
    info!("optimal cost {:.6} after {} iterations", sol.generation_cost, sol.iterations);
    let text = match a.format {
        Format::Json => json(&OpfReport {
            schema_version: 1,
            case: &case.name,
            loading: a.loading,
            solution: &sol,
        }),
        Format::Csv => {
            let mut t = LongTable::default();
            solution_table(&mut t, &case, &sol);
            t.push("generation_cost", None, None, sol.generation_cost);
            t.to_csv()
        }
    };
    emit(a.out.as_deref(), &text)
}

fn cloud_table(case: &NetworkCase, sol: &CloudSolution) -> String {
    let mut t = LongTable::default();
    solution_table(&mut t, case, &sol.base);
    for (g, row) in sol.policy.alpha.row_iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            t.push("alpha", Some(g), Some(case.buses[sol.uncertain_buses[j]].id), x);
        }
    }
    let gen_bus = |g: usize| case.buses[case.generators[g].bus].id;
    t.series("margin_p", &sol.margins.p, gen_bus);
    t.series("margin_q", &sol.margins.q, gen_bus);
    t.series("margin_v", &sol.margins.v, |i| case.buses[i].id);
    t.series("margin_f_from", &sol.margins.f_from, |l| case.buses[case.branches[l].from].id);
    t.series("margin_f_to", &sol.margins.f_to, |l| case.buses[case.branches[l].to].id);
    t.push("generation_cost", None, None, sol.base.generation_cost);
    t.push("cost_correction", None, None, sol.cost_correction);
    t.push("loss_correction", None, None, sol.loss_correction);
    t.push("expected_cost", None, None, sol.expected_cost);
    t.push("outer_iterations", None, None, sol.outer_iterations as f64);
    t.to_csv()
}

fn solve_cloud_cmd(a: &CloudArgs) -> Result<(), Failure> {
    let base = load_case(a.case.case.as_deref())?;
    let spec = chance_spec(&a.chance)?;
    let alpha = fixed_alpha(&base, a.policy.alpha_file.as_deref())?;
    let (case, cloud) = match (a.samples, &a.uncertainty.samples_file) {
        (None, None) => {
            let case = scaled(&base, a.case.loading)?;
            let buses = bus_indices(&case, a.uncertainty.buses.as_deref())?.unwrap_or_else(|| default_uncertain_buses(&case));
            let cloud = gaussian_cloud(&case, &buses, a.uncertainty.sigma_ratio).map_err(Failure::input)?;
            (case, cloud)
        }
        (m, _) => {
            let exp = experiment(&base, a.case.loading, &a.uncertainty, m.unwrap_or(0))?;
            (exp.case, exp.cloud)
        }
    };
    let sol = solve_cloud_opf(&case, &cloud, kind(a.policy.policy), &spec, alpha.as_deref(), &CloudOptions::default())?;
    info!("expected cost {:.6} after {} outer iterations", sol.expected_cost, sol.outer_iterations);
    let text = match a.case.format {
        Format::Json => json(&sol.report(&case)),
        Format::Csv => cloud_table(&case, &sol),
    };
    emit(a.case.out.as_deref(), &text)
}

#[derive(Serialize)]
struct MsReport<'a> {
    schema_version: u32,
    loading: f64,
    sigma_ratio: f64,
    seed: u64,
    uncertain_buses: Vec<u32>,
    solution: &'a cloudopf::MsSolution,
}

fn solve_ms_cmd(a: &MsArgs) -> Result<(), Failure> {
    let base = load_case(a.case.case.as_deref())?;
    let exp = experiment(&base, a.case.loading, &a.uncertainty, a.samples)?;
    if let Some(p) = &a.export_samples {
        // Relative to case demand, the reference `--samples-file` reads against.
        let buses = &exp.cloud.uncertain_buses;
        let w = DMatrix::from_fn(exp.deviations.nrows(), buses.len(), |a, j| {
            exp.cloud.mean[j] + exp.deviations[(a, j)] - exp.case.buses[buses[j]].pd
        });
        let text = write_samples_csv(&exp.case, buses, &w).map_err(Failure::input)?;
        emit(Some(p), &text)?;
    }
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, &MsOptions::default()).map_err(Failure::input)?;
    info!(
        "{} optimal, {} infeasible, {} failed in {:.2} s",
        ms.optimal_count, ms.infeasible_count, ms.failed_count, ms.total_time
    );
    let text = match a.case.format {
        Format::Json => json(&MsReport {
            schema_version: 1,
            loading: a.case.loading,
            sigma_ratio: exp.sigma_ratio,
            seed: exp.seed,
            uncertain_buses: exp.cloud.uncertain_buses.iter().map(|&b| exp.case.buses[b].id).collect(),
            solution: &ms,
        }),
        Format::Csv => ms.to_csv(exp.case.generators.len()),
    };
    emit(a.case.out.as_deref(), &text)
}

fn validate_cmd(a: &ValidateArgs) -> Result<(), Failure> {
    let base = load_case(a.case.case.as_deref())?;
    let spec = chance_spec(&a.chance)?;
    let alpha = fixed_alpha(&base, a.policy.alpha_file.as_deref())?;
    let exp = experiment(&base, a.case.loading, &a.uncertainty, a.samples)?;
    let sol = solve_cloud_opf(&exp.case, &exp.cloud, kind(a.policy.policy), &spec, alpha.as_deref(), &CloudOptions::default())?;
    let seed = a.holdout_seed.unwrap_or(a.uncertainty.seed.wrapping_add(1));
    let fresh = sample_cloud(&exp.nominal, a.holdout, seed).map_err(Failure::input)?;
    let w = DMatrix::from_fn(a.holdout, exp.cloud.sources(), |r, j| exp.nominal.mean[j] + fresh[(r, j)] - exp.cloud.mean[j]);
    let report = out_of_sample_validate(&exp.case, &exp.cloud, &sol, &w, &PfOptions::default())?;
    let text = match a.case.format {
        Format::Json => json(&report),
        Format::Csv => table(
            &["class", "constraints", "target_eps", "worst_frequency", "worst_constraint", "any_frequency", "std_error", "replayed", "pf_failures"],
            report.classes.iter().map(|c| {
                vec![
                    format!("{:?}", c.class),
                    c.constraints.to_string(),
                    sig12(c.target_eps),
                    sig12(c.worst_frequency),
                    c.worst_constraint.clone().unwrap_or_default(),
                    sig12(c.any_frequency),
                    sig12(c.std_error),
                    report.replayed.to_string(),
                    report.pf_failures.to_string(),
                ]
            }),
        ),
    };
    emit(a.case.out.as_deref(), &text)
}

fn compare_cmd(a: &CompareArgs) -> Result<(), Failure> {
    let base = load_case(a.case.case.as_deref())?;
    let spec = chance_spec(&a.chance)?;
    let alpha = fixed_alpha(&base, a.alpha_file.as_deref())?;
    let exp = experiment(&base, a.case.loading, &a.uncertainty, a.samples)?;
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, &MsOptions::default()).map_err(Failure::input)?;
    let policies = if a.policy.is_empty() { vec![Policy::A, Policy::B, Policy::C] } else { a.policy.clone() };
    let mut clouds = Vec::new();
    for p in policies {
        let started = Instant::now();
        let solution = solve_cloud_opf(&exp.case, &exp.cloud, kind(p), &spec, alpha.as_deref(), &CloudOptions::default())?;
        clouds.push(TimedCloud {
            solution,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    let pair = match &a.pair {
        Some(p) => Some((p[0], p[1])),
        None => representative_pair(&ms, exp.case.slack_generator()),
    };
    let config = RunConfig {
        case_name: exp.case.name.clone(),
        case_hash: exp.case.content_hash(),
        loading: exp.loading,
        sigma_ratio: exp.sigma_ratio,
        spec,
        seed: exp.seed,
        samples: exp.deviations.nrows(),
    };
    let report = compare(&ms, &clouds, &exp.deviations, pair, config)?;
    if let (Some(path), Some(text)) = (&a.scatter, report.scatter_csv()) {
        emit(Some(path), &text)?;
    }
    let text = match a.case.format {
        Format::Json => json(&report),
        Format::Csv => table(
            &["policy", "expected_cost", "ms_mean_cost", "relative_gap", "outer_iterations", "cloud_time_s", "ms_time_s"],
            report.entries.iter().map(|e| {
                vec![
                    e.policy.to_string(),
                    sig12(e.expected_cost),
                    sig12(report.ms_mean_cost),
                    sig12(e.relative_gap),
                    e.outer_iterations.to_string(),
                    sig12(e.wall_time),
                    sig12(report.ms_wall_time),
                ]
            }),
        ),
    };
    emit(a.case.out.as_deref(), &text)
}

#[derive(Serialize)]
struct SweepReport<'a> {
    schema_version: u32,
    rows: &'a [cloudopf::eval::SweepRow],
}

fn sweep_cmd(a: &SweepArgs) -> Result<(), Failure> {
    let base = load_case(a.case.as_deref())?;
    let grid = SweepGrid {
        loadings: a.loadings.clone(),
        sigma_ratios: a.sigma_ratios.clone(),
        eps: a.eps.clone(),
        policies: a.policies.iter().map(|&p| kind(p)).collect(),
    };
    let options = SweepOptions {
        samples: a.samples,
        seed: a.seed,
        uncertain_buses: bus_indices(&base, a.buses.as_deref())?,
        fixed_alpha: fixed_alpha(&base, a.alpha_file.as_deref())?,
        overrides: overrides(a.eps_p, a.eps_q, a.eps_v, a.eps_line),
        ..SweepOptions::default()
    };
    let cache = match &a.cache_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Failure::io(format!("{}: {e}", d.display())))?;
            MsCache::with_dir(d)
        }
        None => MsCache::in_memory(),
    };
    let rows = sweep(&base, &grid, &options, &cache)?;
    info!("{} sweep rows", rows.len());
    let text = match a.format {
        Format::Csv => sweep_csv(&rows),
        Format::Json => json(&SweepReport {
            schema_version: 1,
            rows: &rows,
        }),
    };
    emit(a.out.as_deref(), &text)
}

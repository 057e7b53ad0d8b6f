use std::sync::Arc;

use cloudopf::cloud::{solve_cloud_opf, ChanceSpec, CloudOptions};
use cloudopf::eval::{
    compare, line_angle_deg, out_of_sample_validate, prepare_experiment, principal_axes, relative_gap, sweep, sweep_csv,
    ClassOverrides, ConstraintClass, EvalError, MsCache, RunConfig, SweepGrid, SweepOptions, TimedCloud,
};
use cloudopf::ms::{solve_ms_opf, MsOptions};
use cloudopf::powerflow::PfOptions;
use cloudopf::uncertainty::{gaussian_cloud, sample_cloud, PolicyKind};
use cloudopf::NetworkCase;
use nalgebra::DMatrix;

fn config(exp: &cloudopf::eval::Experiment, spec: ChanceSpec) -> RunConfig {
    RunConfig {
        case_name: exp.case.name.clone(),
        case_hash: exp.case.content_hash(),
        loading: exp.loading,
        sigma_ratio: exp.sigma_ratio,
        spec,
        seed: exp.seed,
        samples: exp.deviations.nrows(),
    }
}

#[test]
fn zero_deviations_violate_nothing() {
    let case = NetworkCase::ieee30().scale_loading(0.95).unwrap();
    let buses = cloudopf::uncertainty::default_uncertain_buses(&case);
    let cloud = gaussian_cloud(&case, &buses, 0.0).unwrap();
    let sol = solve_cloud_opf(&case, &cloud, PolicyKind::FixedAlpha, &ChanceSpec::default(), None, &CloudOptions::default()).unwrap();
    let w = DMatrix::zeros(50, buses.len());
    let report = out_of_sample_validate(&case, &cloud, &sol, &w, &PfOptions::default()).unwrap();
    assert_eq!((report.replayed, report.pf_failures), (50, 0));
    for c in ConstraintClass::ALL {
        assert_eq!(report.class(c).worst_frequency, 0.0, "{c:?}");
        assert_eq!(report.class(c).any_frequency, 0.0, "{c:?}");
    }
}

#[test]
fn half_probability_on_a_binding_line_is_violated_about_half_the_time() {
    let case = NetworkCase::ieee30().scale_loading(0.95).unwrap();
    let buses = cloudopf::uncertainty::default_uncertain_buses(&case);
    let cloud = gaussian_cloud(&case, &buses, 0.03).unwrap();
    let spec = ChanceSpec::new(0.01, 0.01, 0.01, 0.5).unwrap();
    let sol = solve_cloud_opf(&case, &cloud, PolicyKind::FixedAlpha, &spec, None, &CloudOptions::default()).unwrap();
    let w = sample_cloud(&cloud, 4000, 11).unwrap();
    let report = out_of_sample_validate(&case, &cloud, &sol, &w, &PfOptions::default()).unwrap();
    let f = report.class(ConstraintClass::F);
    assert!((f.worst_frequency - 0.5).abs() < 0.1, "{f:?}");
    assert_eq!(f.target_eps, 0.5);
}

#[test]
fn compare_rejects_mismatched_inputs() {
    let exp = prepare_experiment(&NetworkCase::ieee30(), 0.8, 0.03, None, 10, 1).unwrap();
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, &MsOptions::default()).unwrap();
    let spec = ChanceSpec::default();
    let short = exp.deviations.rows(0, 9).into_owned();
    assert!(matches!(
        compare(&ms, &[], &short, None, config(&exp, spec)),
        Err(EvalError::ConfigMismatch(_))
    ));
    let mut wrong = config(&exp, spec);
    wrong.samples = 11;
    assert!(matches!(compare(&ms, &[], &exp.deviations, None, wrong), Err(EvalError::ConfigMismatch(_))));

    let other = prepare_experiment(&NetworkCase::ieee30(), 0.8, 0.03, Some(&[2, 3]), 10, 1).unwrap();
    let solution = solve_cloud_opf(&other.case, &other.cloud, PolicyKind::FixedAlpha, &spec, None, &CloudOptions::default()).unwrap();
    let clouds = [TimedCloud { solution, wall_time: 0.0 }];
    assert!(matches!(
        compare(&ms, &clouds, &exp.deviations, None, config(&exp, spec)),
        Err(EvalError::ConfigMismatch(_))
    ));
}

#[test]
fn one_cell_sweep_matches_a_direct_comparison() {
    let base = NetworkCase::ieee30();
    let (loading, sigma, samples, seed) = (0.8, 0.02, 30, 5);
    let options = SweepOptions { samples, seed, ..SweepOptions::default() };
    let grid = SweepGrid {
        loadings: vec![loading],
        sigma_ratios: vec![sigma],
        eps: vec![0.01],
        policies: vec![PolicyKind::AlphaVector],
    };
    let cache = MsCache::in_memory();
    let rows = sweep(&base, &grid, &options, &cache).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(cache.len(), 1);

    let exp = prepare_experiment(&base, loading, sigma, None, samples, seed).unwrap();
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, &MsOptions::default()).unwrap();
    let spec = ClassOverrides::default().apply(0.01).unwrap();
    let solution = solve_cloud_opf(&exp.case, &exp.cloud, PolicyKind::AlphaVector, &spec, None, &CloudOptions::default()).unwrap();
    let report = compare(&ms, &[TimedCloud { solution, wall_time: 0.0 }], &exp.deviations, None, config(&exp, spec)).unwrap();

    let row = &rows[0];
    assert_eq!(row.status, "optimal");
    assert_eq!(row.ms_mean_cost, Some(report.ms_mean_cost));
    assert_eq!(row.cloud_expected_cost, Some(report.entries[0].expected_cost));
    assert_eq!(row.relative_gap, Some(report.entries[0].relative_gap));
    assert_eq!(
        report.entries[0].relative_gap,
        relative_gap(report.entries[0].expected_cost, report.ms_mean_cost)
    );
}

#[test]
fn sweep_marks_failed_cells_and_keeps_going() {
    let grid = SweepGrid {
        loadings: vec![0.8, 1.02],
        sigma_ratios: vec![0.05],
        eps: vec![0.01],
        policies: vec![PolicyKind::FixedAlpha],
    };
    let options = SweepOptions { samples: 8, ..SweepOptions::default() };
    let rows = sweep(&NetworkCase::ieee30(), &grid, &options, &MsCache::in_memory()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].status, "optimal");
    assert_eq!(rows[1].status, "infeasible");
    assert_eq!(rows[1].relative_gap, None);
    let text = sweep_csv(&rows);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().contains("infeasible"));
}

#[test]
fn disk_cache_serves_an_identical_solution() {
    let dir = std::env::temp_dir().join(format!("cloudopf-cache-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let exp = prepare_experiment(&NetworkCase::ieee30(), 0.8, 0.02, None, 6, 9).unwrap();
    let opts = MsOptions::default();
    let first = MsCache::with_dir(&dir).get_or_solve(&exp, &opts).unwrap();
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
    let fresh = MsCache::with_dir(&dir);
    let second = fresh.get_or_solve(&exp, &opts).unwrap();
    assert_eq!(*first, *second);
    assert!(Arc::ptr_eq(&second, &fresh.get_or_solve(&exp, &opts).unwrap()));

    let other = prepare_experiment(&NetworkCase::ieee30(), 0.8, 0.02, None, 6, 10).unwrap();
    fresh.get_or_solve(&other, &opts).unwrap();
    assert_eq!(fresh.len(), 2);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn collinear_points_have_an_unbounded_axis_ratio() {
    let pts: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 2.0 * k as f64 + 1.0)).collect();
    let (ratio, dir) = principal_axes(&pts).unwrap();
    assert!(ratio > 1e6);
    assert!(line_angle_deg(dir, (1.0, 2.0)) < 1e-6);
    assert!((line_angle_deg((1.0, 0.0), (-1.0, 0.0))).abs() < 1e-12);
    assert!((line_angle_deg((1.0, 0.0), (0.0, 1.0)) - 90.0).abs() < 1e-12);
}

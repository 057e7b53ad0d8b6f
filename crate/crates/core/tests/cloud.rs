use cloudopf::cloud::{
    affine_dispatch, expected_cost_correction, solve_cloud_opf, uncertainty_margins, ChanceSpec, CloudError,
    CloudOptions, CloudReport,
};
use cloudopf::opf::{solve_ac_opf, Margins, OpfOptions};
use cloudopf::powerflow::{
    ac_power_flow, mismatch, sensitivity_basis, Demand, PfControls, PfOptions, SensitivityBundle, SensitivityRows,
};
use cloudopf::uncertainty::{default_uncertain_buses, gaussian_cloud, PolicyKind, ResponsePolicy, ScenarioCloud};
use cloudopf::{parse_matpower_case, NetworkCase};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

const ALL: [PolicyKind; 3] = [PolicyKind::FixedAlpha, PolicyKind::AlphaVector, PolicyKind::AlphaMatrix];

fn case_at(loading: f64) -> NetworkCase {
    NetworkCase::ieee30().scale_loading(loading).unwrap()
}

fn cloud_at(case: &NetworkCase, ratio: f64) -> ScenarioCloud {
    gaussian_cloud(case, &default_uncertain_buses(case), ratio).unwrap()
}

fn solve(case: &NetworkCase, cloud: &ScenarioCloud, kind: PolicyKind, spec: &ChanceSpec) -> cloudopf::CloudSolution {
    solve_cloud_opf(case, cloud, kind, spec, None, &CloudOptions::default()).unwrap()
}

const ONE_GEN: &str = "\
function mpc = one_gen
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0  0 0 1 1 0 135 1 1.1 0.9;
    2 1 50 20 0 0 1 1 0 135 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 100 -100 1.0 100 1 200 0;
];
mpc.branch = [
    1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.01 10 5;
];
";

#[test]
fn scalar_margin_matches_closed_form() {
    let case = parse_matpower_case(ONE_GEN).unwrap();
    let z = |r| DMatrix::zeros(r, 1);
    let bundle = SensitivityBundle {
        rows: SensitivityRows {
            v_pq: z(1),
            q_gen: z(1),
            p_slack: z(1),
            f_from: z(1),
            f_to: z(1),
        },
        delta_p: DMatrix::from_element(1, 1, 0.3),
        p_gen: z(1),
    };
    let alpha = DMatrix::from_element(1, 1, 0.2);
    let cov = DMatrix::from_element(1, 1, 0.01f64.powi(2));
    let m = uncertainty_margins(&case, &bundle, &alpha, &cov, &ChanceSpec::uniform(0.01).unwrap()).unwrap();
    let quantile = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.99);
    assert!((m.p[0] - quantile * 0.5 * 0.01).abs() < 1e-15);
    assert_eq!(m.q[0], 0.0);
    assert!(m.v.iter().all(|&x| x == 0.0));
}

fn margins_at(case: &NetworkCase, cloud: &ScenarioCloud, spec: &ChanceSpec) -> Margins {
    let sol = solve_ac_opf(case, &Margins::zero(case), &OpfOptions::default()).unwrap();
    let op = ac_power_flow(
        case,
        &PfControls { pg: sol.pg.clone(), v_set: sol.v.clone() },
        &Demand::of(case),
        &PfOptions::default(),
    )
    .unwrap();
    let basis = sensitivity_basis(case, &op, &cloud.uncertain_buses).unwrap();
    let alpha = ResponsePolicy::equal_shares(PolicyKind::FixedAlpha, case.generators.len(), cloud.sources()).alpha;
    uncertainty_margins(case, &basis.bundle(&alpha), &alpha, &cloud.cov, spec).unwrap()
}

#[test]
fn margins_follow_their_scaling_laws() {
    let case = case_at(0.8);
    let cloud = cloud_at(&case, 0.05);
    let spec = ChanceSpec::default();
    let base = margins_at(&case, &cloud, &spec);
    for t in [0.25, 4.0, 9.0] {
        let scaled = margins_at(&case, &cloud.scaled(t), &spec);
        for (a, b) in base.iter().zip(scaled.iter()) {
            assert!((b - t.sqrt() * a).abs() <= 1e-10, "t = {t}: {b} vs {a}");
        }
    }
    assert!(margins_at(&case, &cloud, &ChanceSpec::uniform(0.5).unwrap()).is_zero());
    let mut prev = margins_at(&case, &cloud, &ChanceSpec::uniform(0.05).unwrap());
    for eps in [0.04, 0.03, 0.02, 0.01] {
        let next = margins_at(&case, &cloud, &ChanceSpec::uniform(eps).unwrap());
        for (a, b) in prev.iter().zip(next.iter()) {
            assert!(*a == 0.0 && *b == 0.0 || b > a, "ε = {eps}");
        }
        prev = next;
    }
    assert!(prev.iter().filter(|&&x| x > 0.0).count() > 0);
}

/// Monte-Carlo mean of `Σ_g a_g (r_g · w)²`.
fn monte_carlo_correction(rows: &DMatrix<f64>, root: &DMatrix<f64>, cost_a: &[f64], draws: usize, seed: u64) -> f64 {
    let (ng, n) = rows.shape();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut total = 0.0;
    for _ in 0..draws {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..n {
            w[i] = (0..n).map(|k| root[(i, k)] * z[k]).sum();
        }
        for g in 0..ng {
            let dp: f64 = (0..n).map(|j| rows[(g, j)] * w[j]).sum();
            total += cost_a[g] * dp * dp;
        }
    }
    total / draws as f64
}

#[test]
fn cost_correction_matches_monte_carlo() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let (ng, n, slack) = (4, 3, 2);
    for instance in 0..6 {
        let mut alpha = DMatrix::from_fn(ng, n, |_, _| rng.random_range(0.05..1.0));
        for mut c in alpha.column_iter_mut() {
            let s = c.sum();
            c /= s;
        }
        let slack_row: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
        let cost_a: Vec<f64> = (0..ng).map(|_| rng.random_range(10.0..500.0)).collect();
        // even instances use a diagonal covariance, odd ones a full one
        let root = if instance % 2 == 0 {
            DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(0.005..0.05) } else { 0.0 })
        } else {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.03..0.03));
            cloudopf::uncertainty::psd_sqrt(&(&a * a.transpose())).unwrap()
        };
        let cov = &root * &root;
        let analytic = expected_cost_correction(&alpha, &slack_row, &cov, &cost_a, slack).unwrap();
        let mut rows = alpha.clone();
        for j in 0..n {
            rows[(slack, j)] += slack_row[j];
        }
        let mc = monte_carlo_correction(&rows, &root, &cost_a, 200_000, 100 + instance);
        assert!((mc - analytic).abs() <= 0.02 * analytic, "instance {instance}: {mc} vs {analytic}");
    }
}

#[test]
fn degenerate_cloud_reproduces_classical_optimum() {
    let case = case_at(0.8);
    let classical = solve_ac_opf(&case, &Margins::zero(&case), &OpfOptions::default()).unwrap();
    let cloud = cloud_at(&case, 0.0);
    for kind in ALL {
        let sol = solve(&case, &cloud, kind, &ChanceSpec::default());
        assert!(sol.margins.iter().all(|&m| m == 0.0));
        assert_eq!(sol.outer_iterations, 2);
        assert_eq!(sol.cost_correction, 0.0);
        let rel = (sol.expected_cost - classical.objective).abs() / classical.objective;
        assert!(rel <= 1e-6, "{kind:?}: {rel:e}");
    }
}

#[test]
fn policies_are_ordered_under_stress() {
    let case = case_at(0.95);
    let cloud = cloud_at(&case, 0.05);
    let spec = ChanceSpec::default();
    let cost = |k| solve(&case, &cloud, k, &spec).expected_cost;
    let (a, b, c) = (cost(PolicyKind::FixedAlpha), cost(PolicyKind::AlphaVector), cost(PolicyKind::AlphaMatrix));
    assert!(c <= b * (1.0 + 1e-6) && b <= a * (1.0 + 1e-6), "{a} {b} {c}");
    assert!(a > c, "the matrix policy should gain something under stress");
}

#[test]
fn solution_is_a_fixed_point_of_the_margin_map() {
    let case = case_at(0.95);
    let cloud = cloud_at(&case, 0.03);
    let spec = ChanceSpec::default();
    let options = CloudOptions::default();
    for kind in [PolicyKind::FixedAlpha, PolicyKind::AlphaMatrix] {
        let sol = solve(&case, &cloud, kind, &spec);
        let op = ac_power_flow(
            &case,
            &PfControls { pg: sol.base.pg.clone(), v_set: sol.base.v.clone() },
            &Demand::of(&case),
            &PfOptions::default(),
        )
        .unwrap();
        let basis = sensitivity_basis(&case, &op, &cloud.uncertain_buses).unwrap();
        let alpha = &sol.policy.alpha;
        let again = uncertainty_margins(&case, &basis.bundle(alpha), alpha, &cloud.cov, &spec).unwrap();
        let drift = again.max_abs_diff(&sol.margins);
        assert!(drift <= options.fixed_point_tol, "{kind:?}: drift {drift:e}");
        assert!(sol.expected_cost >= sol.base.generation_cost);
        assert!(sol.policy.check().is_ok());
        let last = sol.history.last().unwrap();
        assert_eq!(last.expected_cost, sol.expected_cost);
        assert_eq!(sol.history.len(), sol.outer_iterations);
    }
}

#[test]
fn affine_dispatch_replays_through_the_power_flow() {
    let case = case_at(0.8);
    let cloud = cloud_at(&case, 0.05);
    let sol = solve(&case, &cloud, PolicyKind::AlphaVector, &ChanceSpec::default());
    let n = cloud.sources();
    assert_eq!(affine_dispatch(&sol, &vec![0.0; n]).unwrap(), sol.base.pg);
    let w: Vec<f64> = cloud.sigma.iter().enumerate().map(|(j, s)| if j % 2 == 0 { *s } else { -0.5 * s }).collect();
    let pg = affine_dispatch(&sol, &w).unwrap();
    let total: f64 = w.iter().sum();
    let moved: f64 = pg.iter().zip(&sol.base.pg).map(|(a, b)| a - b).sum();
    assert!((moved - total).abs() < 1e-12);
    let demand = Demand::with_deviation(&case, &cloud.uncertain_buses, &w);
    let op = ac_power_flow(&case, &PfControls { pg, v_set: sol.base.v.clone() }, &demand, &PfOptions::default()).unwrap();
    assert!(op.converged);
    let r = mismatch(&case, &op.v, &op.theta, &op.pg, &op.qg, &demand).unwrap();
    assert!(r.iter().all(|x| x.abs() <= 1e-8));
    assert!(affine_dispatch(&sol, &[0.0]).is_err());
}

#[test]
fn report_serializes_with_schema_version() {
    let case = case_at(0.8);
    let cloud = cloud_at(&case, 0.01);
    let sol = solve(&case, &cloud, PolicyKind::AlphaMatrix, &ChanceSpec::default());
    let text = serde_json::to_string(&sol.report(&case)).unwrap();
    let back: CloudReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.schema_version, 1);
    assert_eq!(back.policy, 'c');
    assert_eq!(back, sol.report(&case));
    assert_eq!(back.alpha.len(), case.generators.len());
    assert_eq!(back.uncertain_buses.len(), cloud.sources());
}

#[test]
fn bad_inputs_are_rejected() {
    let case = case_at(0.8);
    let cloud = cloud_at(&case, 0.01);
    let spec = ChanceSpec::default();
    let opts = CloudOptions::default();
    let short = [0.5, 0.5];
    assert!(matches!(
        solve_cloud_opf(&case, &cloud, PolicyKind::FixedAlpha, &spec, Some(&short), &opts),
        Err(CloudError::DimensionMismatch(_))
    ));
    let unbalanced = vec![0.3; case.generators.len()];
    assert!(matches!(
        solve_cloud_opf(&case, &cloud, PolicyKind::FixedAlpha, &spec, Some(&unbalanced), &opts),
        Err(CloudError::Uncertainty(_))
    ));
    let mut broken = cloud.clone();
    broken.cov[(0, 0)] = -1.0;
    assert!(solve_cloud_opf(&case, &broken, PolicyKind::AlphaVector, &spec, None, &opts).is_err());
}

#[test]
fn excess_loading_reports_the_classical_stage() {
    let case = case_at(1.1);
    let cloud = cloud_at(&case, 0.01);
    match solve_cloud_opf(&case, &cloud, PolicyKind::FixedAlpha, &ChanceSpec::default(), None, &CloudOptions::default()) {
        Err(CloudError::Infeasible { iteration, margin_norm, .. }) => {
            assert_eq!(iteration, 0);
            assert_eq!(margin_norm, 0.0);
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn zero_covariance_is_a_fixed_point(loading in 0.7f64..1.0, k in 0usize..3) {
        let case = case_at(loading);
        let classical = solve_ac_opf(&case, &Margins::zero(&case), &OpfOptions::default()).unwrap();
        let sol = solve(&case, &cloud_at(&case, 0.0), ALL[k], &ChanceSpec::default());
        prop_assert!(sol.margins.is_zero());
        prop_assert!(sol.outer_iterations <= 2);
        prop_assert!((sol.expected_cost - classical.objective).abs() <= 1e-6 * classical.objective);
    }
}

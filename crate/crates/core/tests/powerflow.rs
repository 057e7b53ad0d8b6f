use cloudopf::powerflow::{sensitivity_basis, SensitivityBundle};
use cloudopf::{ac_power_flow, mismatch, sensitivity_matrices, Demand, NetworkCase, OperatingPoint, PfControls, PfOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;

const TIGHT: PfOptions = PfOptions { tol: 1e-13, max_iter: 50 };

fn uncertain(case: &NetworkCase) -> Vec<usize> {
    [7u32, 8, 21, 30].iter().map(|&id| case.bus_index(id).unwrap()).collect()
}

fn equal_alpha(ng: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_element(ng, n, 1.0 / ng as f64)
}

fn solve(case: &NetworkCase, controls: &PfControls, buses: &[usize], w: &[f64]) -> OperatingPoint {
    let demand = Demand::with_deviation(case, buses, w);
    let op = ac_power_flow(case, controls, &demand, &TIGHT).unwrap();
    assert!(op.converged, "mismatch {}", op.mismatch_norm);
    op
}

/// Power flow after moving source `j` by `h` with non-slack units following `alpha`.
fn perturbed(case: &NetworkCase, base: &PfControls, buses: &[usize], alpha: &DMatrix<f64>, j: usize, h: f64) -> OperatingPoint {
    let slack = case.slack_generator();
    let mut c = base.clone();
    for k in 0..case.generators.len() {
        if k != slack {
            c.pg[k] += alpha[(k, j)] * h;
        }
    }
    let mut w = vec![0.0; buses.len()];
    w[j] = h;
    solve(case, &c, buses, &w)
}

fn quantities(case: &NetworkCase, op: &OperatingPoint) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for i in case.pq_buses() {
        out.push((format!("V{}", case.buses[i].id), op.v[i]));
    }
    for (k, q) in op.qg.iter().enumerate() {
        out.push((format!("Q{k}"), *q));
    }
    out.push(("Pslack".into(), op.pg[case.slack_generator()]));
    for (l, f) in op.f_from().iter().enumerate() {
        out.push((format!("Ffr{l}"), *f));
    }
    for (l, f) in op.f_to().iter().enumerate() {
        out.push((format!("Fto{l}"), *f));
    }
    out
}

fn analytic_column(b: &SensitivityBundle, j: usize) -> Vec<f64> {
    let r = &b.rows;
    r.v_pq
        .column(j)
        .iter()
        .chain(r.q_gen.column(j).iter())
        .chain(r.p_slack.column(j).iter())
        .chain(r.f_from.column(j).iter())
        .chain(r.f_to.column(j).iter())
        .copied()
        .collect()
}

fn check_against_differences(alpha: &DMatrix<f64>) {
    let case = NetworkCase::ieee30();
    let buses = uncertain(&case);
    let controls = PfControls::default_for(&case);
    let base = solve(&case, &controls, &buses, &vec![0.0; buses.len()]);
    let bundle = sensitivity_matrices(&case, &base, &buses, alpha).unwrap();
    let h = 1e-5;
    for j in 0..buses.len() {
        let plus = quantities(&case, &perturbed(&case, &controls, &buses, alpha, j, h));
        let minus = quantities(&case, &perturbed(&case, &controls, &buses, alpha, j, -h));
        let an = analytic_column(&bundle, j);
        assert_eq!(an.len(), plus.len());
        for ((name, p), ((_, m), a)) in plus.iter().zip(minus.iter().zip(&an)) {
            let fd = (p - m) / (2.0 * h);
            let rel = (fd - a).abs() / a.abs().max(1e-3);
            assert!(rel < 1e-4, "source {j} {name}: analytic {a} fd {fd}");
        }
    }
}

#[test]
fn sensitivities_match_finite_differences_equal_participation() {
    let case = NetworkCase::ieee30();
    check_against_differences(&equal_alpha(case.generators.len(), 4));
}

#[test]
fn sensitivities_match_finite_differences_general_policy() {
    let case = NetworkCase::ieee30();
    let ng = case.generators.len();
    let alpha = DMatrix::from_fn(ng, 4, |g, j| ((g + 2 * j) % 5) as f64 * 0.1 + 0.02 * j as f64);
    check_against_differences(&alpha);
}

#[test]
fn generation_response_sums_to_one_plus_marginal_losses() {
    let case = NetworkCase::ieee30();
    let buses = uncertain(&case);
    let ng = case.generators.len();
    let alpha = equal_alpha(ng, buses.len());
    let controls = PfControls::default_for(&case);
    let base = solve(&case, &controls, &buses, &vec![0.0; buses.len()]);
    let bundle = sensitivity_matrices(&case, &base, &buses, &alpha).unwrap();
    let h = 1e-5;
    for j in 0..buses.len() {
        let loss = |s: f64| {
            let op = perturbed(&case, &controls, &buses, &alpha, j, s);
            let mut w = vec![0.0; buses.len()];
            w[j] = s;
            op.losses(&Demand::with_deviation(&case, &buses, &w))
        };
        let dloss = (loss(h) - loss(-h)) / (2.0 * h);
        let total: f64 = bundle.p_gen.column(j).iter().sum();
        assert!((total - (1.0 + dloss)).abs() < 1e-6, "source {j}: {total} vs {}", 1.0 + dloss);
        // with Σα = 1 the slack residual carries exactly the marginal losses
        assert!((bundle.delta_p[(0, j)] - dloss).abs() < 1e-6);
    }
}

#[test]
fn empty_uncertainty_set_gives_empty_bundle() {
    let case = NetworkCase::ieee30();
    let controls = PfControls::default_for(&case);
    let op = solve(&case, &controls, &[], &[]);
    let b = sensitivity_matrices(&case, &op, &[], &DMatrix::zeros(case.generators.len(), 0)).unwrap();
    assert_eq!(b.rows.v_pq.shape(), (case.pq_buses().len(), 0));
    assert_eq!(b.rows.f_from.shape(), (case.branches.len(), 0));
    assert_eq!(b.delta_p.shape(), (1, 0));
}

#[test]
fn bundle_dimensions_follow_classes() {
    let case = NetworkCase::ieee30();
    let buses = uncertain(&case);
    let op = solve(&case, &PfControls::default_for(&case), &buses, &[0.0; 4]);
    let basis = sensitivity_basis(&case, &op, &buses).unwrap();
    let b = basis.bundle(&equal_alpha(case.generators.len(), 4));
    assert_eq!(b.rows.v_pq.shape(), (24, 4));
    assert_eq!(b.rows.q_gen.shape(), (6, 4));
    assert_eq!(b.rows.p_slack.shape(), (1, 4));
    assert_eq!(b.rows.f_to.shape(), (41, 4));
    assert!(b.rows.f_from.iter().chain(b.rows.v_pq.iter()).all(|x| x.is_finite()));
}

#[test]
fn unconverged_point_is_rejected() {
    let case = NetworkCase::ieee30();
    let mut op = solve(&case, &PfControls::default_for(&case), &[], &[]);
    op.converged = false;
    assert!(sensitivity_basis(&case, &op, &[3]).is_err());
}

#[test]
fn small_load_change_moves_solution_a_little() {
    let case = NetworkCase::ieee30();
    let controls = PfControls::default_for(&case);
    let a = solve(&case, &controls, &[], &[]);
    let b = solve(&case, &controls, &[7], &[1e-6]);
    let dv = a.v.iter().zip(&b.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let dt = a.theta.iter().zip(&b.theta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(dv < 1e-5 && dt < 1e-5, "{dv} {dt}");
    assert!(dv + dt > 0.0);
}

#[test]
fn flows_are_consistent_with_state() {
    let case = NetworkCase::ieee30();
    let op = solve(&case, &PfControls::default_for(&case), &[], &[]);
    let adm = cloudopf::powerflow::BranchAdmittance::for_case(&case);
    let [pf, qf, pt, qt] = cloudopf::powerflow::branch_flows(&case, &adm, &op.v, &op.theta);
    for l in 0..case.branches.len() {
        assert!((pf[l] - op.p_fr[l]).abs() <= 1e-12);
        assert!((qf[l] - op.q_fr[l]).abs() <= 1e-12);
        assert!((pt[l] - op.p_to[l]).abs() <= 1e-12);
        assert!((qt[l] - op.q_to[l]).abs() <= 1e-12);
        let f = op.p_fr[l].powi(2) + op.q_fr[l].powi(2);
        assert!((f - op.f_from()[l]).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_points_satisfy_the_oracle(scale in 0.3f64..1.1, w in proptest::collection::vec(-0.05f64..0.05, 4)) {
        let case = NetworkCase::ieee30().scale_loading(scale).unwrap();
        let buses = uncertain(&case);
        let demand = Demand::with_deviation(&case, &buses, &w);
        let op = ac_power_flow(&case, &PfControls::default_for(&case), &demand, &PfOptions::default()).unwrap();
        prop_assert!(op.converged);
        prop_assert!(op.mismatch_norm <= 1e-8);
        let r = mismatch(&case, &op.v, &op.theta, &op.pg, &op.qg, &demand).unwrap();
        prop_assert!(r.iter().all(|x| x.abs() <= 1e-8));
        prop_assert_eq!(op.theta[case.slack], 0.0);
    }
}

use cloudopf::eval::prepare_experiment;
use cloudopf::ms::{compensated_sum, ms_dispatch_scatter, solve_ms_opf, MsError, MsOptions, SampleStatus};
use cloudopf::opf::{solve_ac_opf, Margins, OpfOptions};
use cloudopf::powerflow::{ac_power_flow, Demand, PfControls, PfOptions};
use cloudopf::NetworkCase;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn demand_of(case: &NetworkCase, buses: &[usize], absolute: &[f64]) -> Demand {
    let mut d = Demand::of(case);
    for (&b, &x) in buses.iter().zip(absolute) {
        d.pd[b] = x;
    }
    d
}

#[test]
fn single_zero_deviation_is_the_classical_optimum() {
    let exp = prepare_experiment(&NetworkCase::ieee30(), 0.9, 0.05, None, 2, 7).unwrap();
    let zero = DMatrix::zeros(1, exp.cloud.sources());
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &zero, &MsOptions::default()).unwrap();
    assert_eq!(ms.optimal_count, 1);

    let mut shifted = exp.case.clone();
    for (&b, &m) in exp.cloud.uncertain_buses.iter().zip(&exp.cloud.mean) {
        shifted.buses[b].pd = m;
    }
    let det = solve_ac_opf(&shifted, &Margins::zero(&shifted), &OpfOptions::default()).unwrap();
    let cost = ms.mean_cost.unwrap();
    assert!((cost - det.generation_cost).abs() <= 1e-7 * det.generation_cost, "{cost} vs {}", det.generation_cost);
}

#[test]
fn every_optimal_sample_is_an_ac_operating_point() {
    let exp = prepare_experiment(&NetworkCase::ieee30(), 0.95, 0.05, None, 40, 3).unwrap();
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, &MsOptions::default()).unwrap();
    assert_eq!(ms.optimal_count, 40);
    let slack = exp.case.slack_generator();
    for (a, s) in ms.samples.iter().enumerate() {
        let absolute: Vec<f64> = (0..exp.cloud.sources()).map(|j| exp.cloud.mean[j] + exp.deviations[(a, j)]).collect();
        let demand = demand_of(&exp.case, &exp.cloud.uncertain_buses, &absolute);
        let controls = PfControls { pg: s.pg.clone(), v_set: s.v.clone() };
        let op = ac_power_flow(&exp.case, &controls, &demand, &PfOptions::default()).unwrap();
        assert!((op.pg[slack] - s.pg[slack]).abs() <= 1e-6, "sample {a}: slack {} vs {}", op.pg[slack], s.pg[slack]);
        for (x, y) in op.v.iter().zip(&s.v) {
            assert!((x - y).abs() <= 1e-6, "sample {a}");
        }
        for (g, gen) in exp.case.generators.iter().enumerate() {
            assert!(s.pg[g] >= gen.pmin - 1e-6 && s.pg[g] <= gen.pmax + 1e-6);
        }
    }
}

#[test]
fn overloaded_samples_are_marked_not_dropped() {
    let exp = prepare_experiment(&NetworkCase::ieee30(), 1.0, 0.05, None, 3, 1).unwrap();
    let mut w = exp.deviations.clone();
    w.row_mut(1).fill(0.5);
    let ms = solve_ms_opf(&exp.case, &exp.cloud, &w, &MsOptions::default()).unwrap();
    assert_eq!(ms.samples.len(), 3);
    assert_eq!(ms.samples[1].status, SampleStatus::Infeasible);
    assert_eq!(ms.samples[1].objective, None);
    assert_eq!(ms.optimal_count + ms.infeasible_count + ms.failed_count, 3);
    let optimal: Vec<f64> = ms.samples.iter().filter_map(|s| s.objective).collect();
    assert_eq!(ms.mean_cost, Some(compensated_sum(optimal.iter().copied()) / optimal.len() as f64));
    assert!(ms_dispatch_scatter(&ms, 6, (1, 3)).unwrap().len() == ms.optimal_count);
}

#[test]
fn mismatched_columns_are_rejected() {
    let exp = prepare_experiment(&NetworkCase::ieee30(), 0.8, 0.05, None, 2, 1).unwrap();
    let w = DMatrix::zeros(2, exp.cloud.sources() + 1);
    assert!(matches!(
        solve_ms_opf(&exp.case, &exp.cloud, &w, &MsOptions::default()),
        Err(MsError::DimensionMismatch(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn sample_order_does_not_change_the_mean(seed in 0u64..1000, shift in 1usize..11) {
        let exp = prepare_experiment(&NetworkCase::ieee30(), 0.8, 0.03, None, 12, seed).unwrap();
        let n = exp.deviations.nrows();
        let rotated = DMatrix::from_fn(n, exp.deviations.ncols(), |a, j| exp.deviations[((a + shift) % n, j)]);
        let opts = MsOptions::default();
        let a = solve_ms_opf(&exp.case, &exp.cloud, &exp.deviations, &opts).unwrap();
        let b = solve_ms_opf(&exp.case, &exp.cloud, &rotated, &opts).unwrap();
        let (x, y) = (a.mean_cost.unwrap(), b.mean_cost.unwrap());
        prop_assert!((x - y).abs() <= 1e-9 * x, "{} vs {}", x, y);
        for k in 0..n {
            prop_assert_eq!(&a.samples[(k + shift) % n].status, &b.samples[k].status);
        }
    }
}

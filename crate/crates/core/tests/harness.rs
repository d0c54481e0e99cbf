use std::fs::File;

use nalgebra::dvector;
use ogd_bzc::harness::*;
use ogd_bzc::ogd::{AdversaryView, DisturbanceSource, FixedCost, RunError, RunOptions};
use ogd_bzc::{LtiError, Vector};
use proptest::prelude::*;

struct Inflated(f64);

impl DisturbanceSource for Inflated {
    fn next(&mut self, view: &AdversaryView<'_>) -> Vector {
        Vector::from_element(view.x.len(), 10.0 * self.0)
    }
}

#[test]
fn oversized_disturbance_is_an_error_not_a_silent_violation() {
    let exp = Experiment::toy();
    let ctrl = exp.controller(20).unwrap();
    let mut costs = FixedCost(exp.cost.clone());
    let err = ctrl.run(20, &mut costs, &mut Inflated(exp.sys.w_bar()), RunOptions::default()).unwrap_err();
    assert!(matches!(err, RunError::Lti(LtiError::DisturbanceTooLarge { .. })), "{err:?}");
}

#[test]
fn regret_csv_recomputes_exactly() {
    let text = TOY_CONFIG.replacen("step = 0.02", "step = 0.1", 1);
    let exp = Experiment::from_toml(&text).unwrap();
    let report = regret_curve(&exp, &[10, 25], &DisturbanceSpec::Constant { value: None }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig2.csv");
    write_regret_csv(File::create(&path).unwrap(), "# test\n", &report).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    let mut rows = body.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut seen = 0;
    for (row, entry) in rows.zip(&report.entries) {
        let f: Vec<&str> = row.split(',').collect();
        let get = |name: &str| f[col(name)].parse::<f64>().unwrap();
        assert_eq!(get("alg_cost") - get("bench_cost"), get("regret"));
        assert_eq!(get("regret"), entry.regret);
        assert_eq!(get("avg_regret"), entry.regret / entry.horizon as f64);
        seen += 1;
    }
    assert_eq!(seen, 2);
    for e in &report.entries {
        // the benchmark can only be cheaper than or equal to the algorithm plus its regret
        assert!(e.bench_cost <= e.alg_cost - e.regret + 1e-12);
        assert!(e.k_star_safe);
    }
}

#[test]
fn benchmark_converges_under_grid_refinement() {
    let exp = Experiment::toy();
    let trace = exp.run_with(30, &DisturbanceSpec::Constant { value: None }, 0, RunOptions::default()).unwrap();
    let ws = trace.disturbances();
    let coarse = best_safe_linear(&exp.sys, &exp.spec, &trace.costs, &ws, &GridSpec::default()).unwrap();
    let fine_grid = GridSpec { step: 0.01, ..GridSpec::default() };
    let fine = best_safe_linear(&exp.sys, &exp.spec, &trace.costs, &ws, &fine_grid).unwrap();
    assert!(fine.total_cost <= coarse.total_cost + 1e-12);
    assert!((coarse.total_cost - fine.total_cost) / fine.total_cost < 0.01, "{} vs {}", coarse.total_cost, fine.total_cost);
    assert!(coarse.trajectory_safe && fine.trajectory_safe);
    assert!(coarse.removed_unstable > 0 && coarse.removed_unsafe > 0);
}

#[test]
fn short_fuzz_is_clean() {
    let exp = Experiment::toy();
    let s = safety_fuzz(&exp, 3, 60).unwrap();
    assert_eq!(s.runs, 12);
    assert!(s.clean(), "{:?}", s.violations);
    assert!(s.within_bounds());
    for r in &s.regimes {
        assert_eq!(r.runs, 3);
        assert!(r.min_state_margin.unwrap() >= 0.0);
        assert!(r.min_input_margin.unwrap() >= 0.0);
    }
}

#[test]
fn reproduce_writes_scripts_next_to_data() {
    let exp = Experiment::toy();
    let dir = tempfile::tempdir().unwrap();
    let files = reproduce(&exp, Figure::Fig1b, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    assert!(files.iter().all(|f| f.exists()));
    let text = std::fs::read_to_string(&files[0]).unwrap();
    // 31 states for each of the two controllers
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 31);
}

#[test]
fn boundary_distance_on_basic_sets() {
    let ball = ogd_bzc::ConvexSet::l2_ball(dvector![0.0, 0.0], 1.0).unwrap();
    assert_eq!(boundary_distance(&ball, &dvector![0.6, 0.0]), Some(0.4));
    let bx = ogd_bzc::ConvexSet::new_box(dvector![-1.0, -2.0], dvector![1.0, 0.5]).unwrap();
    assert_eq!(boundary_distance(&bx, &dvector![0.0, 0.0]), Some(0.5));
    assert!(boundary_distance(&ball.shrink(0.1, ogd_bzc::NormTag::LInf).unwrap(), &dvector![0.0, 0.0]).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fuzz_regimes_respect_the_bound(seed in 0u64..1_000_000, w_bar in 0.01..2.0f64) {
        for spec in fuzz_regimes(seed, 3, w_bar) {
            if let DisturbanceSpec::Constant { value: Some(v) } = &spec {
                let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                prop_assert!(m <= w_bar);
                prop_assert!(m >= w_bar * (1.0 - 1e-12));
            }
            prop_assert!(DisturbanceStream::new(&spec, 3, w_bar, seed).is_ok());
        }
    }
}

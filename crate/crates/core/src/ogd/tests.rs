use super::*;
use crate::geometry::ConvexSet;
use crate::lti::{certify_linear_policy_safety, certify_strong_stability};
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;

struct Toy {
    sys: LtiSystem,
    spec: SafetySpec,
    base: StabilityCertificate,
    eps_star: f64,
}

fn toy() -> Toy {
    let sys = LtiSystem::new(dmatrix![1.0, 1.0; 0.0, 0.5], dmatrix![1.0; 1.0], 0.3).unwrap();
    let spec = SafetySpec::new(
        &sys,
        ConvexSet::l2_ball(dvector![0.0, 0.0], 1.0).unwrap(),
        ConvexSet::l2_ball(dvector![0.0], 1.0).unwrap(),
    )
    .unwrap();
    let base = certify_strong_stability(&sys, &dmatrix![0.66, 0.84]).unwrap();
    let eps_star = certify_linear_policy_safety(&sys, &base, &spec).unwrap().unwrap();
    Toy { sys, spec, base, eps_star }
}

struct Alternating;

impl DisturbanceSource for Alternating {
    fn next(&mut self, view: &AdversaryView<'_>) -> Vector {
        let s = if (view.t / 4) % 2 == 0 { 0.3 } else { -0.3 };
        dvector![s, -s]
    }
}

#[test]
fn quadratic_growth_constant() {
    let c = QuadraticCost::identity(2, 1);
    assert_eq!(c.growth_constant(0.5), 2.0);
    assert_eq!(c.growth_constant(3.0), 6.0);
    assert!(QuadraticCost::new(dmatrix![1.0, 2.0; 0.0, 1.0], dmatrix![1.0]).is_err());
    assert!(QuadraticCost::new(dmatrix![-1.0], dmatrix![1.0]).is_err());
}

#[test]
fn experiment_schedule_values() {
    let t = toy();
    let consts = ProblemConstants::new(&t.sys, &t.base, &t.base);
    let cost = QuadraticCost::identity(2, 1);
    let p = select_parameters(&consts, &cost, 10.0, 100, Schedule::Experiment).unwrap();
    let ln = 100f64.ln();
    assert_eq!(p.h, 4);
    assert_eq!(p.epsilon, ln / 10.0);
    assert_eq!(p.eta, 1.0 / (10.0 * ln));
    assert!(!p.epsilon_capped);
    let capped = select_parameters(&consts, &cost, t.eps_star, 100, Schedule::Experiment).unwrap();
    assert!(capped.epsilon_capped);
    assert_eq!(capped.epsilon, 0.5 * t.eps_star);
}

#[test]
fn experiment_schedule_clamps_tiny_horizons() {
    let t = toy();
    let consts = ProblemConstants::new(&t.sys, &t.base, &t.base);
    let cost = QuadraticCost::identity(2, 1);
    for horizon in [1, 2] {
        let p = select_parameters(&consts, &cost, 10.0, horizon, Schedule::Experiment).unwrap();
        assert_eq!(p.h, 1);
        assert!(p.eta.is_finite() && p.eta > 0.0);
    }
    assert_eq!(
        select_parameters(&consts, &cost, 10.0, 0, Schedule::Experiment),
        Err(ParamError::ZeroHorizon)
    );
}

#[test]
fn theorem_schedule_reports_empty_window() {
    let t = toy();
    let consts = ProblemConstants::new(&t.sys, &t.base, &t.base);
    let cost = QuadraticCost::identity(2, 1);
    let err = select_parameters(&consts, &cost, t.eps_star, 1000, Schedule::Theorem).unwrap_err();
    assert!(matches!(err, ParamError::WindowViolated { .. }));
}

#[test]
fn theorem_schedule_on_deadbeat_plant() {
    // A - B K = 0: gamma = 1, kappa = 1, so eps1 = eps3 = 0 and H = 1
    let sys = LtiSystem::new(dmatrix![0.5], dmatrix![1.0], 1e-3).unwrap();
    let base = certify_strong_stability(&sys, &dmatrix![0.5]).unwrap();
    let consts = ProblemConstants::new(&sys, &base, &base);
    let cost = QuadraticCost::identity(1, 1);
    let p = select_parameters(&consts, &cost, 0.5, 100, Schedule::Theorem).unwrap();
    assert_eq!(p.h, 1);
    assert_eq!((p.eps1, p.eps3), (0.0, 0.0));
    assert_eq!(p.eta, 1.0 / (100f64).sqrt());
    assert_eq!(p.epsilon, p.eps2);
    assert!(p.epsilon < 0.25);
}

#[test]
fn theorem_memory_formula() {
    let sys = LtiSystem::new(dmatrix![0.5], dmatrix![1.0], 1e-4).unwrap();
    let base = certify_strong_stability(&sys, &dmatrix![0.0]).unwrap();
    let consts = ProblemConstants::new(&sys, &base, &base);
    let (c1, c3) = consts.c1_c3();
    assert!((c1 - 1e-4 * (2.0 + 4.0 + 2.0) / 0.5).abs() < 1e-15);
    assert_eq!(c3, 2e-4);
    let cost = QuadraticCost::identity(1, 1);
    // regret term dominates the class term log(2) / log(2) = 1
    let p = select_parameters(&consts, &cost, 0.01, 50, Schedule::Theorem).unwrap();
    let expect = ((8.0 * c1 * 50.0 + 4.0 * c3) / 0.01).ln() / 2f64.ln();
    assert!(expect > 1.0);
    assert_eq!(p.h, expect.ceil() as usize);
    // with a loose target the class term takes over
    let p = select_parameters(&consts, &cost, 0.9, 50, Schedule::Theorem).unwrap();
    assert_eq!(p.h, 1);
}

#[test]
fn manual_schedule_validates() {
    let t = toy();
    let consts = ProblemConstants::new(&t.sys, &t.base, &t.base);
    let cost = QuadraticCost::identity(2, 1);
    assert!(select_parameters(&consts, &cost, 1.0, 10, Schedule::Manual { h: 0, eta: 0.1, epsilon: 0.0 }).is_err());
    assert!(
        select_parameters(&consts, &cost, 1.0, 10, Schedule::Manual { h: 2, eta: -0.1, epsilon: 0.0 }).is_err()
    );
    let p = select_parameters(&consts, &cost, 1.0, 10, Schedule::Manual { h: 2, eta: 0.1, epsilon: 0.05 }).unwrap();
    assert_eq!((p.h, p.eta, p.epsilon), (2, 0.1, 0.05));
}

#[test]
fn bounds_formulas() {
    let t = toy();
    let consts = ProblemConstants::new(&t.sys, &t.base, &t.base);
    let cost = QuadraticCost::identity(2, 1);
    let b = consts.bounds(3, &cost);
    let (w, k, g, kb, a) = (0.3, consts.kappa, consts.gamma, consts.kappa_b, consts.a());
    let c = k * k * (1.0 - g).powi(3);
    if c < 1.0 {
        let bx = w * 2f64.sqrt() * (k * k + a * k * k * kb * 3.0) / ((1.0 - c) * g);
        assert!((b.b_x.unwrap() - bx).abs() <= 1e-12 * bx);
        assert!((b.b_u.unwrap() - (k * bx + w * 2f64.sqrt() * a / g)).abs() <= 1e-12 * bx);
    } else {
        assert!(b.b_x.is_none());
    }
    assert_eq!(b.delta, 2.0 * a / g);
}

fn fd_check(cost: &dyn CostFunction, seed: u64) {
    let t = toy();
    let model = DacModel::new(&t.sys, &t.base, 3).unwrap();
    let mut hist = DisturbanceHistory::new(2, 6);
    let mut s = seed | 1;
    let mut rnd = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    for _ in 0..6 {
        hist.push(dvector![0.3 * rnd(), 0.3 * rnd()]);
    }
    let w = DacWeights::from_blocks((0..3).map(|_| Matrix::from_fn(1, 2, |_, _| rnd())).collect()).unwrap();
    let g = approx_cost_gradient(&model, &w, &hist, cost);
    let h = 1e-6;
    let mut flat = w.to_flat();
    let mut fd = Vector::zeros(flat.len());
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + h;
        let up = surrogate_cost(&model, &DacWeights::from_flat(3, 1, 2, flat.as_slice()).unwrap(), &hist, cost);
        flat[i] = orig - h;
        let down = surrogate_cost(&model, &DacWeights::from_flat(3, 1, 2, flat.as_slice()).unwrap(), &hist, cost);
        flat[i] = orig;
        fd[i] = (up - down) / (2.0 * h);
    }
    let err = (&g.to_flat() - &fd).norm() / fd.norm().max(1e-8);
    assert!(err <= 1e-5, "relative error {err}");
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..10 {
        fd_check(&QuadraticCost::identity(2, 1), seed);
        fd_check(&SmoothedHingeCost { threshold: 0.05, smoothing: 0.5, dims: 3 }, seed + 100);
    }
}

#[test]
fn gradient_is_zero_without_history() {
    let t = toy();
    let model = DacModel::new(&t.sys, &t.base, 2).unwrap();
    let hist = DisturbanceHistory::new(2, 4);
    let w = DacWeights::from_blocks(vec![dmatrix![0.1, 0.2], dmatrix![-0.1, 0.3]]).unwrap();
    let g = approx_cost_gradient(&model, &w, &hist, &QuadraticCost::identity(2, 1));
    assert_eq!(g.norm(), 0.0);
}

#[test]
fn hinge_cost_is_smooth_and_flat_inside() {
    let c = SmoothedHingeCost { threshold: 0.2, smoothing: 0.1, dims: 3 };
    assert_eq!(c.value(&dvector![0.1, -0.2], &dvector![0.0]), 0.0);
    assert!((c.value(&dvector![0.25, 0.0], &dvector![0.0]) - 0.05 * 0.05 / 0.2).abs() < 1e-15);
    assert!((c.value(&dvector![0.0, -0.5], &dvector![0.0]) - (0.3 - 0.05)).abs() < 1e-15);
    assert_eq!(c.grad(&dvector![0.0, -0.5], &dvector![0.0]).0, dvector![0.0, -1.0]);
}

struct Recording {
    seen: Vec<(usize, Vector)>,
}

impl CostStream for Recording {
    fn reveal(&mut self, c: &Commitment<'_>) -> Arc<dyn CostFunction> {
        self.seen.push((c.t(), c.input().clone()));
        Arc::new(QuadraticCost::identity(2, 1))
    }
}

fn controller(t: &Toy, horizon: usize) -> OgdBzc {
    let consts = ProblemConstants::new(&t.sys, &t.base, &t.base);
    let cost = QuadraticCost::identity(2, 1);
    let params = select_parameters(&consts, &cost, t.eps_star, horizon, Schedule::Experiment).unwrap();
    OgdBzc::new(&t.sys, &t.base, &t.base, &t.spec, params, &cost).unwrap()
}

#[test]
fn costs_are_revealed_after_the_input_is_committed() {
    let t = toy();
    let c = controller(&t, 40);
    let mut costs = Recording { seen: Vec::new() };
    let trace = c.run(40, &mut costs, &mut Alternating, RunOptions::default()).unwrap();
    assert_eq!(costs.seen.len(), 40);
    for ((step, u), rec) in costs.seen.iter().zip(&trace.steps) {
        assert_eq!(*step, rec.t);
        assert_eq!(u.as_slice(), rec.u.as_slice());
    }
}

#[test]
fn run_is_safe_and_deterministic() {
    let t = toy();
    let c = controller(&t, 60);
    let cost: Arc<dyn CostFunction> = Arc::new(QuadraticCost::identity(2, 1));
    let opts = RunOptions { record_weights: true, enforce_bounds: true };
    let a = c.run(60, &mut FixedCost(cost.clone()), &mut Alternating, opts).unwrap();
    let b = c.run(60, &mut FixedCost(cost), &mut Alternating, opts).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.weights, b.weights);
    assert!(a.steps.iter().all(|s| s.safe_x && s.safe_u));
    assert!(a.disturbance_warnings.is_empty());
    // slow motion: ||M_{t+1} - M_t|| <= eta * ||grad||, up to the projection's slack
    for s in &a.steps {
        assert!(s.step_norm <= c.params().eta * s.grad_norm * 2.0 + 1e-12);
    }
    // first step has no history, so the weights stay at the seed
    assert_eq!(a.weights[1], a.seed_weights);
}

#[test]
fn replayed_weights_reproduce_inputs() {
    let t = toy();
    let c = controller(&t, 30);
    let cost: Arc<dyn CostFunction> = Arc::new(QuadraticCost::identity(2, 1));
    let opts = RunOptions { record_weights: true, enforce_bounds: true };
    let trace = c.run(30, &mut FixedCost(cost), &mut Alternating, opts).unwrap();
    let model = c.safe_set().model();
    let mut hist = DisturbanceHistory::new(2, 2 * model.memory());
    for (s, rec) in trace.steps.iter().zip(&trace.weights) {
        let w = DacWeights::from_record(rec).unwrap();
        let u = model.control_input(&w, &Vector::from_vec(s.x.clone()), &hist);
        assert_eq!(u.as_slice(), s.u.as_slice());
        let x = Vector::from_vec(s.x.clone());
        let next = t.sys.step(&x, &u, &Vector::from_vec(s.w.clone())).unwrap();
        hist.push(t.sys.recover_disturbance(&x, &u, &next).unwrap().w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn runs_stay_safe_under_random_disturbances(seed in 0u64..1_000_000) {
        struct Lcg(u64);
        impl DisturbanceSource for Lcg {
            fn next(&mut self, _v: &AdversaryView<'_>) -> Vector {
                let mut draw = || {
                    self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    0.3 * (((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
                };
                dvector![draw(), draw()]
            }
        }
        let t = toy();
        let c = controller(&t, 50);
        let cost: Arc<dyn CostFunction> = Arc::new(QuadraticCost::identity(2, 1));
        let trace = c.run(50, &mut FixedCost(cost), &mut Lcg(seed), RunOptions::default()).unwrap();
        prop_assert!(trace.steps.iter().all(|s| s.safe_x && s.safe_u));
    }
}

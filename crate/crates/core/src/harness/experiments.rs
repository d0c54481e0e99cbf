use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::benchmark::{best_on_grid, safe_linear_grid, Benchmark};
use super::config::Experiment;
use super::disturbance::{AdaptiveStrategy, DisturbanceSpec};
use super::{HarnessError, Result};
use crate::dac::DacWeights;
use crate::geometry::ConvexSet;
use crate::safe_set::SafePolicySet;
use crate::ogd::{RunError, RunOptions, RunTrace, TheoreticalBounds};
use crate::Vector;

/// Horizons of the regret curve.
pub const REGRET_HORIZONS: [usize; 4] = [30, 100, 300, 1000];

#[derive(Debug, Clone, Serialize)]
pub struct RegretEntry {
    pub horizon: usize,
    pub h: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub alg_cost: f64,
    pub bench_cost: f64,
    /// `alg_cost - bench_cost`
    pub regret: f64,
    pub avg_regret: f64,
    /// Row-major entries of the best grid gain.
    pub k_star: Vec<f64>,
    pub k_star_safe: bool,
    pub max_state_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegretReport {
    pub entries: Vec<RegretEntry>,
    pub grid_step: f64,
    pub safe_points: usize,
    pub total_points: usize,
    pub removed_unstable: usize,
    pub removed_unsafe: usize,
}

impl RegretReport {
    pub fn non_increasing(&self) -> bool {
        self.entries.windows(2).all(|p| p[1].avg_regret <= p[0].avg_regret)
    }
}

fn regret_entry(trace: &RunTrace, bench: &Benchmark) -> RegretEntry {
    let horizon = trace.steps.len();
    let alg_cost = trace.total_cost();
    let regret = alg_cost - bench.total_cost;
    RegretEntry {
        horizon,
        h: trace.params.h,
        eta: trace.params.eta,
        epsilon: trace.params.epsilon,
        alg_cost,
        bench_cost: bench.total_cost,
        regret,
        avg_regret: regret / horizon as f64,
        k_star: bench.k_star.transpose().as_slice().to_vec(),
        k_star_safe: bench.trajectory_safe,
        max_state_norm: trace.max_state_norm(),
    }
}

/// Runs OGD-BZC for each horizon and compares it with the best safe grid gain
/// on the same disturbances and costs.
pub fn regret_curve(exp: &Experiment, horizons: &[usize], disturbance: &DisturbanceSpec) -> Result<RegretReport> {
    if horizons.windows(2).any(|p| p[1] <= p[0]) {
        return Err(HarnessError::Config("regret horizons must be strictly increasing".into()));
    }
    let grid = safe_linear_grid(&exp.sys, &exp.spec, &exp.config.benchmark)?;
    let entries = horizons
        .par_iter()
        .map(|&t| -> Result<RegretEntry> {
            let trace = exp.run_with(t, disturbance, exp.config.seed, RunOptions::default())?;
            let bench = best_on_grid(&exp.sys, &exp.spec, &trace.costs, &trace.disturbances(), &grid)?;
            Ok(regret_entry(&trace, &bench))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretReport {
        entries,
        grid_step: grid.step,
        safe_points: grid.gains.len(),
        total_points: grid.total,
        removed_unstable: grid.removed_unstable,
        removed_unsafe: grid.removed_unsafe,
    })
}

/// Signed distance from `x` to the boundary of `set`, positive inside.
/// `None` for the implicit (shrunk or expanded) variants.
pub fn boundary_distance(set: &ConvexSet, x: &Vector) -> Option<f64> {
    match set {
        ConvexSet::Box { lower, upper } => {
            Some((x - lower).min().min((upper - x).min()))
        }
        ConvexSet::L2Ball { center, radius } => Some(radius - (x - center).norm()),
        ConvexSet::Polytope { normals, offsets } => Some(
            (0..normals.nrows())
                .map(|i| {
                    let a = normals.row(i);
                    (offsets[i] - a.dot(&x.transpose())) / a.norm()
                })
                .fold(f64::INFINITY, f64::min),
        ),
        _ => None,
    }
}

/// The four fuzzing regimes for one seed.
pub fn fuzz_regimes(seed: u64, n: usize, w_bar: f64) -> [DisturbanceSpec; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // a random point on the boundary of the disturbance box
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let big = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let value = raw.iter().map(|v| (w_bar * v / big).clamp(-w_bar, w_bar)).collect();
    let strategy = if seed % 2 == 0 { AdaptiveStrategy::MaxStateNorm } else { AdaptiveStrategy::Chase };
    [
        DisturbanceSpec::IidUniform { seed: Some(seed) },
        DisturbanceSpec::Constant { value: Some(value) },
        DisturbanceSpec::SignFlip { period: 1 + (seed % 10) as usize, seed: Some(seed) },
        DisturbanceSpec::Adaptive { strategy },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub seed: u64,
    pub regime: &'static str,
    pub t: usize,
    pub state_ok: bool,
    pub input_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeSummary {
    pub regime: &'static str,
    pub runs: usize,
    pub violations: usize,
    /// Iterates that failed an independent membership check.
    pub member_failures: usize,
    pub min_state_margin: Option<f64>,
    pub min_input_margin: Option<f64>,
    pub max_state_norm: f64,
    pub max_input_norm: f64,
    pub max_grad_norm: f64,
    /// Largest `||M_{t+1} - M_t||_F / eta`.
    pub max_step_over_eta: f64,
    pub bisection_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FuzzSummary {
    pub horizon: usize,
    pub runs: usize,
    pub violations: Vec<Violation>,
    pub member_failures: usize,
    pub regimes: Vec<RegimeSummary>,
    pub bounds: TheoreticalBounds,
}

impl FuzzSummary {
    pub fn max_state_norm(&self) -> f64 {
        self.regimes.iter().map(|r| r.max_state_norm).fold(0.0, f64::max)
    }
    pub fn max_input_norm(&self) -> f64 {
        self.regimes.iter().map(|r| r.max_input_norm).fold(0.0, f64::max)
    }
    pub fn max_grad_norm(&self) -> f64 {
        self.regimes.iter().map(|r| r.max_grad_norm).fold(0.0, f64::max)
    }
    /// Empirical maxima within `b_x`, `b_u` and `G_f`. Missing bounds count as exceeded.
    pub fn within_bounds(&self) -> bool {
        self.bounds.b_x.is_some_and(|b| self.max_state_norm() <= b)
            && self.bounds.b_u.is_some_and(|b| self.max_input_norm() <= b)
            && self.max_grad_norm() <= self.bounds.g_f
    }
    pub fn clean(&self) -> bool {
        self.violations.is_empty() && self.member_failures == 0
    }
}

struct RunStats {
    violation: Option<Violation>,
    member_failures: usize,
    state_margin: Option<f64>,
    input_margin: Option<f64>,
    max_state: f64,
    max_input: f64,
    max_grad: f64,
    max_step_over_eta: f64,
    bisections: usize,
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn stats(
    exp: &Experiment,
    set: &SafePolicySet,
    trace: &RunTrace,
    seed: u64,
    regime: &'static str,
    violation: Option<(usize, bool, bool)>,
) -> Result<RunStats> {
    let mut member_failures = 0;
    for rec in &trace.weights {
        let w = DacWeights::from_record(rec).map_err(|e| HarnessError::Infeasible(e.to_string()))?;
        if !set.member(&w) {
            member_failures += 1;
        }
    }
    let final_w = DacWeights::from_record(&trace.final_weights).map_err(|e| HarnessError::Infeasible(e.to_string()))?;
    if !set.member(&final_w) {
        member_failures += 1;
    }
    let mut state_margin = None;
    let mut input_margin = None;
    let mut states: Vec<Vector> = trace.steps.iter().map(|s| Vector::from_column_slice(&s.x)).collect();
    if !trace.final_state.is_empty() {
        states.push(Vector::from_column_slice(&trace.final_state));
    }
    for x in &states {
        state_margin = min_opt(state_margin, boundary_distance(&exp.spec.state_set, x));
    }
    for s in &trace.steps {
        input_margin = min_opt(input_margin, boundary_distance(&exp.spec.input_set, &Vector::from_column_slice(&s.u)));
    }
    let max_state = states.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let eta = trace.params.eta;
    Ok(RunStats {
        violation: violation.map(|(t, state_ok, input_ok)| Violation { seed, regime, t, state_ok, input_ok }),
        member_failures,
        state_margin,
        input_margin,
        max_state,
        max_input: trace.max_input_norm(),
        max_grad: trace.max_grad_norm(),
        max_step_over_eta: trace.steps.iter().map(|s| s.step_norm / eta).fold(0.0, f64::max),
        bisections: trace.bisection_steps.len(),
    })
}

/// `n_seeds` runs of `horizon` steps under each of the four regimes.
/// Constraint violations are collected, not raised; other errors abort.
pub fn safety_fuzz(exp: &Experiment, n_seeds: usize, horizon: usize) -> Result<FuzzSummary> {
    let ctrl = exp.controller(horizon)?;
    let bounds = *ctrl.bounds();
    let jobs: Vec<(u64, usize)> = (0..n_seeds as u64).flat_map(|s| (0..4).map(move |r| (s, r))).collect();
    let opts = RunOptions { record_weights: true, enforce_bounds: false };
    let results = jobs
        .par_iter()
        .map(|&(seed, r)| -> Result<(usize, RunStats)> {
            let spec = fuzz_regimes(seed, exp.sys.n(), exp.sys.w_bar())[r].clone();
            let regime = spec.name();
            let mut stream = exp.stream(&spec, seed)?;
            let mut costs = crate::ogd::FixedCost(exp.cost.clone());
            let st = match ctrl.run(horizon, &mut costs, &mut stream, opts) {
                Ok(trace) => stats(exp, ctrl.safe_set(), &trace, seed, regime, None)?,
                Err(RunError::SafetyViolation { t, state_ok, input_ok, trace }) => {
                    stats(exp, ctrl.safe_set(), &trace, seed, regime, Some((t, state_ok, input_ok)))?
                }
                Err(e) => return Err(e.into()),
            };
            Ok((r, st))
        })
        .collect::<Result<Vec<_>>>()?;
    let names = ["iid_uniform", "constant", "sign_flip", "adaptive"];
    let mut regimes: Vec<RegimeSummary> = names
        .iter()
        .map(|&regime| RegimeSummary {
            regime,
            runs: 0,
            violations: 0,
            member_failures: 0,
            min_state_margin: None,
            min_input_margin: None,
            max_state_norm: 0.0,
            max_input_norm: 0.0,
            max_grad_norm: 0.0,
            max_step_over_eta: 0.0,
            bisection_steps: 0,
        })
        .collect();
    let mut violations = Vec::new();
    for (r, st) in results {
        let g = &mut regimes[r];
        g.runs += 1;
        g.member_failures += st.member_failures;
        g.min_state_margin = min_opt(g.min_state_margin, st.state_margin);
        g.min_input_margin = min_opt(g.min_input_margin, st.input_margin);
        g.max_state_norm = g.max_state_norm.max(st.max_state);
        g.max_input_norm = g.max_input_norm.max(st.max_input);
        g.max_grad_norm = g.max_grad_norm.max(st.max_grad);
        g.max_step_over_eta = g.max_step_over_eta.max(st.max_step_over_eta);
        g.bisection_steps += st.bisections;
        if let Some(v) = st.violation {
            g.violations += 1;
            violations.push(v);
        }
    }
    let member_failures = regimes.iter().map(|r| r.member_failures).sum();
    Ok(FuzzSummary { horizon, runs: jobs.len(), violations, member_failures, regimes, bounds })
}

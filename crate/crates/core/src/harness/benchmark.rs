use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::disturbance::DisturbanceStream;
use super::{HarnessError, Result};
use crate::dac::{DacWeights, DisturbanceHistory};
use crate::lti::{certify_strong_stability, linear_policy_fits, LtiSystem, SafetySpec};
use crate::ogd::{AdversaryView, CostFunction, DisturbanceSource};
use crate::{Matrix, Vector};

/// Uniform grid applied to every entry of `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lower: -1.0, upper: 1.0, step: 0.02 }
    }
}

/// Grids with more points than this are refused.
const MAX_GRID_POINTS: usize = 2_000_000;

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let span = self.upper - self.lower;
        if !(self.step > 0.0 && span >= 0.0 && span.is_finite()) {
            return Err(HarnessError::Config(format!(
                "grid needs step > 0 and lower <= upper (got {:?})",
                self
            )));
        }
        // tolerate rounding in span / step so that e.g. 2 / 0.02 gives 101 points
        let count = (span / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| self.lower + i as f64 * self.step).collect())
    }
}

/// Gains on the grid that pass both certificates, in grid order.
#[derive(Debug, Clone)]
pub struct SafeGrid {
    pub gains: Vec<Matrix>,
    pub total: usize,
    pub removed_unstable: usize,
    pub removed_unsafe: usize,
    pub step: f64,
}

enum Verdict {
    Safe(Matrix),
    Unstable,
    Unsafe,
}

/// Filters every grid gain by strong stability and the linear safety certificate at margin 0.
pub fn safe_linear_grid(sys: &LtiSystem, spec: &SafetySpec, grid: &GridSpec) -> Result<SafeGrid> {
    let values = grid.values()?;
    let (m, n) = (sys.m(), sys.n());
    let entries = m * n;
    let total = u32::try_from(entries)
        .ok()
        .and_then(|e| values.len().checked_pow(e))
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or_else(|| HarnessError::Config(format!("grid with {} values per entry is too large", values.len())))?;
    let verdicts: Vec<Verdict> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            // row-major, first entry varies slowest
            let mut data = vec![0.0; entries];
            for slot in data.iter_mut().rev() {
                *slot = values[idx % values.len()];
                idx /= values.len();
            }
            let k = Matrix::from_row_slice(m, n, &data);
            match certify_strong_stability(sys, &k) {
                Err(_) => Verdict::Unstable,
                Ok(cert) => match linear_policy_fits(sys, &cert, spec, 0.0) {
                    Ok(true) => Verdict::Safe(k),
                    _ => Verdict::Unsafe,
                },
            }
        })
        .collect();
    let mut out = SafeGrid { gains: Vec::new(), total, removed_unstable: 0, removed_unsafe: 0, step: grid.step };
    for v in verdicts {
        match v {
            Verdict::Safe(k) => out.gains.push(k),
            Verdict::Unstable => out.removed_unstable += 1,
            Verdict::Unsafe => out.removed_unsafe += 1,
        }
    }
    Ok(out)
}

/// Closed-loop run of `u = -K x` from `x_0 = 0`.
#[derive(Debug, Clone)]
pub struct LinearTrace {
    /// `x_0 ..= x_T`
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub disturbances: Vec<Vector>,
    pub costs: Vec<f64>,
    pub total_cost: f64,
    /// Every state (including `x_T`) and input inside its constraint set.
    pub safe: bool,
}

/// Simulates `u = -K x` for `costs.len()` steps, with `c_t = costs[t]`.
pub fn simulate_linear(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &SafetySpec,
    costs: &[Arc<dyn CostFunction>],
    source: &mut dyn DisturbanceSource,
) -> Result<LinearTrace> {
    sys.check_gain(k).map_err(|e| HarnessError::Config(e.to_string()))?;
    let weights = DacWeights::zeros(1, sys.m(), sys.n());
    let history = DisturbanceHistory::new(sys.n(), 1);
    let mut x = Vector::zeros(sys.n());
    let horizon = costs.len();
    let mut tr = LinearTrace {
        states: Vec::with_capacity(horizon + 1),
        inputs: Vec::with_capacity(horizon),
        disturbances: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        total_cost: 0.0,
        safe: true,
    };
    let inside = |set: &crate::ConvexSet, v: &Vector| set.contains(v, 0.0).unwrap_or(false);
    for (t, cost) in costs.iter().enumerate() {
        let u = -(k * &x);
        tr.safe &= inside(&spec.state_set, &x) && inside(&spec.input_set, &u);
        let c = cost.value(&x, &u);
        tr.total_cost += c;
        let w = source.next(&AdversaryView { t, x: &x, u: &u, sys, weights: &weights, history: &history });
        let next = sys.step(&x, &u, &w).map_err(|e| HarnessError::Infeasible(e.to_string()))?;
        tr.states.push(std::mem::replace(&mut x, next));
        tr.inputs.push(u);
        tr.disturbances.push(w);
        tr.costs.push(c);
    }
    tr.safe &= inside(&spec.state_set, &x);
    tr.states.push(x);
    Ok(tr)
}

/// Best certified-safe grid gain in hindsight.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub k_star: Matrix,
    pub total_cost: f64,
    /// `K*`'s trajectory on the recorded disturbances re-checked against the constraints.
    pub trajectory_safe: bool,
    pub safe_points: usize,
    pub total_points: usize,
    pub removed_unstable: usize,
    pub removed_unsafe: usize,
    pub grid_step: f64,
}

/// Replays the recorded disturbances and costs on every safe grid gain and returns the cheapest.
/// Ties go to the earliest gain in grid order.
pub fn best_on_grid(
    sys: &LtiSystem,
    spec: &SafetySpec,
    costs: &[Arc<dyn CostFunction>],
    ws: &[Vector],
    grid: &SafeGrid,
) -> Result<Benchmark> {
    if grid.gains.is_empty() {
        return Err(HarnessError::Infeasible("no grid gain passes the safety certificate".into()));
    }
    if ws.len() != costs.len() {
        return Err(HarnessError::Config(format!("{} disturbances for {} costs", ws.len(), costs.len())));
    }
    let totals: Vec<f64> = grid
        .gains
        .par_iter()
        .map(|k| -> Result<f64> {
            let mut replay = DisturbanceStream::replay(ws.to_vec(), sys.w_bar())?;
            Ok(simulate_linear(sys, k, spec, costs, &mut replay)?.total_cost)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in totals.iter().enumerate() {
        if c.total_cmp(&totals[best]).is_lt() {
            best = i;
        }
    }
    let k_star = grid.gains[best].clone();
    let mut replay = DisturbanceStream::replay(ws.to_vec(), sys.w_bar())?;
    let check = simulate_linear(sys, &k_star, spec, costs, &mut replay)?;
    Ok(Benchmark {
        k_star,
        total_cost: totals[best],
        trajectory_safe: check.safe,
        safe_points: grid.gains.len(),
        total_points: grid.total,
        removed_unstable: grid.removed_unstable,
        removed_unsafe: grid.removed_unsafe,
        grid_step: grid.step,
    })
}

pub fn best_safe_linear(
    sys: &LtiSystem,
    spec: &SafetySpec,
    costs: &[Arc<dyn CostFunction>],
    ws: &[Vector],
    grid: &GridSpec,
) -> Result<Benchmark> {
    best_on_grid(sys, spec, costs, ws, &safe_linear_grid(sys, spec, grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexSet;
    use crate::ogd::QuadraticCost;
    use nalgebra::{dmatrix, dvector};

    fn toy() -> (LtiSystem, SafetySpec) {
        let sys = LtiSystem::new(dmatrix![1.0, 1.0; 0.0, 0.5], dmatrix![1.0; 1.0], 0.3).unwrap();
        let spec = SafetySpec::new(
            &sys,
            ConvexSet::l2_ball(dvector![0.0, 0.0], 1.0).unwrap(),
            ConvexSet::l2_ball(dvector![0.0], 1.0).unwrap(),
        )
        .unwrap();
        (sys, spec)
    }

    #[test]
    fn grid_values_include_both_ends() {
        let v = GridSpec::default().values().unwrap();
        assert_eq!(v.len(), 101);
        assert_eq!(v[0], -1.0);
        assert!((v[100] - 1.0).abs() < 1e-12);
        assert!(GridSpec { lower: 0.0, upper: 1.0, step: 0.0 }.values().is_err());
        assert!(GridSpec { lower: 1.0, upper: 0.0, step: 0.1 }.values().is_err());
    }

    #[test]
    fn linear_simulation_matches_hand_rollout() {
        let (sys, spec) = toy();
        let k = dmatrix![0.5, 0.0];
        let costs: Vec<Arc<dyn CostFunction>> = vec![Arc::new(QuadraticCost::identity(2, 1)); 3];
        let w = dvector![0.3, 0.3];
        let mut src = DisturbanceStream::replay(vec![w.clone(); 3], 0.3).unwrap();
        let tr = simulate_linear(&sys, &k, &spec, &costs, &mut src).unwrap();
        let mut x = dvector![0.0, 0.0];
        let mut total = 0.0;
        for t in 0..3 {
            assert_eq!(tr.states[t], x);
            let u = -(&k * &x);
            total += x.norm_squared() + u.norm_squared();
            x = sys.a() * &x + sys.b() * &u + &w;
        }
        assert_eq!(tr.states[3], x);
        assert!((tr.total_cost - total).abs() < 1e-15);
    }

    #[test]
    fn zero_disturbance_makes_every_gain_optimal() {
        let (sys, spec) = toy();
        let grid = safe_linear_grid(&sys, &spec, &GridSpec { lower: -1.0, upper: 1.0, step: 0.1 }).unwrap();
        assert!(!grid.gains.is_empty());
        assert_eq!(grid.gains.len() + grid.removed_unstable + grid.removed_unsafe, grid.total);
        let costs: Vec<Arc<dyn CostFunction>> = vec![Arc::new(QuadraticCost::identity(2, 1)); 10];
        let b = best_on_grid(&sys, &spec, &costs, &vec![dvector![0.0, 0.0]; 10], &grid).unwrap();
        assert_eq!(b.total_cost, 0.0);
        assert_eq!(b.k_star, grid.gains[0]);
    }

    #[test]
    fn unstable_gains_are_filtered() {
        let (sys, spec) = toy();
        let grid = safe_linear_grid(&sys, &spec, &GridSpec { lower: -1.0, upper: 1.0, step: 0.5 }).unwrap();
        // K = (-1, -1) gives A - B K = [[2, 2], [1, 1.5]], spectral radius > 1
        assert!(!grid.gains.contains(&dmatrix![-1.0, -1.0]));
        assert!(grid.removed_unstable > 0);
        for k in &grid.gains {
            let rho = crate::linalg::spectral_radius(&sys.closed_loop(k).unwrap());
            assert!(rho < 1.0);
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let (sys, spec) = toy();
        // only K = (-1, -1) on this grid
        let grid = safe_linear_grid(&sys, &spec, &GridSpec { lower: -1.0, upper: -1.0, step: 1.0 }).unwrap();
        assert_eq!(grid.total, 1);
        let costs: Vec<Arc<dyn CostFunction>> = vec![Arc::new(QuadraticCost::identity(2, 1))];
        assert!(matches!(
            best_on_grid(&sys, &spec, &costs, &[dvector![0.0, 0.0]], &grid),
            Err(HarnessError::Infeasible(_))
        ));
    }
}

//! Projected online gradient descent over the safe policy set, with
//! parameter schedules and diagnostic bounds.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dac::{DacError, DacModel, DacWeights, DecayClass, DisturbanceHistory, WeightsRecord};
use crate::linalg::spectral_norm;
use crate::lti::{LtiError, LtiSystem, SafetySpec, StabilityCertificate};
use crate::safe_set::{SafePolicySet, SafeSetError};
use crate::{Matrix, Vector};

/// A convex, differentiable stage cost `c(x, u)`.
pub trait CostFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: &Vector, u: &Vector) -> f64;
    fn grad(&self, x: &Vector, u: &Vector) -> (Vector, Vector);
    /// A constant `G` with `|c| <= G D` and `||grad|| <= G D` whenever `||x||, ||u|| <= D`.
    fn growth_constant(&self, radius: f64) -> f64;
}

/// `x' Q x + u' R u`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: Matrix,
    r: Matrix,
    q_norm: f64,
    r_norm: f64,
}

impl QuadraticCost {
    pub fn new(q: Matrix, r: Matrix) -> Result<Self, ParamError> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if m.nrows() != m.ncols() || (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(ParamError::InvalidCost(format!("{name} must be square and symmetric")));
            }
            if m.clone().symmetric_eigen().eigenvalues.min() < -1e-12 {
                return Err(ParamError::InvalidCost(format!("{name} must be positive semidefinite")));
            }
        }
        let (q_norm, r_norm) = (spectral_norm(&q), spectral_norm(&r));
        Ok(QuadraticCost { q, r, q_norm, r_norm })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        QuadraticCost { q: Matrix::identity(n, n), r: Matrix::identity(m, m), q_norm: 1.0, r_norm: 1.0 }
    }
}

impl CostFunction for QuadraticCost {
    fn value(&self, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
    fn grad(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        ((&self.q * x) * 2.0, (&self.r * u) * 2.0)
    }
    fn growth_constant(&self, radius: f64) -> f64 {
        ((self.q_norm + self.r_norm) * radius).max(2.0 * self.q_norm).max(2.0 * self.r_norm)
    }
}

/// Sum of Huber-smoothed hinges `h(|z_i| - threshold)` over all state and input coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedHingeCost {
    pub threshold: f64,
    pub smoothing: f64,
    /// `n + m`
    pub dims: usize,
}

impl SmoothedHingeCost {
    fn h(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s <= self.smoothing {
            s * s / (2.0 * self.smoothing)
        } else {
            s - 0.5 * self.smoothing
        }
    }
    fn dh(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s <= self.smoothing {
            s / self.smoothing
        } else {
            1.0
        }
    }
    fn term(&self, z: f64) -> f64 {
        self.h(z - self.threshold) + self.h(-z - self.threshold)
    }
    fn dterm(&self, z: f64) -> f64 {
        self.dh(z - self.threshold) - self.dh(-z - self.threshold)
    }
}

impl CostFunction for SmoothedHingeCost {
    fn value(&self, x: &Vector, u: &Vector) -> f64 {
        x.iter().chain(u.iter()).map(|&z| self.term(z)).sum()
    }
    fn grad(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        (x.map(|z| self.dterm(z)), u.map(|z| self.dterm(z)))
    }
    fn growth_constant(&self, radius: f64) -> f64 {
        // |c| <= ||(x, u)||_1 <= sqrt(2 dims) D, and gradient entries lie in [-1, 1]
        let d = self.dims as f64;
        (2.0 * d).sqrt().max(d.sqrt() / radius.max(1e-12))
    }
}

/// Proof that the input for step `t` was fixed before the cost was revealed.
/// Only the run loop can create one.
#[derive(Debug)]
pub struct Commitment<'a> {
    t: usize,
    x: &'a Vector,
    u: &'a Vector,
}

impl<'a> Commitment<'a> {
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn state(&self) -> &Vector {
        self.x
    }
    pub fn input(&self) -> &Vector {
        self.u
    }
}

/// Source of the (possibly adversarial) cost sequence.
pub trait CostStream {
    fn reveal(&mut self, commitment: &Commitment<'_>) -> Arc<dyn CostFunction>;
}

/// The same cost at every step.
#[derive(Debug, Clone)]
pub struct FixedCost(pub Arc<dyn CostFunction>);

impl CostStream for FixedCost {
    fn reveal(&mut self, _commitment: &Commitment<'_>) -> Arc<dyn CostFunction> {
        self.0.clone()
    }
}

/// What an adaptive adversary may look at when choosing `w_t`.
#[derive(Debug)]
pub struct AdversaryView<'a> {
    pub t: usize,
    pub x: &'a Vector,
    pub u: &'a Vector,
    pub sys: &'a LtiSystem,
    pub weights: &'a DacWeights,
    pub history: &'a DisturbanceHistory,
}

pub trait DisturbanceSource {
    fn next(&mut self, view: &AdversaryView<'_>) -> Vector;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("safety margin must be positive and finite, got {0}")]
    InvalidMargin(f64),
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("step size and memory must be positive (eta {eta}, H {h})")]
    InvalidManual { eta: f64, h: usize },
    #[error(
        "tightening {epsilon} does not fit the window: needs epsilon <= {upper} and epsilon < {strict}"
    )]
    WindowViolated { epsilon: f64, upper: f64, strict: f64 },
}

/// How `(H, eta, epsilon)` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Values from the regret theorem; fails if the tightening window is empty.
    Theorem,
    /// `H = floor(ln T)`, `epsilon = ln T / sqrt T` (capped at half the available margin),
    /// `eta = 1 / (sqrt T ln T)`.
    Experiment,
    Manual { h: usize, eta: f64, epsilon: f64 },
}

/// Joint constants of the base gain and the safe linear gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub kappa: f64,
    pub gamma: f64,
    pub kappa_b: f64,
    pub w_bar: f64,
    pub n: usize,
    pub m: usize,
}

impl ProblemConstants {
    pub fn new(sys: &LtiSystem, base: &StabilityCertificate, safe: &StabilityCertificate) -> Self {
        let (kappa, gamma) = base.joint_constants(safe);
        ProblemConstants { kappa, gamma, kappa_b: sys.kappa_b(), w_bar: sys.w_bar(), n: sys.n(), m: sys.m() }
    }

    /// `a = 2 kappa^3`
    pub fn a(&self) -> f64 {
        2.0 * self.kappa.powi(3)
    }

    pub fn class(&self) -> DecayClass {
        DecayClass::from_constants(self.kappa, self.gamma)
    }

    /// `(c1, c3)`, which do not depend on the cost.
    pub fn c1_c3(&self) -> (f64, f64) {
        let (w, k, g, kb, a) = (self.w_bar, self.kappa, self.gamma, self.kappa_b, self.a());
        let c1 = w * k.powi(3) * (2.0 * k.powi(3) + 2.0 * a * k.powi(3) * kb + a) / g;
        let c3 = 2.0 * w * k.powi(5);
        (c1, c3)
    }

    pub fn c2(&self, growth: f64) -> f64 {
        let (w, k, g, kb, a) = (self.w_bar, self.kappa, self.gamma, self.kappa_b, self.a());
        4.0 * growth * w.powi(3) * (k.powi(3) + 2.0 * a * k.powi(3) * kb) * (1.0 + k) * k.powi(5) * kb * kb
            / g.powi(4)
    }

    /// `(eps1, eps3)` for memory `h`. Both vanish when `gamma = 1`.
    pub fn eps1_eps3(&self, h: usize) -> (f64, f64) {
        let (c1, c3) = self.c1_c3();
        let decay = (1.0 - self.gamma).powi(h as i32);
        (c1 * h as f64 * decay, c3 * (self.n as f64).sqrt() * decay)
    }

    pub fn eps2(&self, growth: f64, eta: f64, h: usize) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        self.c2(growth) * (m * n.powi(3)).sqrt() * eta * (h as f64).powi(2)
    }

    /// Diagnostic magnitude bounds for memory `h`.
    pub fn bounds(&self, h: usize, cost: &dyn CostFunction) -> TheoreticalBounds {
        let (w, k, g, kb, a) = (self.w_bar, self.kappa, self.gamma, self.kappa_b, self.a());
        let (n, m, hf) = (self.n as f64, self.m as f64, h as f64);
        let contraction = k * k * (1.0 - g).powi(h as i32);
        let b_x = (contraction < 1.0)
            .then(|| w * n.sqrt() * (k * k + a * k * k * kb * hf) / ((1.0 - contraction) * g));
        let b_u = b_x.map(|bx| k * bx + w * n.sqrt().max(m.sqrt()) * a / g);
        let a_tilde = 2.0 * a;
        let b_tilde = 2.0 * w * n.sqrt() * (k.powi(3) + a_tilde * k.powi(3) * kb * hf) / g
            + w * (m * n).sqrt() * a_tilde / g;
        let growth = cost.growth_constant(b_tilde);
        let g_f = 2.0 * growth * b_tilde * n.sqrt() * w * (1.0 + k) * k * k * kb * hf.sqrt() / g;
        TheoreticalBounds { b_x, b_u, b_tilde, g_f, delta: 2.0 * m.sqrt() * a / g }
    }
}

/// Magnitude bounds that every run must respect. `b_x`, `b_u` are `None` when
/// `kappa^2 (1 - gamma)^H >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoreticalBounds {
    pub b_x: Option<f64>,
    pub b_u: Option<f64>,
    pub b_tilde: f64,
    pub g_f: f64,
    /// Diameter bound of the weight class.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmParams {
    pub schedule: Schedule,
    pub horizon: usize,
    pub h: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub eps_star: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Cost growth constant used for `c2`.
    pub growth: f64,
    /// True when the experiment schedule's tightening was capped at `eps_star / 2`.
    pub epsilon_capped: bool,
}

/// Chooses `(H, eta, epsilon)` and reports the theoretical error terms.
pub fn select_parameters(
    consts: &ProblemConstants,
    cost: &dyn CostFunction,
    eps_star: f64,
    horizon: usize,
    schedule: Schedule,
) -> Result<AlgorithmParams, ParamError> {
    if horizon == 0 {
        return Err(ParamError::ZeroHorizon);
    }
    if !eps_star.is_finite() || eps_star <= 0.0 {
        return Err(ParamError::InvalidMargin(eps_star));
    }
    let t = horizon as f64;
    let (c1, c3) = consts.c1_c3();
    let n = consts.n as f64;
    let mut epsilon_capped = false;
    let (h, eta, epsilon) = match schedule {
        Schedule::Theorem => {
            let h = if consts.gamma >= 1.0 {
                1
            } else {
                let rate = (1.0 / (1.0 - consts.gamma)).ln();
                let from_regret = ((8.0 * c1 * t + 4.0 * c3 * n.sqrt()) / eps_star).ln() / rate;
                let from_class = (2.0 * consts.kappa.powi(2)).ln() / rate;
                from_regret.max(from_class).ceil().max(1.0) as usize
            };
            let eta = 1.0 / (n * (t * (h as f64).powi(3)).sqrt());
            (h, eta, f64::NAN)
        }
        Schedule::Experiment => {
            // ln T is clamped at 1 so that tiny horizons still give H = 1 and a finite step
            let ln_t = t.ln().max(1.0);
            let h = (ln_t.floor() as usize).max(1);
            let eta = 1.0 / (t.sqrt() * ln_t);
            let raw = ln_t / t.sqrt();
            let cap = 0.5 * eps_star;
            epsilon_capped = raw > cap;
            (h, eta, raw.min(cap))
        }
        Schedule::Manual { h, eta, epsilon } => {
            if h == 0 || !(eta > 0.0) || !eta.is_finite() {
                return Err(ParamError::InvalidManual { eta, h });
            }
            if !epsilon.is_finite() || epsilon < 0.0 {
                return Err(ParamError::InvalidMargin(epsilon));
            }
            (h, eta, epsilon)
        }
    };
    let (eps1, eps3) = if consts.gamma >= 1.0 { (0.0, 0.0) } else { consts.eps1_eps3(h) };
    let b = consts.bounds(h, cost);
    let radius = b.b_x.unwrap_or(f64::INFINITY).max(b.b_u.unwrap_or(f64::INFINITY));
    let growth = cost.growth_constant(if radius.is_finite() { radius } else { b.b_tilde });
    let eps2 = consts.eps2(growth, eta, h);
    let epsilon = if matches!(schedule, Schedule::Theorem) {
        let epsilon = eps1 + eps2;
        let upper = eps_star - eps1 - eps3;
        let strict = 0.5 * eps_star - eps1 - eps3;
        if !(epsilon <= upper && epsilon < strict) {
            return Err(ParamError::WindowViolated { epsilon, upper, strict });
        }
        epsilon
    } else {
        epsilon
    };
    Ok(AlgorithmParams {
        schedule,
        horizon,
        h,
        eta,
        epsilon,
        eps_star,
        eps1,
        eps2,
        eps3,
        c1,
        c2: consts.c2(growth),
        c3,
        growth,
        epsilon_capped,
    })
}

/// `c(x~(M), u~(M))` for the history preceding step `t`.
pub fn surrogate_cost(model: &DacModel, w: &DacWeights, hist: &DisturbanceHistory, cost: &dyn CostFunction) -> f64 {
    let (x, u) = model.responses(w).surrogate(hist);
    cost.value(&x, &u)
}

/// Gradient of [`surrogate_cost`] with respect to the weights.
pub fn approx_cost_gradient(
    model: &DacModel,
    w: &DacWeights,
    hist: &DisturbanceHistory,
    cost: &dyn CostFunction,
) -> DacWeights {
    let (x, u) = model.responses(w).surrogate(hist);
    let (gx, gu) = cost.grad(&x, &u);
    let lags = 2 * model.memory();
    let gxs: Vec<Matrix> = (1..=lags).map(|k| &gx * hist.lag(k).transpose()).collect();
    let gus: Vec<Matrix> = (1..=lags).map(|k| &gu * hist.lag(k).transpose()).collect();
    model.adjoint(&gxs, &gus)
}

#[derive(Debug, Clone, Error)]
pub enum RunError {
    #[error("constraint violated at step {t}: state ok {state_ok}, input ok {input_ok}")]
    SafetyViolation { t: usize, state_ok: bool, input_ok: bool, trace: Box<RunTrace> },
    #[error("{what} = {value} exceeds its bound {bound} at step {t}")]
    BoundExceeded { t: usize, what: &'static str, value: f64, bound: f64 },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Dac(#[from] DacError),
    #[error(transparent)]
    SafeSet(#[from] SafeSetError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub cost: f64,
    pub cum_cost: f64,
    pub safe_x: bool,
    pub safe_u: bool,
    /// `||M_{t+1} - M_t||`
    pub step_norm: f64,
    /// `||grad f_t(M_t)||`
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub params: AlgorithmParams,
    pub bounds: TheoreticalBounds,
    pub seed_weights: WeightsRecord,
    pub steps: Vec<StepRecord>,
    /// `M_t` for each step, when requested.
    pub weights: Vec<WeightsRecord>,
    pub final_weights: WeightsRecord,
    /// `x_T`, after the last step.
    pub final_state: Vec<f64>,
    /// Revealed costs, one per step.
    pub costs: Vec<Arc<dyn CostFunction>>,
    /// Steps where the recovered disturbance exceeded the declared bound.
    pub disturbance_warnings: Vec<usize>,
    /// Steps whose projection fell back to bisection toward the seed.
    pub bisection_steps: Vec<usize>,
}

impl RunTrace {
    pub fn total_cost(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_cost)
    }
    pub fn disturbances(&self) -> Vec<Vector> {
        self.steps.iter().map(|s| Vector::from_vec(s.w.clone())).collect()
    }
    pub fn max_state_norm(&self) -> f64 {
        self.steps.iter().map(|s| Vector::from_vec(s.x.clone()).norm()).fold(0.0, f64::max)
    }
    pub fn max_input_norm(&self) -> f64 {
        self.steps.iter().map(|s| Vector::from_vec(s.u.clone()).norm()).fold(0.0, f64::max)
    }
    pub fn max_grad_norm(&self) -> f64 {
        self.steps.iter().map(|s| s.grad_norm).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub record_weights: bool,
    /// Abort when a state, input or gradient exceeds its diagnostic bound.
    pub enforce_bounds: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_weights: false, enforce_bounds: true }
    }
}

/// A configured controller: the safe set, its seed, and the step parameters.
#[derive(Debug, Clone)]
pub struct OgdBzc {
    sys: LtiSystem,
    spec: SafetySpec,
    params: AlgorithmParams,
    set: SafePolicySet,
    seed: DacWeights,
    bounds: TheoreticalBounds,
}

impl OgdBzc {
    /// `base` is the gain inside the policy, `safe` a strictly safe linear gain
    /// whose embedding seeds the iterates.
    pub fn new(
        sys: &LtiSystem,
        base: &StabilityCertificate,
        safe: &StabilityCertificate,
        spec: &SafetySpec,
        params: AlgorithmParams,
        cost_for_bounds: &dyn CostFunction,
    ) -> Result<Self, RunError> {
        let consts = ProblemConstants::new(sys, base, safe);
        let set = SafePolicySet::new(sys, base, spec, params.epsilon, params.h, consts.class())?;
        let seed = set.feasible_seed(base, safe)?;
        let bounds = consts.bounds(params.h, cost_for_bounds);
        Ok(OgdBzc { sys: sys.clone(), spec: spec.clone(), params, set, seed, bounds })
    }

    pub fn params(&self) -> &AlgorithmParams {
        &self.params
    }
    pub fn bounds(&self) -> &TheoreticalBounds {
        &self.bounds
    }
    pub fn safe_set(&self) -> &SafePolicySet {
        &self.set
    }
    pub fn seed(&self) -> &DacWeights {
        &self.seed
    }

    pub fn run(
        &self,
        horizon: usize,
        costs: &mut dyn CostStream,
        disturbances: &mut dyn DisturbanceSource,
        opts: RunOptions,
    ) -> Result<RunTrace, RunError> {
        let model = self.set.model();
        let n = self.sys.n();
        let mut hist = DisturbanceHistory::new(n, 2 * model.memory());
        let mut x = Vector::zeros(n);
        let mut w_t = self.seed.clone();
        let mut trace = RunTrace {
            params: self.params.clone(),
            bounds: self.bounds,
            seed_weights: self.seed.to_record(),
            steps: Vec::with_capacity(horizon),
            weights: Vec::new(),
            final_weights: self.seed.to_record(),
            final_state: Vec::new(),
            costs: Vec::with_capacity(horizon),
            disturbance_warnings: Vec::new(),
            bisection_steps: Vec::new(),
        };
        let mut cum = 0.0;
        for t in 0..horizon {
            let u = model.control_input(&w_t, &x, &hist);
            let safe_x = self.spec.state_set.contains(&x, 0.0).map_err(LtiError::from)?;
            let safe_u = self.spec.input_set.contains(&u, 0.0).map_err(LtiError::from)?;
            if opts.enforce_bounds {
                self.check_bound(t, "state norm", x.norm(), self.bounds.b_x)?;
                self.check_bound(t, "input norm", u.norm(), self.bounds.b_u)?;
            }
            let cost = costs.reveal(&Commitment { t, x: &x, u: &u });
            let c = cost.value(&x, &u);
            cum += c;
            let grad = approx_cost_gradient(model, &w_t, &hist, cost.as_ref());
            let grad_norm = grad.norm();
            if opts.enforce_bounds {
                self.check_bound(t, "gradient norm", grad_norm, Some(self.bounds.g_f))?;
            }
            let w = disturbances.next(&AdversaryView {
                t,
                x: &x,
                u: &u,
                sys: &self.sys,
                weights: &w_t,
                history: &hist,
            });
            let x_next = self.sys.step(&x, &u, &w)?;
            let recovered = self.sys.recover_disturbance(&x, &u, &x_next)?;
            if !recovered.within_bound {
                trace.disturbance_warnings.push(t);
            }
            let candidate = w_t.add_scaled(&grad, -self.params.eta);
            let proj = self.set.project(&candidate, &self.seed)?;
            if proj.used_bisection {
                trace.bisection_steps.push(t);
            }
            if opts.record_weights {
                trace.weights.push(w_t.to_record());
            }
            trace.steps.push(StepRecord {
                t,
                x: x.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                w: w.as_slice().to_vec(),
                cost: c,
                cum_cost: cum,
                safe_x,
                safe_u,
                step_norm: proj.weights.sub(&w_t).norm(),
                grad_norm,
            });
            trace.costs.push(cost);
            if !(safe_x && safe_u) {
                trace.final_weights = w_t.to_record();
                return Err(RunError::SafetyViolation { t, state_ok: safe_x, input_ok: safe_u, trace: Box::new(trace) });
            }
            hist.push(recovered.w);
            w_t = proj.weights;
            x = x_next;
        }
        trace.final_weights = w_t.to_record();
        trace.final_state = x.as_slice().to_vec();
        if !self.spec.state_set.contains(&x, 0.0).map_err(LtiError::from)? {
            return Err(RunError::SafetyViolation { t: horizon, state_ok: false, input_ok: true, trace: Box::new(trace) });
        }
        Ok(trace)
    }

    fn check_bound(&self, t: usize, what: &'static str, value: f64, bound: Option<f64>) -> Result<(), RunError> {
        match bound {
            Some(b) if value > b * (1.0 + 1e-12) => Err(RunError::BoundExceeded { t, what, value, bound: b }),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests;

//! The tightened set of disturbance-action weights whose surrogate state and
//! input provably stay inside the shrunk constraint sets.

use std::fmt;

use thiserror::Error;

use crate::dac::{DacError, DacModel, DacWeights, DecayClass, ResponseMatrices};
use crate::geometry::{ConvexSet, GeometryError, NormTag};
use crate::linalg::top_singular;
use crate::lti::{LtiSystem, SafetySpec, StabilityCertificate};
use crate::nnls::least_distance;
use crate::{Matrix, Vector};

/// Largest `2 H n` accepted by [`SafePolicySet::member_exact`].
pub const MAX_EXACT_VERTICES_LOG2: usize = 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SafeSetError {
    #[error("shrinking the constraint sets by {epsilon} leaves nothing")]
    EmptyWindow { epsilon: f64 },
    #[error("exact membership needs 2^{0} vertices (limit 2^{MAX_EXACT_VERTICES_LOG2})")]
    TooLargeForExact(usize),
    #[error("seed policy is not in the safe set: {0}")]
    SeedInfeasible(SeedDiagnostic),
    #[error("anchor for projection is not in the safe set")]
    AnchorInfeasible,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dac(#[from] DacError),
}

type Result<T> = std::result::Result<T, SafeSetError>;

/// Why a seed failed. Positive margins are violations.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedDiagnostic {
    pub state_radii: Vector,
    pub input_radii: Vector,
    pub worst_state_margin: f64,
    pub worst_input_margin: f64,
    pub in_class: bool,
}

impl fmt::Display for SeedDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "state margin {:.3e}, input margin {:.3e}, in weight class: {}, state radii {:?}, input radii {:?}",
            self.worst_state_margin,
            self.worst_input_margin,
            self.in_class,
            self.state_radii.as_slice(),
            self.input_radii.as_slice()
        )
    }
}

/// One convex constraint `value <= 0` with a subgradient at the evaluation point.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub value: f64,
    pub grad: DacWeights,
}

/// Result of [`SafePolicySet::project`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub weights: DacWeights,
    pub iterations: usize,
    /// True when the cutting-plane phase did not reach a member and the
    /// result came from bisection toward the anchor.
    pub used_bisection: bool,
}

#[derive(Debug, Clone)]
pub struct SafePolicySet {
    model: DacModel,
    class: DecayClass,
    w_bar: f64,
    epsilon: f64,
    state_set: ConvexSet,
    input_set: ConvexSet,
    /// Iteration cap for the cutting-plane phase.
    pub max_proj_iters: usize,
}

impl SafePolicySet {
    pub fn new(
        sys: &LtiSystem,
        cert: &StabilityCertificate,
        spec: &SafetySpec,
        epsilon: f64,
        h: usize,
        class: DecayClass,
    ) -> Result<Self> {
        let model = DacModel::new(sys, cert, h)?;
        let state_set = spec.state_set.shrink(epsilon, NormTag::LInf)?;
        let input_set = spec.input_set.shrink(epsilon, NormTag::LInf)?;
        if state_set.is_empty() || input_set.is_empty() {
            return Err(SafeSetError::EmptyWindow { epsilon });
        }
        Ok(SafePolicySet { model, class, w_bar: sys.w_bar(), epsilon, state_set, input_set, max_proj_iters: 500 })
    }

    pub fn model(&self) -> &DacModel {
        &self.model
    }
    pub fn class(&self) -> &DecayClass {
        &self.class
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn shrunk_state_set(&self) -> &ConvexSet {
        &self.state_set
    }
    pub fn shrunk_input_set(&self) -> &ConvexSet {
        &self.input_set
    }

    fn shape_ok(&self, w: &DacWeights) -> bool {
        w.memory() == self.model.memory() && w.m() == self.model.m() && w.n() == self.model.n()
    }

    /// Per-coordinate worst-case magnitudes of the surrogate state and input.
    pub fn radii(&self, w: &DacWeights) -> (Vector, Vector) {
        radii_of(&self.model.responses(w), self.w_bar)
    }

    /// Sufficient membership test: class bounds plus box containment.
    pub fn member(&self, w: &DacWeights) -> bool {
        if !self.shape_ok(w) || !self.class.contains(w) {
            return false;
        }
        let (rx, ru) = self.radii(w);
        matches!(self.state_set.box_image_contained(&rx), Ok(true))
            && matches!(self.input_set.box_image_contained(&ru), Ok(true))
    }

    /// Checks every disturbance vertex in `{-w_bar, w_bar}^(2Hn)` directly.
    pub fn member_exact(&self, w: &DacWeights) -> Result<bool> {
        let h = self.model.memory();
        let n = self.model.n();
        let dims = 2 * h * n;
        if dims > MAX_EXACT_VERTICES_LOG2 {
            return Err(SafeSetError::TooLargeForExact(dims));
        }
        if !self.shape_ok(w) || !self.class.contains(w) {
            return Ok(false);
        }
        let r = self.model.responses(w);
        let col = |idx: usize, u: bool| -> Vector {
            let (k, j) = (idx / n, idx % n);
            let m = if u { &r.psi_u[k] } else { &r.psi_x[k] };
            m.column(j).into_owned()
        };
        let cols_x: Vec<Vector> = (0..dims).map(|i| col(i, false)).collect();
        let cols_u: Vec<Vector> = (0..dims).map(|i| col(i, true)).collect();
        // start at all coordinates = -w_bar and walk a Gray code
        let mut x = -cols_x.iter().fold(Vector::zeros(n), |acc, c| acc + c) * self.w_bar;
        let mut u = -cols_u.iter().fold(Vector::zeros(self.model.m()), |acc, c| acc + c) * self.w_bar;
        let mut signs = vec![-1.0; dims];
        for step in 0u64..(1u64 << dims) {
            if step > 0 {
                let bit = step.trailing_zeros() as usize;
                signs[bit] = -signs[bit];
                let d = 2.0 * self.w_bar * signs[bit];
                x += &cols_x[bit] * d;
                u += &cols_u[bit] * d;
            }
            if !self.state_set.contains(&x, 1e-12)? || !self.input_set.contains(&u, 1e-12)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// All constraints with subgradients, or `None` when a constraint set has
    /// no closed-form containment test.
    pub fn constraints(&self, w: &DacWeights) -> Result<Option<Vec<Constraint>>> {
        let h = self.model.memory();
        let (n, m) = (self.model.n(), self.model.m());
        let r = self.model.responses(w);
        let (rx, ru) = radii_of(&r, self.w_bar);
        let (Some(mx), Some(mu)) =
            (self.state_set.containment_margins(&rx)?, self.input_set.containment_margins(&ru)?)
        else {
            return Ok(None);
        };
        let mut out = Vec::with_capacity(mx.len() + mu.len() + h);
        let signs_x: Vec<Matrix> = r.psi_x.iter().map(|p| p.map(sign)).collect();
        let signs_u: Vec<Matrix> = r.psi_u.iter().map(|p| p.map(sign)).collect();
        let zeros_x = vec![Matrix::zeros(n, n); 2 * h];
        let zeros_u = vec![Matrix::zeros(m, n); 2 * h];
        for c in mx {
            let gx: Vec<Matrix> = signs_x.iter().map(|s| scale_rows(s, &c.grad) * self.w_bar).collect();
            out.push(Constraint { value: c.value, grad: self.model.adjoint(&gx, &zeros_u) });
        }
        for c in mu {
            let gu: Vec<Matrix> = signs_u.iter().map(|s| scale_rows(s, &c.grad) * self.w_bar).collect();
            out.push(Constraint { value: c.value, grad: self.model.adjoint(&zeros_x, &gu) });
        }
        for (i, b) in w.blocks().iter().enumerate() {
            let (sigma, uvec, vvec) = top_singular(b);
            let mut grad = DacWeights::zeros(h, m, n);
            grad.blocks_mut()[i] = uvec * vvec.transpose();
            out.push(Constraint { value: sigma - self.class.radius(i + 1), grad });
        }
        Ok(Some(out))
    }

    /// A member of the set close to `candidate`. `anchor` must be a member.
    ///
    /// Outer approximation: violated constraints are linearised into cuts, the
    /// candidate is projected exactly onto the accumulated cuts, and the loop
    /// repeats until the iterate is a member. If the cap is reached first the
    /// iterate is pulled back toward `anchor` by bisection, so the output is
    /// always a member.
    pub fn project(&self, candidate: &DacWeights, anchor: &DacWeights) -> Result<Projection> {
        if self.member(candidate) {
            return Ok(Projection { weights: candidate.clone(), iterations: 0, used_bisection: false });
        }
        if !self.member(anchor) {
            return Err(SafeSetError::AnchorInfeasible);
        }
        let (h, m, n) = (candidate.memory(), candidate.m(), candidate.n());
        let c = candidate.to_flat();
        let d = c.len();
        let mut cut_rows: Vec<Vector> = Vec::new();
        let mut cut_rhs: Vec<f64> = Vec::new();
        let mut z = candidate.clone();
        let mut iterations = 0;
        let target = 1e-6;
        let mut reached = false;
        while iterations < self.max_proj_iters {
            iterations += 1;
            let Some(cons) = self.constraints(&z)? else { break };
            let zf = z.to_flat();
            let mut added = false;
            for con in cons.iter().filter(|k| k.value > 0.0) {
                if !con.value.is_finite() {
                    continue;
                }
                let s = con.grad.to_flat();
                if s.norm() == 0.0 {
                    continue;
                }
                // value + s.(Z - z) <= -target
                cut_rows.push(s.clone());
                cut_rhs.push(s.dot(&zf) - con.value - target);
                added = true;
            }
            if !added {
                reached = self.member(&z);
                break;
            }
            let k = cut_rows.len();
            let g = Matrix::from_fn(k, d, |i, j| -cut_rows[i][j]);
            let hvec = Vector::from_fn(k, |i, _| cut_rows[i].dot(&c) - cut_rhs[i]);
            let Some(y) = least_distance(&g, &hvec) else { break };
            let next = DacWeights::from_flat(h, m, n, (&c + y).as_slice())?;
            let moved = next.sub(&z).norm();
            z = next;
            if self.member(&z) {
                reached = true;
                break;
            }
            if moved <= 1e-15 * (1.0 + c.norm()) {
                break;
            }
        }
        if reached {
            return Ok(Projection { weights: z, iterations, used_bisection: false });
        }
        let dir = z.sub(anchor);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.member(&anchor.add_scaled(&dir, mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Projection { weights: anchor.add_scaled(&dir, lo), iterations, used_bisection: true })
    }

    /// The embedding of the linear policy `-K' x`, checked for membership.
    pub fn feasible_seed(&self, base: &StabilityCertificate, target: &StabilityCertificate) -> Result<DacWeights> {
        let w = crate::dac::dac_from_linear(base, target, self.model.memory())?;
        if self.member(&w) {
            return Ok(w);
        }
        Err(SafeSetError::SeedInfeasible(self.diagnose(&w)?))
    }

    pub fn diagnose(&self, w: &DacWeights) -> Result<SeedDiagnostic> {
        let (rx, ru) = self.radii(w);
        let worst = |set: &ConvexSet, r: &Vector| -> Result<f64> {
            Ok(match set.containment_margins(r)? {
                Some(ms) => ms.iter().map(|m| m.value).fold(f64::NEG_INFINITY, f64::max),
                None => {
                    if set.box_image_contained(r)? {
                        -0.0
                    } else {
                        f64::INFINITY
                    }
                }
            })
        };
        Ok(SeedDiagnostic {
            worst_state_margin: worst(&self.state_set, &rx)?,
            worst_input_margin: worst(&self.input_set, &ru)?,
            in_class: self.class.contains(w),
            state_radii: rx,
            input_radii: ru,
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn scale_rows(m: &Matrix, s: &Vector) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s[i])
}

/// `r_i = w_bar * sum_k ||row_i(Psi_k)||_1`
fn radii_of(r: &ResponseMatrices, w_bar: f64) -> (Vector, Vector) {
    let sum = |ps: &[Matrix]| {
        let mut acc = Vector::zeros(ps[0].nrows());
        for p in ps {
            acc += crate::linalg::row_l1(p);
        }
        acc * w_bar
    };
    (sum(&r.psi_x), sum(&r.psi_u))
}

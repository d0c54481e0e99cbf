//! Linear time-invariant plant, strong-stability certificates for state
//! feedback gains, and a sufficient safety test for linear policies.

use nalgebra::Complex;
use thiserror::Error;

use crate::geometry::{ConvexSet, GeometryError, NormTag};
use crate::linalg::{inf_norm, powers, row_l1, spectral_norm, spectral_radius};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtiError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: String, got: String },
    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),
    #[error("disturbance bound must be finite and non-negative, got {0}")]
    InvalidBound(f64),
    #[error("disturbance with sup-norm {norm} exceeds the bound {bound}")]
    DisturbanceTooLarge { norm: f64, bound: f64 },
    #[error("closed loop is not strictly stable (spectral radius {0})")]
    NotStabilizing(f64),
    #[error("could not build a strong-stability certificate: {0}")]
    CertificateFailed(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

type Result<T> = std::result::Result<T, LtiError>;

fn shape(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// `x_{t+1} = A x_t + B u_t + w_t` with `||w_t||_inf <= w_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
    w_bar: f64,
}

/// Disturbance recovered from an observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredDisturbance {
    pub w: Vector,
    /// False when `||w||_inf` exceeds the declared bound by more than `1e-9`.
    pub within_bound: bool,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, w_bar: f64) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(LtiError::DimensionMismatch { what: "A", expected: "square".into(), got: shape(&a) });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(LtiError::DimensionMismatch {
                what: "B",
                expected: format!("{}xm", a.nrows()),
                got: shape(&b),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("A"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("B"));
        }
        if !w_bar.is_finite() || w_bar < 0.0 {
            return Err(LtiError::InvalidBound(w_bar));
        }
        Ok(LtiSystem { a, b, w_bar })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn w_bar(&self) -> f64 {
        self.w_bar
    }

    /// `max(||B||, 1)`
    pub fn kappa_b(&self) -> f64 {
        spectral_norm(&self.b).max(1.0)
    }

    pub fn check_gain(&self, k: &Matrix) -> Result<()> {
        if k.nrows() != self.m() || k.ncols() != self.n() {
            return Err(LtiError::DimensionMismatch {
                what: "K",
                expected: format!("{}x{}", self.m(), self.n()),
                got: shape(k),
            });
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("K"));
        }
        Ok(())
    }

    /// `A - B K`
    pub fn closed_loop(&self, k: &Matrix) -> Result<Matrix> {
        self.check_gain(k)?;
        Ok(&self.a - &self.b * k)
    }

    fn check_vec(&self, what: &'static str, v: &Vector, len: usize) -> Result<()> {
        if v.len() != len {
            return Err(LtiError::DimensionMismatch { what, expected: len.to_string(), got: v.len().to_string() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(LtiError::NonFinite(what));
        }
        Ok(())
    }

    pub fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        self.check_vec("x", x, self.n())?;
        self.check_vec("u", u, self.m())?;
        self.check_vec("w", w, self.n())?;
        let norm = inf_norm(w);
        if norm > self.w_bar + 1e-12 {
            return Err(LtiError::DisturbanceTooLarge { norm, bound: self.w_bar });
        }
        Ok(&self.a * x + &self.b * u + w)
    }

    /// `w_t = x_{t+1} - A x_t - B u_t`
    pub fn recover_disturbance(&self, x: &Vector, u: &Vector, x_next: &Vector) -> Result<RecoveredDisturbance> {
        self.check_vec("x", x, self.n())?;
        self.check_vec("u", u, self.m())?;
        self.check_vec("x_next", x_next, self.n())?;
        let w = x_next - &self.a * x - &self.b * u;
        let within_bound = inf_norm(&w) <= self.w_bar + 1e-9;
        Ok(RecoveredDisturbance { w, within_bound })
    }
}

/// Evidence that `A - B K = H L H^{-1}` with `||L|| <= 1 - gamma` and
/// `||K||, ||H||, ||H^{-1}|| <= kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    k: Matrix,
    a_k: Matrix,
    h: Matrix,
    h_inv: Matrix,
    l: Matrix,
    kappa: f64,
    gamma: f64,
    kappa_b: f64,
    spectral_radius: f64,
}

impl StabilityCertificate {
    pub fn k(&self) -> &Matrix {
        &self.k
    }
    /// Closed-loop matrix `A - B K`.
    pub fn a_k(&self) -> &Matrix {
        &self.a_k
    }
    pub fn h(&self) -> &Matrix {
        &self.h
    }
    pub fn h_inv(&self) -> &Matrix {
        &self.h_inv
    }
    pub fn l(&self) -> &Matrix {
        &self.l
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn kappa_b(&self) -> f64 {
        self.kappa_b
    }
    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// Constants valid for both gains at once: the larger kappa and smaller gamma.
    pub fn joint_constants(&self, other: &StabilityCertificate) -> (f64, f64) {
        (self.kappa.max(other.kappa), self.gamma.min(other.gamma))
    }
}

/// Builds a strong-stability certificate for `K`.
///
/// Diagonalisable closed loops use a real block-diagonal eigenbasis, so
/// `1 - gamma` equals the spectral radius up to rounding. Defective or badly
/// conditioned cases fall back to a scaled real Schur form.
pub fn certify_strong_stability(sys: &LtiSystem, k: &Matrix) -> Result<StabilityCertificate> {
    let a_k = sys.closed_loop(k)?;
    let rho = spectral_radius(&a_k);
    if !(rho < 1.0) {
        return Err(LtiError::NotStabilizing(rho));
    }
    let scale = 1.0_f64.max(spectral_norm(&a_k));
    let attempt = |h: Matrix| -> Option<(Matrix, Matrix, Matrix)> {
        let h_inv = h.clone().try_inverse()?;
        let l = &h_inv * &a_k * &h;
        let recon = (&h * &l * &h_inv - &a_k).amax();
        if !(recon <= 1e-10 * scale) || !(spectral_norm(&l) < 1.0) {
            return None;
        }
        Some((h, h_inv, l))
    };
    let found = eigen_basis(&a_k)
        .and_then(|h| attempt(h))
        .or_else(|| schur_basis(&a_k, rho).and_then(|h| attempt(h)));
    let Some((h, h_inv, l)) = found else {
        return Err(LtiError::CertificateFailed("no well-conditioned similarity found".into()));
    };
    // balance so that ||H|| = ||H^{-1}||
    let c = (spectral_norm(&h_inv) / spectral_norm(&h)).sqrt();
    let h = h * c;
    let h_inv = h_inv / c;
    let gamma = 1.0 - spectral_norm(&l);
    let kappa = spectral_norm(k).max(spectral_norm(&h)).max(spectral_norm(&h_inv)).max(1.0);
    Ok(StabilityCertificate {
        k: k.clone(),
        a_k,
        h,
        h_inv,
        l,
        kappa,
        gamma,
        kappa_b: sys.kappa_b(),
        spectral_radius: rho,
    })
}

/// Rotates `v = p + i q` by a phase that makes `p` orthogonal to `q`, then normalises the pair.
fn real_pair(p: Vector, q: Vector) -> (Vector, Vector) {
    let theta = 0.5 * (-2.0 * p.dot(&q)).atan2(p.norm_squared() - q.norm_squared());
    let (s, c) = theta.sin_cos();
    let p2 = &p * c - &q * s;
    let q2 = &p * s + &q * c;
    let norm = (0.5 * (p2.norm_squared() + q2.norm_squared())).sqrt();
    (p2 / norm, q2 / norm)
}

/// Columns of a real eigenbasis (complex pairs as `[Re v, Im v]`), or `None`
/// when the matrix looks defective.
fn eigen_basis(a: &Matrix) -> Option<Matrix> {
    let n = a.nrows();
    let scale = 1.0_f64.max(spectral_norm(a));
    let eig: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    let cluster_tol = 1e-8 * scale;
    let null_tol = 1e-7 * scale;
    let mut used = vec![false; n];
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    for i in 0..n {
        if used[i] {
            continue;
        }
        let lam = eig[i];
        let members: Vec<usize> = (0..n).filter(|&j| !used[j] && (eig[j] - lam).norm() <= cluster_tol).collect();
        for &j in &members {
            used[j] = true;
        }
        let mult = members.len();
        if lam.im.abs() <= cluster_tol {
            let shifted = a - Matrix::identity(n, n) * lam.re;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
            for &idx in order.iter().take(mult) {
                if svd.singular_values[idx] > null_tol {
                    return None;
                }
                let v = v_t.row(idx).transpose();
                cols.push(&v / v.norm());
            }
        } else if lam.im > 0.0 {
            let ac = a.map(|x| Complex::new(x, 0.0));
            let shifted = ac - nalgebra::DMatrix::<Complex<f64>>::identity(n, n) * lam;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
            for &idx in order.iter().take(mult) {
                if svd.singular_values[idx] > null_tol {
                    return None;
                }
                let v: Vec<Complex<f64>> = v_t.row(idx).iter().map(|z| z.conj()).collect();
                let p = Vector::from_iterator(n, v.iter().map(|z| z.re));
                let q = Vector::from_iterator(n, v.iter().map(|z| z.im));
                let (p, q) = real_pair(p, q);
                cols.push(p);
                cols.push(q);
            }
            // the conjugate cluster is covered by the same real pair
            for j in 0..n {
                if !used[j] && (eig[j] - lam.conj()).norm() <= cluster_tol {
                    used[j] = true;
                }
            }
        }
    }
    if cols.len() != n {
        return None;
    }
    let h = Matrix::from_columns(&cols);
    let sv = h.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return None;
    }
    Some(h)
}

/// Real Schur form with standardised 2x2 blocks, scaled block-diagonally until
/// the off-diagonal part is small enough for `||L|| <= rho + (1 - rho) / 2`.
fn schur_basis(a: &Matrix, rho: f64) -> Option<Matrix> {
    let n = a.nrows();
    let (q, t) = a.clone().schur().unpack();
    let mut s = Matrix::identity(n, n);
    let mut block_of = vec![0usize; n];
    let mut i = 0;
    let mut blk = 0;
    let tiny = 1e-13 * (1.0 + t.amax());
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > tiny {
            let (ta, tb, tc, td) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let alpha = 0.5 * (ta + td);
            let disc = 0.25 * (ta - td).powi(2) + tb * tc;
            if disc >= 0.0 {
                return None;
            }
            let beta = (-disc).sqrt();
            // eigenvector for alpha + i beta
            let (p, qv) = if tb.abs() >= tc.abs() {
                (Vector::from_vec(vec![tb, alpha - ta]), Vector::from_vec(vec![0.0, beta]))
            } else {
                (Vector::from_vec(vec![alpha - td, tc]), Vector::from_vec(vec![beta, 0.0]))
            };
            let (p, qv) = real_pair(p, qv);
            s.view_mut((i, i), (2, 1)).copy_from(&p);
            s.view_mut((i, i + 1), (2, 1)).copy_from(&qv);
            block_of[i] = blk;
            block_of[i + 1] = blk;
            i += 2;
        } else {
            block_of[i] = blk;
            i += 1;
        }
        blk += 1;
    }
    let s_inv = s.clone().try_inverse()?;
    let t2 = &s_inv * &t * &s;
    let target = rho + 0.5 * (1.0 - rho);
    let mut delta = 1.0_f64;
    for _ in 0..80 {
        let d = Matrix::from_diagonal(&Vector::from_iterator(n, block_of.iter().map(|&b| delta.powi(b as i32))));
        let d_inv = Matrix::from_diagonal(&Vector::from_iterator(
            n,
            block_of.iter().map(|&b| delta.powi(-(b as i32))),
        ));
        let l = &d_inv * &t2 * &d;
        if spectral_norm(&l) <= target {
            return Some(&q * &s * d);
        }
        delta *= 0.5;
    }
    None
}

/// Constraint sets for the state and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub state_set: ConvexSet,
    pub input_set: ConvexSet,
}

impl SafetySpec {
    pub fn new(sys: &LtiSystem, state_set: ConvexSet, input_set: ConvexSet) -> Result<Self> {
        if state_set.dim() != sys.n() {
            return Err(LtiError::DimensionMismatch {
                what: "state set",
                expected: sys.n().to_string(),
                got: state_set.dim().to_string(),
            });
        }
        if input_set.dim() != sys.m() {
            return Err(LtiError::DimensionMismatch {
                what: "input set",
                expected: sys.m().to_string(),
                got: input_set.dim().to_string(),
            });
        }
        Ok(SafetySpec { state_set, input_set })
    }
}

/// Truncation horizon for the reachable-radius bound of a linear policy.
pub const LINEAR_SAFETY_HORIZON: usize = 200;

/// Per-coordinate bounds on `|x_t|` and `|u_t|` under `u = -K' x`, valid for every `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachRadii {
    pub state: Vector,
    pub input: Vector,
}

pub fn linear_policy_radii(sys: &LtiSystem, cert: &StabilityCertificate, horizon: usize) -> ReachRadii {
    let n = sys.n();
    let w = sys.w_bar();
    let pows = powers(cert.a_k(), horizon);
    let mut rx = Vector::zeros(n);
    let mut ru = Vector::zeros(sys.m());
    for p in &pows {
        rx += row_l1(p) * w;
        ru += row_l1(&(cert.k() * p)) * w;
    }
    let (kappa, gamma) = (cert.kappa(), cert.gamma());
    let decay = (1.0 - gamma).powi(horizon as i32) / gamma;
    let tail_x = w * (n as f64).sqrt() * kappa.powi(2) * decay;
    let tail_u = w * (n as f64).sqrt() * kappa.powi(3) * decay;
    ReachRadii { state: rx.add_scalar(tail_x), input: ru.add_scalar(tail_u) }
}

fn radii_fit(spec: &SafetySpec, radii: &ReachRadii, eps: f64) -> Result<bool> {
    Ok(spec.state_set.shrink(eps, NormTag::LInf)?.box_image_contained(&radii.state)?
        && spec.input_set.shrink(eps, NormTag::LInf)?.box_image_contained(&radii.input)?)
}

/// Whether `u = -K' x` keeps the reachable box inside the `eps`-shrunk sets.
/// Cheaper than [`certify_linear_policy_safety`] when only a yes/no is needed.
pub fn linear_policy_fits(sys: &LtiSystem, cert: &StabilityCertificate, spec: &SafetySpec, eps: f64) -> Result<bool> {
    radii_fit(spec, &linear_policy_radii(sys, cert, LINEAR_SAFETY_HORIZON), eps)
}

/// Largest `eps` such that the reachable box of `u = -K' x` fits inside the
/// `eps`-shrunk constraint sets, or `None` if it does not fit even at `eps = 0`.
pub fn certify_linear_policy_safety(
    sys: &LtiSystem,
    cert: &StabilityCertificate,
    spec: &SafetySpec,
) -> Result<Option<f64>> {
    let radii = linear_policy_radii(sys, cert, LINEAR_SAFETY_HORIZON);
    let fits = |eps: f64| radii_fit(spec, &radii, eps);
    if !fits(0.0)? {
        return Ok(None);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while fits(hi)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Ok(Some(hi));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

//! Convex sets with shrink/expand by a norm ball, support functions,
//! projections, and exact tests for whether a symmetric box fits inside.

pub mod lp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{inf_norm, l1_norm};
use crate::{Matrix, Vector};
use lp::LpOutcome;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid set: {0}")]
    InvalidSet(String),
    #[error("set does not contain the origin")]
    OriginExcluded,
    #[error("margin must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("operation on an empty set")]
    EmptySet,
}

type Result<T> = std::result::Result<T, GeometryError>;

/// Norm of the ball used to shrink or expand a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormTag {
    #[default]
    LInf,
    L2,
}

impl NormTag {
    /// Dual norm of `y`: the support of the unit ball of `self`.
    pub fn dual(self, y: &Vector) -> f64 {
        match self {
            NormTag::LInf => l1_norm(y),
            NormTag::L2 => y.norm(),
        }
    }
}

/// A closed convex subset of `R^n`.
///
/// User-facing variants are built through the validating constructors
/// ([`ConvexSet::new_box`], [`ConvexSet::l2_ball`], [`ConvexSet::polytope`]),
/// which require the origin to lie in the set. The remaining variants only
/// arise from [`ConvexSet::shrink`] and [`ConvexSet::expand`].
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Box { lower: Vector, upper: Vector },
    L2Ball { center: Vector, radius: f64 },
    /// `{x : normals x <= offsets}`
    Polytope { normals: Matrix, offsets: Vector },
    /// `{x : || |x - center| + margin || <= radius}`, the l2 ball shrunk by an l-inf ball.
    ShrunkL2Ball { center: Vector, radius: f64, margin: f64 },
    /// Minkowski sum of `base` with a `delta`-ball of `norm`.
    Expanded { base: Box<ConvexSet>, delta: f64, norm: NormTag },
    /// Points whose l-inf `delta`-ball lies in `base`.
    Eroded { base: Box<ConvexSet>, delta: f64 },
    Empty { dim: usize },
}

/// One scalar constraint `value <= 0` of a box-containment test and its
/// gradient with respect to the box radii.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentMargin {
    pub value: f64,
    pub grad: Vector,
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_margin(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(GeometryError::InvalidMargin(delta));
    }
    Ok(())
}

/// Iterates the `2^n` sign vectors in `{-1, 1}^n`.
fn sign_vertices(n: usize) -> impl Iterator<Item = Vector> {
    (0u64..(1u64 << n)).map(move |mask| {
        Vector::from_iterator(n, (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }))
    })
}

impl ConvexSet {
    pub fn new_box(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(GeometryError::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if !all_finite(&lower) || !all_finite(&upper) {
            return Err(GeometryError::InvalidSet("box bounds must be finite".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(GeometryError::InvalidSet("box has lower > upper".into()));
        }
        if lower.iter().any(|&l| l > 0.0) || upper.iter().any(|&u| u < 0.0) {
            return Err(GeometryError::OriginExcluded);
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn l2_ball(center: Vector, radius: f64) -> Result<Self> {
        if !all_finite(&center) || !radius.is_finite() || radius <= 0.0 {
            return Err(GeometryError::InvalidSet("ball needs finite center and positive radius".into()));
        }
        if center.norm() > radius {
            return Err(GeometryError::OriginExcluded);
        }
        Ok(ConvexSet::L2Ball { center, radius })
    }

    pub fn polytope(normals: Matrix, offsets: Vector) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(GeometryError::DimensionMismatch { expected: normals.nrows(), got: offsets.len() });
        }
        if normals.iter().any(|v| !v.is_finite()) || !all_finite(&offsets) {
            return Err(GeometryError::InvalidSet("polytope data must be finite".into()));
        }
        if offsets.iter().any(|&b| b < 0.0) {
            return Err(GeometryError::OriginExcluded);
        }
        Ok(ConvexSet::Polytope { normals, offsets })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::L2Ball { center, .. } | ConvexSet::ShrunkL2Ball { center, .. } => center.len(),
            ConvexSet::Polytope { normals, .. } => normals.ncols(),
            ConvexSet::Expanded { base, .. } | ConvexSet::Eroded { base, .. } => base.dim(),
            ConvexSet::Empty { dim } => *dim,
        }
    }

    /// True only when emptiness was detected while building the set.
    pub fn is_empty(&self) -> bool {
        matches!(self, ConvexSet::Empty { .. })
    }

    fn check_dim(&self, v: &Vector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    fn empty(&self) -> Self {
        ConvexSet::Empty { dim: self.dim() }
    }

    /// `{x : x + y in self for every ||y||_norm <= delta}`.
    pub fn shrink(&self, delta: f64, norm: NormTag) -> Result<Self> {
        check_margin(delta)?;
        if delta == 0.0 {
            return Ok(self.clone());
        }
        let n = self.dim() as f64;
        Ok(match self {
            ConvexSet::Box { lower, upper } => {
                // Both norms reach `delta` along each axis.
                let lo = lower.add_scalar(delta);
                let hi = upper.add_scalar(-delta);
                if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                    self.empty()
                } else {
                    ConvexSet::Box { lower: lo, upper: hi }
                }
            }
            ConvexSet::L2Ball { center, radius } => match norm {
                NormTag::L2 if *radius >= delta => ConvexSet::L2Ball { center: center.clone(), radius: radius - delta },
                NormTag::L2 => self.empty(),
                NormTag::LInf if n * delta * delta <= radius * radius => {
                    ConvexSet::ShrunkL2Ball { center: center.clone(), radius: *radius, margin: delta }
                }
                NormTag::LInf => self.empty(),
            },
            ConvexSet::Polytope { normals, offsets } => {
                let b = Vector::from_iterator(
                    offsets.len(),
                    normals
                        .row_iter()
                        .zip(offsets.iter())
                        .map(|(a, &b)| b - delta * norm.dual(&a.transpose())),
                );
                if lp::feasible(normals, &b) {
                    ConvexSet::Polytope { normals: normals.clone(), offsets: b }
                } else {
                    self.empty()
                }
            }
            ConvexSet::ShrunkL2Ball { center, radius, margin } => match norm {
                NormTag::LInf => {
                    let m = margin + delta;
                    if n * m * m <= radius * radius {
                        ConvexSet::ShrunkL2Ball { center: center.clone(), radius: *radius, margin: m }
                    } else {
                        self.empty()
                    }
                }
                NormTag::L2 => {
                    return Err(GeometryError::Unsupported("l2 erosion of an l-inf-shrunk ball".into()))
                }
            },
            // (K + aB) - bB = K + (a - b)B for convex K and B, and erosions add up
            ConvexSet::Expanded { base, delta: grown, norm: NormTag::LInf } if norm == NormTag::LInf => {
                if delta <= *grown {
                    return base.expand(grown - delta, NormTag::LInf);
                }
                return base.shrink(delta - grown, NormTag::LInf);
            }
            ConvexSet::Eroded { base, delta: eroded } if norm == NormTag::LInf => {
                ConvexSet::Eroded { base: base.clone(), delta: eroded + delta }
            }
            ConvexSet::Expanded { .. } | ConvexSet::Eroded { .. } => match norm {
                NormTag::LInf => ConvexSet::Eroded { base: Box::new(self.clone()), delta },
                NormTag::L2 => return Err(GeometryError::Unsupported("l2 erosion of an implicit set".into())),
            },
            ConvexSet::Empty { .. } => self.clone(),
        })
    }

    /// Minkowski sum with the `delta`-ball of `norm`.
    pub fn expand(&self, delta: f64, norm: NormTag) -> Result<Self> {
        check_margin(delta)?;
        if delta == 0.0 {
            return Ok(self.clone());
        }
        Ok(match (self, norm) {
            (ConvexSet::Box { lower, upper }, NormTag::LInf) => {
                ConvexSet::Box { lower: lower.add_scalar(-delta), upper: upper.add_scalar(delta) }
            }
            (ConvexSet::L2Ball { center, radius }, NormTag::L2) => {
                ConvexSet::L2Ball { center: center.clone(), radius: radius + delta }
            }
            (ConvexSet::Empty { .. }, _) => self.clone(),
            (ConvexSet::Expanded { base, delta: grown, norm: inner }, _) if *inner == norm => {
                ConvexSet::Expanded { base: base.clone(), delta: grown + delta, norm }
            }
            _ => ConvexSet::Expanded { base: Box::new(self.clone()), delta, norm },
        })
    }

    /// Support function `sup_{x in self} <y, x>`; `+inf` if unbounded, `-inf` if empty.
    pub fn support(&self, y: &Vector) -> Result<f64> {
        self.check_dim(y)?;
        Ok(match self {
            ConvexSet::Box { lower, upper } => {
                (0..y.len()).map(|i| (y[i] * lower[i]).max(y[i] * upper[i])).sum()
            }
            ConvexSet::L2Ball { center, radius } => y.dot(center) + radius * y.norm(),
            ConvexSet::Polytope { normals, offsets } => polytope_support(normals, offsets, y),
            ConvexSet::ShrunkL2Ball { center, radius, margin } => {
                y.dot(center) + shrunk_ball_support(&y.abs(), *radius, *margin)
            }
            ConvexSet::Expanded { base, delta, norm } => {
                let h = base.support(y)?;
                if h == f64::NEG_INFINITY {
                    h
                } else {
                    h + delta * norm.dual(y)
                }
            }
            ConvexSet::Eroded { base, delta } => Self::eroded_support(base, *delta, y)?,
            ConvexSet::Empty { .. } => f64::NEG_INFINITY,
        })
    }

    /// Kelley cutting planes: maximise `<y, x>` over tangent cuts of the
    /// eroded set until the maximiser is feasible to within about `1e-9`.
    fn eroded_support(base: &ConvexSet, delta: f64, y: &Vector) -> Result<f64> {
        let n = y.len();
        let mut rows: Vec<Vector> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut e = Vector::zeros(n);
                e[i] = s;
                let h = base.support(&e)?;
                if h == f64::NEG_INFINITY {
                    return Ok(h);
                }
                if h.is_finite() {
                    rows.push(e);
                    rhs.push(h - delta);
                }
            }
        }
        // the simplex pivots at 1e-11, so ask for less than that
        let tol = 1e-9 * (1.0 + base.rough_scale());
        let mut best = f64::INFINITY;
        for _ in 0..500 {
            let a = Matrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
            let b = Vector::from_vec(rhs.clone());
            let x = match lp::maximize(y, &a, &b) {
                LpOutcome::Optimal { x, value } => {
                    best = value;
                    x
                }
                LpOutcome::Unbounded => return Ok(f64::INFINITY),
                LpOutcome::Infeasible => return Ok(f64::NEG_INFINITY),
            };
            // deepest violated corner of the delta-cube around x
            let mut worst: Option<(f64, Vector)> = None;
            for v in sign_vertices(n) {
                let q = &x + v * delta;
                let p = base.project_point(&q)?;
                let d = (&q - &p).norm();
                if worst.as_ref().is_none_or(|(wd, _)| d > *wd) {
                    worst = Some((d, q - p));
                }
            }
            let (d, normal) = worst.expect("at least one vertex");
            if d <= tol {
                break;
            }
            let h = base.support(&normal)?;
            rhs.push(h - delta * l1_norm(&normal));
            rows.push(normal);
        }
        Ok(best)
    }

    fn rough_scale(&self) -> f64 {
        match self {
            ConvexSet::Box { lower, upper } => inf_norm(lower).max(inf_norm(upper)),
            ConvexSet::L2Ball { center, radius } | ConvexSet::ShrunkL2Ball { center, radius, .. } => {
                center.norm() + radius
            }
            ConvexSet::Polytope { offsets, .. } => inf_norm(offsets),
            ConvexSet::Expanded { base, delta, .. } => base.rough_scale() + delta,
            ConvexSet::Eroded { base, .. } => base.rough_scale(),
            ConvexSet::Empty { .. } => 0.0,
        }
    }

    /// Membership with absolute slack `tol`.
    ///
    /// Exact for the closed-form variants and for l-inf expansions of them.
    /// Nested implicit sets fall back to iterative projections and are only
    /// accurate to roughly `1e-9`.
    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        Ok(match self {
            ConvexSet::Box { lower, upper } => {
                (0..x.len()).all(|i| x[i] >= lower[i] - tol && x[i] <= upper[i] + tol)
            }
            ConvexSet::L2Ball { center, radius } => (x - center).norm() <= radius + tol,
            ConvexSet::Polytope { normals, offsets } => {
                (normals * x - offsets).iter().all(|&v| v <= tol)
            }
            ConvexSet::ShrunkL2Ball { center, radius, margin } => {
                (x - center).abs().add_scalar(*margin).norm() <= radius + tol
            }
            ConvexSet::Expanded { base, delta, norm: NormTag::L2 } => match base.project_point(x) {
                Ok(p) => (x - p).norm() <= delta + tol,
                Err(GeometryError::EmptySet) => false,
                Err(e) => return Err(e),
            },
            ConvexSet::Expanded { base, delta, norm: NormTag::LInf } => base.meets_box(x, *delta, tol)?,
            ConvexSet::Eroded { base, delta } => {
                for v in sign_vertices(x.len()) {
                    if !base.contains(&(x + v * *delta), tol)? {
                        return Ok(false);
                    }
                }
                true
            }
            ConvexSet::Empty { .. } => false,
        })
    }

    /// Whether the l-inf ball of radius `delta` around `x` meets `self`.
    fn meets_box(&self, x: &Vector, delta: f64, tol: f64) -> Result<bool> {
        Ok(match self {
            ConvexSet::Box { lower, upper } => {
                (0..x.len()).all(|i| x[i] - delta <= upper[i] + tol && x[i] + delta >= lower[i] - tol)
            }
            ConvexSet::L2Ball { center, radius } => {
                (x - center).abs().add_scalar(-delta).map(|v| v.max(0.0)).norm() <= radius + tol
            }
            ConvexSet::ShrunkL2Ball { center, radius, margin } => {
                (x - center)
                    .abs()
                    .add_scalar(-delta)
                    .map(|v| v.max(0.0))
                    .add_scalar(*margin)
                    .norm()
                    <= radius + tol
            }
            ConvexSet::Polytope { normals, offsets } => {
                let n = x.len();
                let m = normals.nrows();
                let mut a = Matrix::zeros(m + 2 * n, n);
                let mut b = Vector::zeros(m + 2 * n);
                a.rows_mut(0, m).copy_from(normals);
                b.rows_mut(0, m).copy_from(&offsets.add_scalar(tol));
                for i in 0..n {
                    a[(m + i, i)] = 1.0;
                    b[m + i] = x[i] + delta;
                    a[(m + n + i, i)] = -1.0;
                    b[m + n + i] = -(x[i] - delta);
                }
                lp::feasible(&a, &b)
            }
            ConvexSet::Expanded { base, delta: d2, norm: NormTag::LInf } => base.meets_box(x, delta + d2, tol)?,
            ConvexSet::Empty { .. } => false,
            _ => {
                let cube = ConvexSet::Box { lower: x.add_scalar(-delta), upper: x.add_scalar(delta) };
                match alternating_distance(&cube, self)? {
                    Some(d) => d <= tol.max(1e-9),
                    None => false,
                }
            }
        })
    }

    /// Euclidean projection onto the set.
    pub fn project_point(&self, p: &Vector) -> Result<Vector> {
        self.check_dim(p)?;
        match self {
            ConvexSet::Box { lower, upper } => {
                Ok(Vector::from_iterator(p.len(), (0..p.len()).map(|i| p[i].clamp(lower[i], upper[i]))))
            }
            ConvexSet::L2Ball { center, radius } => {
                let d = p - center;
                let nd = d.norm();
                if nd <= *radius {
                    Ok(p.clone())
                } else {
                    Ok(center + d * (radius / nd))
                }
            }
            ConvexSet::Polytope { normals, offsets } => Ok(dykstra_polytope(normals, offsets, p)),
            ConvexSet::ShrunkL2Ball { center, radius, margin } => {
                Ok(project_shrunk_ball(center, *radius, *margin, p))
            }
            ConvexSet::Expanded { base, delta, norm: NormTag::L2 } => {
                let q = base.project_point(p)?;
                let d = p - &q;
                let nd = d.norm();
                if nd <= *delta {
                    Ok(p.clone())
                } else {
                    Ok(q + d * (delta / nd))
                }
            }
            ConvexSet::Expanded { base, delta, norm: NormTag::LInf } => {
                // block-coordinate descent on p ~ z + s, z in base, |s|_inf <= delta
                let mut s = Vector::zeros(p.len());
                let mut x = p.clone();
                for _ in 0..20_000 {
                    let z = base.project_point(&(p - &s))?;
                    s = (p - &z).map(|v| v.clamp(-delta, *delta));
                    let nx = &z + &s;
                    let change = (&nx - &x).norm();
                    x = nx;
                    if change <= 1e-14 * (1.0 + p.norm()) {
                        break;
                    }
                }
                Ok(x)
            }
            ConvexSet::Eroded { base, delta } => {
                if self.contains(p, 0.0)? {
                    return Ok(p.clone());
                }
                let shifts: Vec<Vector> = sign_vertices(p.len()).map(|v| v * *delta).collect();
                let mut x = p.clone();
                let mut incr = vec![Vector::zeros(p.len()); shifts.len()];
                for _ in 0..20_000 {
                    let prev = x.clone();
                    for (k, v) in shifts.iter().enumerate() {
                        let y = &x + &incr[k];
                        let nx = base.project_point(&(&y + v))? - v;
                        incr[k] = y - &nx;
                        x = nx;
                    }
                    if (&x - &prev).norm() <= 1e-14 * (1.0 + p.norm() + self.rough_scale()) {
                        break;
                    }
                }
                Ok(x)
            }
            ConvexSet::Empty { .. } => Err(GeometryError::EmptySet),
        }
    }

    /// Closed-form constraints equivalent to `box(radii) subset self`, where
    /// `box(r) = {x : |x_i| <= r_i}`. `None` for implicit sets.
    pub fn containment_margins(&self, radii: &Vector) -> Result<Option<Vec<ContainmentMargin>>> {
        self.check_dim(radii)?;
        let n = radii.len();
        let ball = |shift: Vector, radius: f64| {
            let norm = shift.norm();
            let grad = if norm > 0.0 { &shift / norm } else { Vector::zeros(n) };
            vec![ContainmentMargin { value: norm - radius, grad }]
        };
        Ok(Some(match self {
            ConvexSet::Box { lower, upper } => (0..n)
                .map(|i| {
                    let mut grad = Vector::zeros(n);
                    grad[i] = 1.0;
                    ContainmentMargin { value: radii[i] - upper[i].min(-lower[i]), grad }
                })
                .collect(),
            ConvexSet::Polytope { normals, offsets } => normals
                .row_iter()
                .zip(offsets.iter())
                .map(|(a, &b)| {
                    let grad = a.transpose().abs();
                    ContainmentMargin { value: grad.dot(radii) - b, grad }
                })
                .collect(),
            ConvexSet::L2Ball { center, radius } => ball(radii + center.abs(), *radius),
            ConvexSet::ShrunkL2Ball { center, radius, margin } => {
                ball((radii + center.abs()).add_scalar(*margin), *radius)
            }
            ConvexSet::Empty { .. } => {
                vec![ContainmentMargin { value: f64::INFINITY, grad: Vector::zeros(n) }]
            }
            ConvexSet::Expanded { .. } | ConvexSet::Eroded { .. } => return Ok(None),
        }))
    }

    /// Exact test of `{x : |x_i| <= radii_i} subset self`.
    pub fn box_image_contained(&self, radii: &Vector) -> Result<bool> {
        if radii.iter().any(|&r| !r.is_finite() || r < 0.0) {
            return Err(GeometryError::InvalidMargin(radii.min()));
        }
        if let Some(margins) = self.containment_margins(radii)? {
            return Ok(margins.iter().all(|m| m.value <= 0.0));
        }
        for v in sign_vertices(radii.len()) {
            if !self.contains(&v.component_mul(radii), 1e-12)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// `max <v, t> - margin * sum(v)` over `||t|| <= radius, t >= margin`, for `v >= 0`.
fn shrunk_ball_support(v: &Vector, radius: f64, margin: f64) -> f64 {
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    let t_of = |lam: f64| v.map(|vi| margin.max(lam * vi));
    let (mut lo, mut hi) = (0.0, radius / nv);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_of(mid).norm() <= radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let t = t_of(lo);
    v.dot(&t.add_scalar(-margin))
}

fn project_shrunk_ball(center: &Vector, radius: f64, margin: f64, p: &Vector) -> Vector {
    let d = p - center;
    let q = d.abs().add_scalar(margin);
    if q.norm() <= radius {
        return p.clone();
    }
    // t = max(margin, mu q) with ||t|| = radius
    let t_of = |mu: f64| q.map(|qi| margin.max(mu * qi));
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_of(mid).norm() <= radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-17 {
            break;
        }
    }
    let t = t_of(lo);
    Vector::from_iterator(
        p.len(),
        (0..p.len()).map(|i| center[i] + d[i].signum() * (t[i] - margin)),
    )
}

fn polytope_support(normals: &Matrix, offsets: &Vector, y: &Vector) -> f64 {
    if normals.ncols() <= 2 {
        if let Some(vertices) = polytope_vertices(normals, offsets) {
            return vertices.iter().map(|v| y.dot(v)).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    match lp::maximize(y, normals, offsets) {
        LpOutcome::Optimal { value, .. } => value,
        LpOutcome::Unbounded => f64::INFINITY,
        LpOutcome::Infeasible => f64::NEG_INFINITY,
    }
}

/// Vertices of a bounded polytope in one or two dimensions; `None` if unbounded,
/// empty, or of higher dimension.
pub fn polytope_vertices(normals: &Matrix, offsets: &Vector) -> Option<Vec<Vector>> {
    let n = normals.ncols();
    let m = normals.nrows();
    let feasible = |x: &Vector| (normals * x - offsets).iter().all(|&v| v <= 1e-9 * (1.0 + offsets.amax()));
    match n {
        1 => {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for i in 0..m {
                let a = normals[(i, 0)];
                if a > 0.0 {
                    hi = hi.min(offsets[i] / a);
                } else if a < 0.0 {
                    lo = lo.max(offsets[i] / a);
                } else if offsets[i] < 0.0 {
                    return None;
                }
            }
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return None;
            }
            Some(vec![Vector::from_element(1, lo), Vector::from_element(1, hi)])
        }
        2 => {
            let mut angles: Vec<f64> = normals
                .row_iter()
                .filter(|r| r[0] != 0.0 || r[1] != 0.0)
                .map(|r| r[1].atan2(r[0]))
                .collect();
            if angles.len() < 3 {
                return None;
            }
            angles.sort_by(|a, b| a.total_cmp(b));
            let mut gap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
            for w in angles.windows(2) {
                gap = gap.max(w[1] - w[0]);
            }
            if gap >= std::f64::consts::PI - 1e-12 {
                return None;
            }
            let mut out = Vec::new();
            for i in 0..m {
                for j in (i + 1)..m {
                    let (a, b, c, d) = (normals[(i, 0)], normals[(i, 1)], normals[(j, 0)], normals[(j, 1)]);
                    let det = a * d - b * c;
                    if det.abs() < 1e-14 {
                        continue;
                    }
                    let x = Vector::from_vec(vec![
                        (offsets[i] * d - b * offsets[j]) / det,
                        (a * offsets[j] - c * offsets[i]) / det,
                    ]);
                    if feasible(&x) {
                        out.push(x);
                    }
                }
            }
            if out.is_empty() {
                None
            } else {
                Some(out)
            }
        }
        _ => None,
    }
}

fn dykstra_polytope(normals: &Matrix, offsets: &Vector, p: &Vector) -> Vector {
    let m = normals.nrows();
    let rows: Vec<Vector> = normals.row_iter().map(|r| r.transpose()).collect();
    let norms2: Vec<f64> = rows.iter().map(|r| r.norm_squared()).collect();
    let violation = |x: &Vector| (normals * x - offsets).max();
    if m == 0 || violation(p) <= 0.0 {
        return p.clone();
    }
    let mut x = p.clone();
    let mut incr = vec![Vector::zeros(p.len()); m];
    let scale = 1.0 + p.norm() + offsets.amax();
    for _ in 0..200_000 {
        let prev = x.clone();
        for i in 0..m {
            if norms2[i] == 0.0 {
                continue;
            }
            let y = &x + &incr[i];
            let excess = rows[i].dot(&y) - offsets[i];
            let nx = if excess > 0.0 { &y - &rows[i] * (excess / norms2[i]) } else { y.clone() };
            incr[i] = y - &nx;
            x = nx;
        }
        if (&x - &prev).norm() <= 1e-15 * scale && violation(&x) <= 1e-12 * scale {
            break;
        }
    }
    x
}

/// Distance between two convex sets by alternating projections; `None` if either is empty.
fn alternating_distance(a: &ConvexSet, b: &ConvexSet) -> Result<Option<f64>> {
    let mut x = match a.project_point(&Vector::zeros(a.dim())) {
        Ok(v) => v,
        Err(GeometryError::EmptySet) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut last = f64::INFINITY;
    for _ in 0..5_000 {
        let y = match b.project_point(&x) {
            Ok(v) => v,
            Err(GeometryError::EmptySet) => return Ok(None),
            Err(e) => return Err(e),
        };
        x = a.project_point(&y)?;
        let d = (&x - &y).norm();
        if d <= 1e-12 || last - d <= 1e-15 {
            return Ok(Some(d));
        }
        last = d;
    }
    Ok(Some(last))
}

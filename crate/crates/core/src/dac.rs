//! Disturbance-action controllers: weights, the decaying weight class,
//! closed-loop response matrices, and the surrogate state/input.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{clip_spectral, powers, spectral_norm};
use crate::lti::{LtiError, LtiSystem, StabilityCertificate};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DacError {
    #[error("memory length must be at least 1")]
    ZeroMemory,
    #[error("weight block shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("weight block {block} has spectral norm {norm} above the class radius {radius}")]
    OutsideClass { block: usize, norm: f64, radius: f64 },
    #[error("flat weight record has {got} entries, expected {expected}")]
    BadRecord { expected: usize, got: usize },
    #[error(transparent)]
    Lti(#[from] LtiError),
}

type Result<T> = std::result::Result<T, DacError>;

/// Weights `M[1..=H]`, each `m x n`. Index `i` in the slice is lag `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DacWeights {
    blocks: Vec<Matrix>,
    m: usize,
    n: usize,
}

/// Flat serialisable form of [`DacWeights`]. Blocks are stored lag by lag, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub m: usize,
    pub n: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl DacWeights {
    pub fn zeros(h: usize, m: usize, n: usize) -> Self {
        DacWeights { blocks: vec![Matrix::zeros(m, n); h], m, n }
    }

    pub fn from_blocks(blocks: Vec<Matrix>) -> Result<Self> {
        let Some(first) = blocks.first() else { return Err(DacError::ZeroMemory) };
        let (m, n) = (first.nrows(), first.ncols());
        for b in &blocks {
            if b.nrows() != m || b.ncols() != n {
                return Err(DacError::ShapeMismatch {
                    expected: format!("{m}x{n}"),
                    got: format!("{}x{}", b.nrows(), b.ncols()),
                });
            }
        }
        Ok(DacWeights { blocks, m, n })
    }

    pub fn memory(&self) -> usize {
        self.blocks.len()
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }
    pub fn blocks_mut(&mut self) -> &mut [Matrix] {
        &mut self.blocks
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.blocks.len() * self.m * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vector {
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            for i in 0..self.m {
                for j in 0..self.n {
                    out.push(b[(i, j)]);
                }
            }
        }
        Vector::from_vec(out)
    }

    pub fn from_flat(h: usize, m: usize, n: usize, data: &[f64]) -> Result<Self> {
        if h == 0 {
            return Err(DacError::ZeroMemory);
        }
        if data.len() != h * m * n {
            return Err(DacError::BadRecord { expected: h * m * n, got: data.len() });
        }
        let blocks = (0..h).map(|k| Matrix::from_row_slice(m, n, &data[k * m * n..(k + 1) * m * n])).collect();
        Ok(DacWeights { blocks, m, n })
    }

    pub fn to_record(&self) -> WeightsRecord {
        WeightsRecord { m: self.m, n: self.n, h: self.memory(), data: self.to_flat().as_slice().to_vec() }
    }

    pub fn from_record(r: &WeightsRecord) -> Result<Self> {
        Self::from_flat(r.h, r.m, r.n, &r.data)
    }

    fn zip_map(&self, other: &DacWeights, f: impl Fn(&Matrix, &Matrix) -> Matrix) -> DacWeights {
        assert_eq!(self.blocks.len(), other.blocks.len(), "memory mismatch");
        DacWeights {
            blocks: self.blocks.iter().zip(other.blocks.iter()).map(|(a, b)| f(a, b)).collect(),
            m: self.m,
            n: self.n,
        }
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &DacWeights, s: f64) -> DacWeights {
        self.zip_map(other, |a, b| a + b * s)
    }

    pub fn sub(&self, other: &DacWeights) -> DacWeights {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> DacWeights {
        DacWeights { blocks: self.blocks.iter().map(|b| b * s).collect(), m: self.m, n: self.n }
    }

    pub fn dot(&self, other: &DacWeights) -> f64 {
        self.blocks.iter().zip(other.blocks.iter()).map(|(a, b)| a.dot(b)).sum()
    }

    /// Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// The class `{M : ||M[i]|| <= a (1 - gamma)^(i-1)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayClass {
    pub a: f64,
    pub gamma: f64,
}

/// Relative slack allowed when testing class membership.
pub const CLASS_TOL: f64 = 1e-9;

impl DecayClass {
    /// `a = 2 kappa^3`
    pub fn from_constants(kappa: f64, gamma: f64) -> Self {
        DecayClass { a: 2.0 * kappa.powi(3), gamma }
    }

    /// Radius of the 1-based block `i`.
    pub fn radius(&self, i: usize) -> f64 {
        self.a * (1.0 - self.gamma).powi(i as i32 - 1)
    }

    pub fn contains(&self, w: &DacWeights) -> bool {
        self.first_violation(w).is_none()
    }

    fn first_violation(&self, w: &DacWeights) -> Option<DacError> {
        w.blocks().iter().enumerate().find_map(|(idx, b)| {
            let radius = self.radius(idx + 1);
            let norm = spectral_norm(b);
            (norm > radius * (1.0 + CLASS_TOL)).then_some(DacError::OutsideClass { block: idx + 1, norm, radius })
        })
    }

    pub fn check(&self, w: &DacWeights) -> Result<()> {
        match self.first_violation(w) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Blockwise Frobenius projection. Blocks already inside are untouched.
    pub fn project(&self, w: &DacWeights) -> DacWeights {
        DacWeights {
            blocks: w.blocks().iter().enumerate().map(|(idx, b)| clip_spectral(b, self.radius(idx + 1))).collect(),
            m: w.m(),
            n: w.n(),
        }
    }
}

/// Response matrices `Psi^x_k`, `Psi^u_k` for lags `k = 1..=2H` (slice index `k - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrices {
    pub psi_x: Vec<Matrix>,
    pub psi_u: Vec<Matrix>,
}

impl ResponseMatrices {
    /// `(x~, u~) = sum_k (Psi^x_k, Psi^u_k) w_{t-k}`
    pub fn surrogate(&self, hist: &DisturbanceHistory) -> (Vector, Vector) {
        let mut x = Vector::zeros(self.psi_x[0].nrows());
        let mut u = Vector::zeros(self.psi_u[0].nrows());
        for (k, (px, pu)) in self.psi_x.iter().zip(self.psi_u.iter()).enumerate() {
            let w = hist.lag(k + 1);
            x += px * w;
            u += pu * w;
        }
        (x, u)
    }
}

/// Closed-loop data for a fixed base gain `K` and memory `H`, with cached powers.
#[derive(Debug, Clone, PartialEq)]
pub struct DacModel {
    k: Matrix,
    h: usize,
    /// `A_K^j`, `j = 0..2H`
    a_k_pows: Vec<Matrix>,
    /// `A_K^(i-1) B`, `i = 1..=H`
    a_k_pow_b: Vec<Matrix>,
}

impl DacModel {
    pub fn new(sys: &LtiSystem, cert: &StabilityCertificate, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(DacError::ZeroMemory);
        }
        sys.check_gain(cert.k())?;
        let a_k_pows = powers(cert.a_k(), 2 * h + 1);
        let a_k_pow_b = a_k_pows[..h].iter().map(|p| p * sys.b()).collect();
        Ok(DacModel { k: cert.k().clone(), h, a_k_pows, a_k_pow_b })
    }

    pub fn memory(&self) -> usize {
        self.h
    }
    pub fn k(&self) -> &Matrix {
        &self.k
    }
    pub fn n(&self) -> usize {
        self.k.ncols()
    }
    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    /// `A_K^j` for `j <= 2H`.
    pub fn a_k_pow(&self, j: usize) -> &Matrix {
        &self.a_k_pows[j]
    }

    fn check_shape(&self, w: &DacWeights) -> Result<()> {
        if w.memory() != self.h || w.m() != self.m() || w.n() != self.n() {
            return Err(DacError::ShapeMismatch {
                expected: format!("H={} {}x{}", self.h, self.m(), self.n()),
                got: format!("H={} {}x{}", w.memory(), w.m(), w.n()),
            });
        }
        Ok(())
    }

    /// Response matrices for weights that are known to belong to `class`.
    pub fn response_matrices(&self, w: &DacWeights, class: &DecayClass) -> Result<ResponseMatrices> {
        self.check_shape(w)?;
        class.check(w)?;
        Ok(self.responses(w))
    }

    /// Response matrices without the class check; the map is affine in `w`.
    pub fn responses(&self, w: &DacWeights) -> ResponseMatrices {
        let h = self.h;
        let n = self.n();
        let mut psi_x = Vec::with_capacity(2 * h);
        let mut psi_u = Vec::with_capacity(2 * h);
        for k in 1..=2 * h {
            let mut px = if k <= h { self.a_k_pows[k - 1].clone() } else { Matrix::zeros(n, n) };
            for i in 1..=h {
                if k > i && k - i <= h {
                    px += &self.a_k_pow_b[i - 1] * &w.blocks()[k - i - 1];
                }
            }
            let mut pu = -&self.k * &px;
            if k <= h {
                pu += &w.blocks()[k - 1];
            }
            psi_x.push(px);
            psi_u.push(pu);
        }
        ResponseMatrices { psi_x, psi_u }
    }

    /// Gradient of `sum_k <gx_k, Psi^x_k> + <gu_k, Psi^u_k>` with respect to the weights.
    pub fn adjoint(&self, gx: &[Matrix], gu: &[Matrix]) -> DacWeights {
        let h = self.h;
        assert_eq!(gx.len(), 2 * h);
        assert_eq!(gu.len(), 2 * h);
        let e: Vec<Matrix> = gx.iter().zip(gu.iter()).map(|(x, u)| x - self.k.transpose() * u).collect();
        let blocks = (0..h)
            .map(|j| {
                let mut g = gu[j].clone();
                for i in 0..h {
                    g += self.a_k_pow_b[i].transpose() * &e[i + j + 1];
                }
                g
            })
            .collect();
        DacWeights { blocks, m: self.m(), n: self.n() }
    }

    /// `u = -K x + sum_i M[i] w_{t-i}`
    pub fn control_input(&self, w: &DacWeights, x: &Vector, hist: &DisturbanceHistory) -> Vector {
        let mut u = -&self.k * x;
        for (i, b) in w.blocks().iter().enumerate() {
            u += b * hist.lag(i + 1);
        }
        u
    }
}

/// The most recent `capacity` disturbances; older lags read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceHistory {
    buf: VecDeque<Vector>,
    capacity: usize,
    zero: Vector,
}

impl DisturbanceHistory {
    pub fn new(n: usize, capacity: usize) -> Self {
        DisturbanceHistory { buf: VecDeque::with_capacity(capacity), capacity, zero: Vector::zeros(n) }
    }

    /// Records `w_t`; afterwards `lag(1)` returns it.
    pub fn push(&mut self, w: Vector) {
        assert_eq!(w.len(), self.zero.len(), "disturbance dimension");
        self.buf.push_front(w);
        self.buf.truncate(self.capacity);
    }

    /// `w_{t-k}` for `k >= 1`.
    pub fn lag(&self, k: usize) -> &Vector {
        assert!(k >= 1, "lags start at 1");
        self.buf.get(k - 1).unwrap_or(&self.zero)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Weights `M[i] = (K - K') A_{K'}^(i-1)` that reproduce the linear policy `-K' x`
/// exactly over the memory window. Checked against the class built from the
/// joint constants of `K` and `K'`.
pub fn dac_from_linear(
    base: &StabilityCertificate,
    target: &StabilityCertificate,
    h: usize,
) -> Result<DacWeights> {
    if h == 0 {
        return Err(DacError::ZeroMemory);
    }
    let diff = base.k() - target.k();
    let blocks: Vec<Matrix> = powers(target.a_k(), h).iter().map(|p| &diff * p).collect();
    let w = DacWeights::from_blocks(blocks)?;
    let (kappa, gamma) = base.joint_constants(target);
    DecayClass::from_constants(kappa, gamma).check(&w)?;
    Ok(w)
}

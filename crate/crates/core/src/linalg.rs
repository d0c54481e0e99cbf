//! Small dense linear-algebra helpers shared across modules.

use crate::{Matrix, Vector};

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Top singular triple `(sigma, u, v)`.
pub fn top_singular(m: &Matrix) -> (f64, Vector, Vector) {
    let svd = m.clone().svd(true, true);
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best });
    let u = svd.u.as_ref().expect("u requested").column(idx).into_owned();
    let v = svd.v_t.as_ref().expect("v_t requested").row(idx).transpose();
    (sigma, u, v)
}

/// Frobenius-nearest point of the spectral-norm ball of radius `r`.
/// Matrices already inside are returned unchanged.
pub fn clip_spectral(m: &Matrix, r: f64) -> Matrix {
    if m.nrows() == 0 || m.ncols() == 0 || spectral_norm(m) <= r {
        return m.clone();
    }
    let mut svd = m.clone().svd(true, true);
    for s in svd.singular_values.iter_mut() {
        *s = s.min(r);
    }
    svd.recompose().expect("u and v_t computed")
}

/// `[I, A, A^2, ..., A^{count-1}]`.
pub fn powers(a: &Matrix, count: usize) -> Vec<Matrix> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(count);
    let mut p = Matrix::identity(n, n);
    for _ in 0..count {
        let next = a * &p;
        out.push(p);
        p = next;
    }
    out
}

/// Per-row l1 norms.
pub fn row_l1(m: &Matrix) -> Vector {
    Vector::from_iterator(m.nrows(), m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()))
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn l1_norm(v: &Vector) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Spectral radius via the complex eigenvalues of the real Schur form.
pub fn spectral_radius(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = dmatrix![3.0, 0.0; 0.0, -4.0];
        assert!((spectral_norm(&m) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_interior_untouched() {
        let m = dmatrix![0.1, 0.2; -0.3, 0.05];
        let c = clip_spectral(&m, 1.0);
        assert_eq!(m, c);
    }

    #[test]
    fn clip_satisfies_variational_inequality() {
        // P is the projection iff <X - P, Z - P> <= 0 for every Z in the ball.
        let x = dmatrix![2.0, 1.0, 0.5; -1.0, 0.3, 2.5];
        let p = clip_spectral(&x, 1.0);
        assert!(spectral_norm(&p) <= 1.0 + 1e-12);
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..500 {
            let mut z = Matrix::from_fn(2, 3, |_, _| next());
            let nz = spectral_norm(&z);
            if nz > 1.0 {
                z /= nz;
            }
            let ip = (&x - &p).dot(&(&z - &p));
            assert!(ip <= 1e-10, "inner product {ip}");
        }
    }

    #[test]
    fn clip_threshold_matches_bisection() {
        // Shrinking all singular values by a common threshold is the
        // projection for the nuclear ball, not the spectral ball; the spectral
        // projection caps them. Cross-check the cap against a bisection on the
        // smallest uniform scale-down that reaches the boundary for a rank-1 input.
        let x = dmatrix![3.0, 4.0; 0.0, 0.0];
        let p = clip_spectral(&x, 2.0);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spectral_norm(&(&x * mid)) <= 2.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((&p - &x * lo).norm() < 1e-12);
    }

    #[test]
    fn powers_start_at_identity() {
        let a = dmatrix![0.5, 1.0; 0.0, 0.5];
        let p = powers(&a, 3);
        assert_eq!(p[0], Matrix::identity(2, 2));
        assert_eq!(p[2], &a * &a);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let a = dmatrix![0.0, -0.9; 0.9, 0.0];
        assert!((spectral_radius(&a) - 0.9).abs() < 1e-12);
    }
}

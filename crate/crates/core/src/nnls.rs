//! Lawson-Hanson non-negative least squares and the least-distance program
//! built on it.

use crate::{Matrix, Vector};

/// `argmin ||e x - f||` subject to `x >= 0`.
pub fn nnls(e: &Matrix, f: &Vector) -> Vector {
    let k = e.ncols();
    let mut x = Vector::zeros(k);
    let mut passive = vec![false; k];
    let scale = 1.0 + e.amax() * (1.0 + f.amax());
    let tol = 1e-12 * scale;
    for _outer in 0..(3 * k + 10) {
        let w = e.transpose() * (f - e * &x);
        let candidate = (0..k)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(t) = candidate else { break };
        if w[t] <= tol {
            break;
        }
        passive[t] = true;
        loop {
            let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let z_p = solve_columns(e, &idx, f);
            let mut z = Vector::zeros(k);
            for (pos, &j) in idx.iter().enumerate() {
                z[j] = z_p[pos];
            }
            if idx.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &idx {
                if z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = 0.0_f64.min(alpha);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (z - &x) * alpha;
            for &j in &idx {
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn solve_columns(e: &Matrix, idx: &[usize], f: &Vector) -> Vector {
    let sub = Matrix::from_fn(e.nrows(), idx.len(), |i, c| e[(i, idx[c])]);
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(1.0);
    svd.solve(f, eps).expect("u and v_t computed").column(0).into_owned()
}

/// `argmin ||y||` subject to `g y >= h`; `None` if the constraints are infeasible.
pub fn least_distance(g: &Matrix, h: &Vector) -> Option<Vector> {
    let (k, d) = (g.nrows(), g.ncols());
    if k == 0 || h.iter().all(|&v| v <= 0.0) {
        return Some(Vector::zeros(d));
    }
    let mut e = Matrix::zeros(d + 1, k);
    e.rows_mut(0, d).copy_from(&g.transpose());
    e.row_mut(d).copy_from(&h.transpose());
    let mut f = Vector::zeros(d + 1);
    f[d] = 1.0;
    let u = nnls(&e, &f);
    let r = &e * &u - &f;
    if r.norm() <= 1e-12 || r[d].abs() <= 1e-14 {
        return None;
    }
    Some(-r.rows(0, d).into_owned() / r[d])
}

//! Dense two-phase simplex for `max c.x  s.t.  A x <= b` with free `x`.
//!
//! Free variables are split as `x = p - q`. Bland's rule keeps it from cycling.

use crate::{Matrix, Vector};

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vector },
    Unbounded,
    Infeasible,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Maximise `cost . z` over the current basis. Columns with `allowed[j] == false`
    /// never enter. Returns false on unboundedness.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        let m = self.rows.len();
        for _ in 0..50_000 {
            let mut entering = None;
            for j in 0..self.ncols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..m {
                    d -= cost[self.basis[i]] * self.rows[i][j];
                }
                if d > 1e-10 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.rows[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c);
        }
        true
    }
}

/// Solve `max c.x s.t. a x <= b`.
pub fn maximize(c: &Vector, a: &Matrix, b: &Vector) -> LpOutcome {
    let (m, n) = (a.nrows(), a.ncols());
    assert_eq!(c.len(), n);
    assert_eq!(b.len(), m);
    // columns: p (n), q (n), slack (m), artificial (m)
    let nstruct = 2 * n + m;
    let ncols = nstruct + m;
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut has_art = vec![false; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; ncols + 1];
        for j in 0..n {
            row[j] = sign * a[(i, j)];
            row[n + j] = -sign * a[(i, j)];
        }
        row[2 * n + i] = sign;
        row[ncols] = sign * b[i];
        if sign < 0.0 {
            row[nstruct + i] = 1.0;
            basis.push(nstruct + i);
            has_art[i] = true;
        } else {
            basis.push(2 * n + i);
        }
        rows.push(row);
    }
    let mut t = Tableau { rows, basis, ncols };

    if has_art.iter().any(|&h| h) {
        let mut cost1 = vec![0.0; ncols];
        for i in 0..m {
            if has_art[i] {
                cost1[nstruct + i] = -1.0;
            }
        }
        let allowed: Vec<bool> = (0..ncols).map(|j| j < nstruct || has_art[j - nstruct]).collect();
        t.optimize(&cost1, &allowed);
        let infeas: f64 = (0..m)
            .filter(|&i| t.basis[i] >= nstruct)
            .map(|i| t.rhs(i))
            .sum();
        let scale = 1.0 + b.amax();
        if infeas > 1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // drive zero-level artificials out of the basis where possible
        for i in 0..m {
            if t.basis[i] >= nstruct {
                if let Some(j) = (0..nstruct).find(|&j| t.rows[i][j].abs() > 1e-9) {
                    t.pivot(i, j);
                }
            }
        }
    }

    let mut cost2 = vec![0.0; ncols];
    for j in 0..n {
        cost2[j] = c[j];
        cost2[n + j] = -c[j];
    }
    let allowed: Vec<bool> = (0..ncols).map(|j| j < nstruct).collect();
    if !t.optimize(&cost2, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut z = vec![0.0; ncols];
    for i in 0..m {
        z[t.basis[i]] = t.rhs(i);
    }
    let x = Vector::from_iterator(n, (0..n).map(|j| z[j] - z[n + j]));
    LpOutcome::Optimal { value: c.dot(&x), x }
}

/// Whether `{x : a x <= b}` is nonempty.
pub fn feasible(a: &Matrix, b: &Vector) -> bool {
    !matches!(maximize(&Vector::zeros(a.ncols()), a, b), LpOutcome::Infeasible)
}

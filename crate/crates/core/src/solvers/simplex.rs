//! Two-phase tableau simplex with Bland's rule.
//!
//! Used for LPs above the vertex-enumeration size limit and to find feasible
//! starting points for the QP solver. Free variables are split as `u = u+ - u-`.

use nalgebra::DVector;

use super::lp::{LpProblem, LpSolution};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 10_000;

struct Tableau {
    /// rows 0..q are constraints, row q is the objective; last column is the rhs
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (r, line) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the objective row over the allowed columns.
    fn optimize(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<()> {
        let q = self.basis.len();
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::NumericalFailure("simplex pivot limit".into()));
            }
            let entering = (0..self.cols).find(|&c| allowed(c) && self.t[q][c] < -PIVOT_TOL);
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..q {
                let a = self.t[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[r] < self.basis[lr]),
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return Err(Error::Unbounded),
            }
        }
    }
}

/// Solves `min c^T u s.t. A u <= b` with `u` free.
pub fn solve(p: &LpProblem) -> Result<LpSolution> {
    let (q, m) = p.a.shape();
    let n_struct = 2 * m + q;
    let needs_art: Vec<bool> = (0..q).map(|r| p.b[r] < 0.0).collect();
    let n_art = needs_art.iter().filter(|x| **x).count();
    let cols = n_struct + n_art;
    let mut t = vec![vec![0.0; cols + 1]; q + 1];
    let mut basis = vec![0; q];
    let mut art = n_struct;
    for r in 0..q {
        let sign = if needs_art[r] { -1.0 } else { 1.0 };
        for c in 0..m {
            t[r][c] = sign * p.a[(r, c)];
            t[r][m + c] = -sign * p.a[(r, c)];
        }
        t[r][2 * m + r] = sign;
        t[r][cols] = sign * p.b[r];
        if needs_art[r] {
            t[r][art] = 1.0;
            basis[r] = art;
            art += 1;
        } else {
            basis[r] = 2 * m + r;
        }
    }
    let mut tab = Tableau { t, basis, cols, pivots: 0 };

    if n_art > 0 {
        // phase 1 objective: sum of artificials, expressed in non-basic terms
        for c in 0..=cols {
            let v: f64 = -(0..q).filter(|&r| needs_art[r]).map(|r| tab.t[r][c]).sum::<f64>();
            tab.t[q][c] = if (n_struct..cols).contains(&c) { 0.0 } else { v };
        }
        tab.optimize(&|_| true)?;
        let infeas = -tab.t[q][cols];
        let scale = 1.0 + p.b.amax();
        if infeas > 1e-9 * scale {
            return Err(Error::Infeasible);
        }
        // drive zero-level artificials out of the basis where possible
        for r in 0..q {
            if tab.basis[r] >= n_struct {
                if let Some(c) = (0..n_struct).find(|&c| tab.t[r][c].abs() > 1e-9) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    // phase 2 objective row
    let mut cost = vec![0.0; cols + 1];
    for c in 0..m {
        cost[c] = p.c[c];
        cost[m + c] = -p.c[c];
    }
    for c in 0..=cols {
        let mut v = cost[c];
        for r in 0..q {
            let bc = tab.basis[r];
            if bc < cols && cost[bc] != 0.0 {
                v -= cost[bc] * tab.t[r][c];
            }
        }
        tab.t[q][c] = v;
    }
    tab.optimize(&|c| c < n_struct)?;

    let mut x = vec![0.0; cols];
    for r in 0..q {
        x[tab.basis[r]] = tab.rhs(r);
    }
    let u = DVector::from_fn(m, |i, _| x[i] - x[m + i]);
    let value = p.c.dot(&u);
    Ok(LpSolution { u, value, iterations: tab.pivots })
}

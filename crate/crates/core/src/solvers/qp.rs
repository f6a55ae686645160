//! Primal active-set method for Euclidean projection onto a polyhedron.

use nalgebra::{DMatrix, DVector};

use super::lp::LpProblem;
use super::{simplex, SolveKind, SolveStatus, FEAS_TOL, STATIONARITY_TOL};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;

/// `min ||u - target||^2 s.t. A u <= b`.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub target: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// One multiplier per original row, in the original row scaling.
    pub multipliers: DVector<f64>,
    pub status: SolveStatus,
}

impl QpSolution {
    fn infeasible(m: usize, q: usize, iterations: usize) -> Self {
        QpSolution {
            u: DVector::from_element(m, f64::NAN),
            multipliers: DVector::zeros(q),
            status: SolveStatus { kind: SolveKind::Infeasible, iterations, kkt_residual: f64::NAN },
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status.kind == SolveKind::Optimal
    }
}

/// Projects `target` onto `{u : A u <= b}`.
///
/// Infeasibility is reported through the status rather than as an error, since
/// callers switch to a fallback input in that case. `NumericalFailure` is
/// returned when the iteration cap is reached or the KKT certificate fails.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    let (q, m) = p.a.shape();
    if p.target.len() != m || p.b.len() != q {
        return Err(Error::Dimension("QP data has inconsistent sizes".into()));
    }

    // normalized copy of the rows; zero rows are checked and dropped
    let mut keep = Vec::with_capacity(q);
    let norms: Vec<f64> = p.a.row_iter().map(|row| row.norm()).collect();
    for (r, &n) in norms.iter().enumerate() {
        if n < 1e-14 {
            if p.b[r] < -FEAS_TOL {
                return Ok(QpSolution::infeasible(m, q, 0));
            }
        } else {
            keep.push(r);
        }
    }
    let k = keep.len();
    let a = DMatrix::from_fn(k, m, |i, c| p.a[(keep[i], c)] / norms[keep[i]]);
    let b = DVector::from_fn(k, |i, _| p.b[keep[i]] / norms[keep[i]]);
    // Tightening each row by a tiny distinct amount splits degenerate
    // vertices, which would otherwise let the working set cycle.
    let b_solve =
        DVector::from_fn(k, |i, _| b[i] - 1e-11 * (1.0 + b[i].abs()) * (0.5 + ((i + 1) as f64 * 0.618_033_988_75).fract()));

    let viol = |u: &DVector<f64>| (&a * u - &b).iter().fold(0.0_f64, |acc, v| acc.max(*v));

    let (mut u, mut iterations) = if (&a * &p.target - &b_solve).iter().all(|v| *v <= 0.0) {
        (p.target.clone(), 0)
    } else {
        match simplex::solve(&LpProblem { c: DVector::zeros(m), a: a.clone(), b: b_solve.clone() }) {
            Ok(s) => (s.u, s.iterations),
            Err(Error::Infeasible) => return Ok(QpSolution::infeasible(m, q, 0)),
            Err(e) => return Err(e),
        }
    };

    let mut working: Vec<usize> = Vec::new();
    let mut lambda_w = DVector::zeros(0);
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let g = &u - &p.target;
        let (step, lam) = equality_step(&a, &working, &g);
        lambda_w = lam;
        if step.norm() <= 1e-11 * (1.0 + g.norm()) {
            let tol = 1e-12 * (1.0 + g.norm());
            match (0..working.len()).filter(|&i| lambda_w[i] < -tol).min_by(|&i, &j| lambda_w[i].total_cmp(&lambda_w[j])) {
                None => {
                    converged = true;
                    break;
                }
                Some(i) => {
                    working.remove(i);
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for r in 0..k {
            if working.contains(&r) {
                continue;
            }
            let ap = a.row(r).dot(&step.transpose());
            if ap > 1e-14 {
                let ratio = ((b_solve[r] - a.row(r).dot(&u.transpose())) / ap).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(r);
                }
            }
        }
        u += &step * alpha;
        if let Some(r) = blocking {
            working.push(r);
        }
    }

    // undo the tightening: project onto the final face with the exact offsets
    if converged && !working.is_empty() {
        if let Some((polished, lam)) = polish(&a, &b, &working, &p.target) {
            if viol(&polished) <= FEAS_TOL && lam.iter().all(|l| *l >= -1e-9) {
                u = polished;
                lambda_w = lam;
            }
        }
    }

    let mut lambda_norm = DVector::zeros(k);
    for (i, &r) in working.iter().enumerate() {
        if i < lambda_w.len() {
            lambda_norm[r] = lambda_w[i].max(0.0);
        }
    }
    let stationarity = (&u - &p.target + a.transpose() * &lambda_norm).amax();
    let slack = &b - &a * &u;
    let complementarity = lambda_norm.iter().zip(slack.iter()).map(|(l, s)| (l * s).abs()).fold(0.0, f64::max);
    let feas = viol(&u);
    let kkt = stationarity.max(complementarity);

    let mut multipliers = DVector::zeros(q);
    for (i, &r) in keep.iter().enumerate() {
        multipliers[r] = lambda_norm[i] / norms[r];
    }
    // residuals scale with the multipliers, which blow up on slivers
    let kkt_scale = 1.0 + lambda_norm.amax() + p.target.amax();
    let kind = if converged && feas <= FEAS_TOL && kkt <= STATIONARITY_TOL * kkt_scale {
        SolveKind::Optimal
    } else {
        SolveKind::NumericalFailure
    };
    Ok(QpSolution { u, multipliers, status: SolveStatus { kind, iterations, kkt_residual: kkt } })
}

/// Projection of `target` onto `{u : A_w u = b_w}` and its multipliers.
fn polish(a: &DMatrix<f64>, b: &DVector<f64>, working: &[usize], target: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = a.ncols();
    let aw = DMatrix::from_fn(working.len(), m, |i, c| a[(working[i], c)]);
    let bw = DVector::from_fn(working.len(), |i, _| b[working[i]]);
    let lambda = (&aw * aw.transpose()).cholesky()?.solve(&(&aw * target - bw));
    Some((target - aw.transpose() * &lambda, lambda))
}

/// Minimizer step of `||u + p - target||^2` on the working-set face, plus multipliers.
fn equality_step(a: &DMatrix<f64>, working: &[usize], g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if working.is_empty() {
        return (-g.clone(), DVector::zeros(0));
    }
    let m = a.ncols();
    let aw = DMatrix::from_fn(working.len(), m, |i, c| a[(working[i], c)]);
    let gram = &aw * aw.transpose();
    let rhs = -(&aw * g);
    let lambda = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| gram.pseudo_inverse(1e-12).expect("pseudo-inverse") * &rhs);
    // a full working set pins u to a vertex; roundoff in an ill-conditioned
    // Gram matrix must not turn into a spurious step
    let step = if working.len() >= m { DVector::zeros(m) } else { -g - aw.transpose() * &lambda };
    (step, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_rows(half: f64) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0], vec![half; 4])
    }

    #[test]
    fn halfspace_projection_inside_box() {
        let (mut a, mut b) = box_rows(2.0);
        a.extend([1.0, 1.0]);
        b.push(-1.0);
        let p = QpProblem { target: DVector::zeros(2), a: DMatrix::from_row_slice(5, 2, &a), b: DVector::from_vec(b) };
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.u[0] + 0.5).abs() < 1e-12 && (s.u[1] + 0.5).abs() < 1e-12);
        assert!((s.multipliers[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interior_target_is_returned() {
        let (a, b) = box_rows(1.0);
        let target = DVector::from_column_slice(&[0.3, -0.2]);
        let s = solve_qp(&QpProblem { target: target.clone(), a: DMatrix::from_row_slice(4, 2, &a), b: DVector::from_vec(b) })
            .unwrap();
        assert_eq!(s.u, target);
    }

    #[test]
    fn box_clamp() {
        let (a, b) = box_rows(1.0);
        let s = solve_qp(&QpProblem {
            target: DVector::from_column_slice(&[3.0, 0.0]),
            a: DMatrix::from_row_slice(4, 2, &a),
            b: DVector::from_vec(b),
        })
        .unwrap();
        assert!(s.is_optimal());
        assert!((s.u[0] - 1.0).abs() < 1e-12 && s.u[1].abs() < 1e-12);
    }

    #[test]
    fn infeasible_rows() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 1.0]);
        let b = DVector::from_column_slice(&[2.0, 2.0, -3.0]);
        let s = solve_qp(&QpProblem { target: DVector::zeros(1), a, b }).unwrap();
        assert_eq!(s.status.kind, SolveKind::Infeasible);
    }

    #[test]
    fn zero_row_is_checked() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.0]);
        let s =
            solve_qp(&QpProblem { target: DVector::zeros(1), a: a.clone(), b: DVector::from_column_slice(&[1.0, 1.0, -0.5]) })
                .unwrap();
        assert_eq!(s.status.kind, SolveKind::Infeasible);
        let s = solve_qp(&QpProblem { target: DVector::zeros(1), a, b: DVector::from_column_slice(&[1.0, 1.0, 0.5]) }).unwrap();
        assert!(s.is_optimal());
    }
}

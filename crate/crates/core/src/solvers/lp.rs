use nalgebra::{DMatrix, DVector};

use super::simplex;
use crate::error::{Error, Result};
use crate::polytope::enumerate_vertices;

/// `min c^T u s.t. A u <= b`.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub u: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Largest dimension solved by vertex enumeration.
pub const VERTEX_ENUM_MAX_DIM: usize = 4;

/// Solves the LP. Up to four variables this enumerates vertices and returns
/// the lexicographically smallest optimal vertex, so ties are deterministic;
/// larger problems go through the simplex method.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    let m = p.a.ncols();
    if p.c.len() != m || p.b.len() != p.a.nrows() {
        return Err(Error::Dimension("LP data has inconsistent sizes".into()));
    }
    if m > VERTEX_ENUM_MAX_DIM {
        return simplex::solve(p);
    }
    let vs = match enumerate_vertices(&p.a, &p.b) {
        Ok(vs) => vs,
        Err(Error::UnboundedPolytope) => return Err(Error::Unbounded),
        Err(e) => return Err(e),
    };
    if vs.is_empty() {
        return Err(Error::Infeasible);
    }
    let values: Vec<f64> = vs.vertices.iter().map(|v| p.c.dot(v)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = vs.vertices.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let tie = 1e-12 * (1.0 + p.c.lp_norm(1) * vmax);
    // vertices are sorted lexicographically, so the first near-optimal one wins
    let idx = values.iter().position(|v| *v <= best + tie).expect("non-empty");
    Ok(LpSolution { u: vs.vertices[idx].clone(), value: values[idx], iterations: vs.len() })
}

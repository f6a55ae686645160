//! State-dependent polytopic input sets `U(x) = {u : A(x) u <= b(x)}`.
//!
//! The vertex enumeration here is brute force over `m`-subsets of rows and is
//! only meant for the small input dimensions used by the controllers (`m <= 4`).

use std::fmt;
use std::sync::Arc;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::lp::{solve_lp, LpProblem};

/// Minimum Chebyshev radius for a polytope to count as having an interior.
pub const DEGENERACY_TOL: f64 = 1e-9;
/// Infinity-norm tolerance under which two vertices are the same point.
pub const VERTEX_DEDUP_TOL: f64 = 1e-8;
/// Slack allowed when testing that a candidate vertex satisfies every row.
pub const VERTEX_FEAS_TOL: f64 = 1e-8;

/// Maps an agent state to `(A, b)`.
pub type RowsFn = dyn Fn(&DVector<f64>) -> (DMatrix<f64>, DVector<f64>) + Send + Sync;

/// Builder for polytopes whose rows depend on the agent state.
#[derive(Clone)]
pub struct StateDependentBuilder(pub Arc<RowsFn>);

impl fmt::Debug for StateDependentBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StateDependentBuilder(..)")
    }
}

/// Input-constraint description of one agent.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolytopeSpec {
    ConstantBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    ConstantHalfspaces {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    /// Speed and turn-rate limits of a unicycle mapped onto its look-ahead
    /// output velocity; the heading is read from state component 2.
    UnicycleIo {
        v_max: f64,
        omega_max: f64,
        b_offset: f64,
    },
    #[serde(skip)]
    StateDependent(StateDependentBuilder),
}

impl PolytopeSpec {
    pub fn symmetric_box(half_widths: &[f64]) -> Self {
        PolytopeSpec::ConstantBox { lo: half_widths.iter().map(|w| -w).collect(), hi: half_widths.to_vec() }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            PolytopeSpec::ConstantBox { lo, .. } => Some(lo.len()),
            PolytopeSpec::ConstantHalfspaces { a, .. } => a.first().map(|r| r.len()),
            PolytopeSpec::UnicycleIo { .. } => Some(2),
            PolytopeSpec::StateDependent(_) => None,
        }
    }
}

/// Halfspace data `A u <= b` at a particular state.
#[derive(Clone, Debug, PartialEq)]
pub struct Halfspaces {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Halfspaces {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension(format!("A has {} rows but b has {}", a.nrows(), b.len())));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        contains(&self.a, &self.b, u, tol)
    }

    pub fn vertices(&self) -> Result<VertexSet> {
        enumerate_vertices(&self.a, &self.b)
    }

    /// Radius of the largest ball inside the polytope.
    pub fn chebyshev_radius(&self) -> Result<f64> {
        chebyshev_radius(&self.a, &self.b)
    }

    /// The same polytope with every row shifted so that `b` is scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { a: self.a.clone(), b: &self.b * factor }
    }
}

/// Returns the halfspace data of `spec` at the agent state `x`.
pub fn instantiate(spec: &PolytopeSpec, x: &DVector<f64>) -> Result<Halfspaces> {
    let hs = match spec {
        PolytopeSpec::ConstantBox { lo, hi } => {
            if lo.len() != hi.len() || lo.is_empty() {
                return Err(Error::Dimension("box bounds must be non-empty and equal length".into()));
            }
            let m = lo.len();
            let radius = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).fold(f64::INFINITY, f64::min);
            if radius.is_nan() || radius <= DEGENERACY_TOL {
                return Err(Error::DegeneratePolytope { radius });
            }
            let mut a = DMatrix::zeros(2 * m, m);
            let mut b = DVector::zeros(2 * m);
            for j in 0..m {
                a[(2 * j, j)] = 1.0;
                b[2 * j] = hi[j];
                a[(2 * j + 1, j)] = -1.0;
                b[2 * j + 1] = -lo[j];
            }
            return Ok(Halfspaces { a, b });
        }
        PolytopeSpec::ConstantHalfspaces { a, b } => {
            let m = a.first().map(|r| r.len()).unwrap_or(0);
            if m == 0 || a.iter().any(|r| r.len() != m) {
                return Err(Error::Dimension("halfspace rows must be non-empty and equal length".into()));
            }
            Halfspaces::new(DMatrix::from_fn(a.len(), m, |r, c| a[r][c]), DVector::from_column_slice(b))?
        }
        PolytopeSpec::UnicycleIo { v_max, omega_max, b_offset } => {
            let theta = *x.get(2).ok_or_else(|| Error::Dimension("unicycle polytope needs a heading at index 2".into()))?;
            let (a, b) = unicycle_bounds(theta, *v_max, *omega_max, *b_offset);
            Halfspaces { a, b }
        }
        PolytopeSpec::StateDependent(builder) => {
            let (a, b) = (builder.0)(x);
            Halfspaces::new(a, b)?
        }
    };
    let radius = hs.chebyshev_radius()?;
    if radius <= DEGENERACY_TOL {
        return Err(Error::DegeneratePolytope { radius });
    }
    Ok(hs)
}

/// Linear bounds on the output velocity `u` of a look-ahead point at distance
/// `b_offset` in front of a unicycle with heading `theta`, equivalent to
/// `|v| <= v_max` and `|omega| <= omega_max`.
pub fn unicycle_bounds(theta: f64, v_max: f64, omega_max: f64, b_offset: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (s, c) = theta.sin_cos();
    let a = DMatrix::from_row_slice(4, 2, &[c, s, -c, -s, -s / b_offset, c / b_offset, s / b_offset, -c / b_offset]);
    let b = DVector::from_column_slice(&[v_max, v_max, omega_max, omega_max]);
    (a, b)
}

/// True iff `A u <= b + tol` componentwise.
pub fn contains(a: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>, tol: f64) -> bool {
    debug_assert_eq!(a.ncols(), u.len());
    let au = a * u;
    au.iter().zip(b.iter()).all(|(lhs, rhs)| *lhs <= rhs + tol)
}

/// Vertices of a bounded polytope, sorted lexicographically.
#[derive(Clone, Debug)]
pub struct VertexSet {
    pub vertices: Vec<DVector<f64>>,
    pub tolerance: f64,
}

impl VertexSet {
    /// Support function `max_v d^T v`.
    pub fn support(&self, direction: &DVector<f64>) -> f64 {
        self.vertices.iter().map(|v| direction.dot(v)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Lexicographic comparison of two vectors of equal length.
pub(crate) fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Enumerates all vertices by intersecting every `m`-subset of rows.
pub fn enumerate_vertices(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<VertexSet> {
    let m = a.ncols();
    if m == 0 || m > 4 {
        return Err(Error::Dimension(format!("vertex enumeration supports 1..=4 dimensions, got {m}")));
    }
    if a.nrows() != b.len() {
        return Err(Error::Dimension("A and b row counts differ".into()));
    }
    if has_recession_direction(a) {
        return Err(Error::UnboundedPolytope);
    }
    let q = a.nrows();
    let mut vertices: Vec<DVector<f64>> = Vec::new();
    for rows in (0..q).combinations(m) {
        let sub = DMatrix::from_fn(m, m, |r, c| a[(rows[r], c)]);
        let scale: f64 = rows.iter().map(|&r| a.row(r).norm()).product();
        if scale == 0.0 || (sub.determinant() / scale).abs() < 1e-12 {
            continue;
        }
        let rhs = DVector::from_fn(m, |r, _| b[rows[r]]);
        let Some(v) = sub.lu().solve(&rhs) else { continue };
        if !v.iter().all(|x| x.is_finite()) || !contains(a, b, &v, VERTEX_FEAS_TOL) {
            continue;
        }
        if vertices.iter().all(|w| (w - &v).amax() > VERTEX_DEDUP_TOL) {
            vertices.push(v);
        }
    }
    vertices.sort_by(lex_cmp);
    Ok(VertexSet { vertices, tolerance: VERTEX_DEDUP_TOL })
}

/// Whether `{d : A d <= 0}` contains a nonzero direction.
///
/// A pointed cone has its extreme rays on the intersection of `m - 1`
/// independent rows, so checking those candidates (and the rank) is exact.
pub(crate) fn has_recession_direction(a: &DMatrix<f64>) -> bool {
    let m = a.ncols();
    if a.rank(1e-10 * a.amax().max(1.0)) < m {
        return true;
    }
    let row_norms: Vec<f64> = (0..a.nrows()).map(|r| a.row(r).norm()).collect();
    for rows in (0..a.nrows()).combinations(m - 1) {
        let d = generalized_cross(a, &rows);
        let dn = d.norm();
        if dn < 1e-12 * rows.iter().map(|&r| row_norms[r]).product::<f64>().max(1e-300) {
            continue;
        }
        for sign in [1.0, -1.0] {
            let dir = &d * (sign / dn);
            let blocked = (0..a.nrows()).any(|r| a.row(r).dot(&dir.transpose()) > 1e-10 * row_norms[r]);
            if !blocked {
                return true;
            }
        }
    }
    false
}

/// Vector orthogonal to the `m - 1` selected rows (cofactor expansion).
fn generalized_cross(a: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let m = a.ncols();
    if m == 1 {
        return DVector::from_element(1, 1.0);
    }
    DVector::from_fn(m, |k, _| {
        let minor = DMatrix::from_fn(m - 1, m - 1, |r, c| {
            let col = if c < k { c } else { c + 1 };
            a[(rows[r], col)]
        });
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

/// Chebyshev radius via the LP `max r s.t. a_k u + r ||a_k|| <= b_k, r >= 0`.
pub fn chebyshev_radius(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    let (q, m) = a.shape();
    let mut ext = DMatrix::zeros(q + 1, m + 1);
    let mut rhs = DVector::zeros(q + 1);
    for r in 0..q {
        for c in 0..m {
            ext[(r, c)] = a[(r, c)];
        }
        ext[(r, m)] = a.row(r).norm();
        rhs[r] = b[r];
    }
    ext[(q, m)] = -1.0;
    let mut c = DVector::zeros(m + 1);
    c[m] = -1.0;
    match solve_lp(&LpProblem { c, a: ext, b: rhs }) {
        Ok(sol) => Ok(-sol.value),
        Err(Error::Infeasible) => Ok(0.0),
        Err(Error::Unbounded) | Err(Error::UnboundedPolytope) => Err(Error::UnboundedPolytope),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_box() -> Halfspaces {
        instantiate(&PolytopeSpec::symmetric_box(&[1.0, 1.0]), &DVector::zeros(1)).unwrap()
    }

    #[test]
    fn box_encoding() {
        let hs = unit_box();
        let expect = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        assert_eq!(hs.a, expect);
        assert_eq!(hs.b, DVector::from_element(4, 1.0));
    }

    #[test]
    fn unicycle_rows_at_zero_heading() {
        let spec = PolytopeSpec::UnicycleIo { v_max: 4.0, omega_max: 2.0, b_offset: 1.0 };
        let hs = instantiate(&spec, &DVector::from_column_slice(&[0.0, 0.0, 0.0])).unwrap();
        let expect = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        assert!((&hs.a - expect).amax() < 1e-15);
        assert_eq!(hs.b.as_slice(), &[4.0, 4.0, 2.0, 2.0]);
    }

    #[test]
    fn unicycle_rows_at_quarter_turn() {
        let spec = PolytopeSpec::UnicycleIo { v_max: 4.0, omega_max: 2.0, b_offset: 1.0 };
        let hs = instantiate(&spec, &DVector::from_column_slice(&[0.0, 0.0, FRAC_PI_2])).unwrap();
        assert!((hs.a[(0, 0)] - 0.0).abs() < 1e-12 && (hs.a[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((hs.a[(2, 0)] + 1.0).abs() < 1e-12 && hs.a[(2, 1)].abs() < 1e-12);
    }

    #[test]
    fn membership() {
        let hs = unit_box();
        assert!(hs.contains(&DVector::from_column_slice(&[0.0, 0.0]), 1e-9));
        assert!(!hs.contains(&DVector::from_column_slice(&[1.0 + 1e-6, 0.0]), 1e-9));
        assert!(hs.contains(&DVector::from_column_slice(&[1.0, 1.0]), 0.0));
    }

    #[test]
    fn box_and_triangle_vertices() {
        let vs = unit_box().vertices().unwrap();
        let pts: Vec<Vec<f64>> = vs.vertices.iter().map(|v| v.as_slice().to_vec()).collect();
        assert_eq!(pts, vec![vec![-1.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![1.0, 1.0]]);

        let a = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        let vs = enumerate_vertices(&a, &b).unwrap();
        let pts: Vec<Vec<f64>> = vs.vertices.iter().map(|v| v.as_slice().to_vec()).collect();
        assert_eq!(pts, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn unicycle_polytope_has_four_strip_vertices() {
        let (a, b) = unicycle_bounds(0.3, 4.0, 2.0, 1.0);
        let vs = enumerate_vertices(&a, &b).unwrap();
        assert_eq!(vs.len(), 4);
        for v in &vs.vertices {
            let slack = &b - &a * v;
            let tight: Vec<usize> = (0..4).filter(|&r| slack[r].abs() < 1e-9).collect();
            assert_eq!(tight.len(), 2);
            // one tight row from each strip: {0,1} x {2,3}
            assert!(tight[0] < 2 && tight[1] >= 2, "tight rows {tight:?}");
        }
    }

    #[test]
    fn unbounded_and_degenerate() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 1.0]);
        assert_eq!(enumerate_vertices(&a, &b).unwrap_err(), Error::UnboundedPolytope);

        let spec = PolytopeSpec::ConstantBox { lo: vec![0.0, -1.0], hi: vec![0.0, 1.0] };
        assert!(matches!(instantiate(&spec, &DVector::zeros(1)), Err(Error::DegeneratePolytope { .. })));

        let flat = PolytopeSpec::ConstantHalfspaces {
            a: vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            b: vec![0.0, 0.0, 1.0, 1.0],
        };
        assert!(matches!(instantiate(&flat, &DVector::zeros(1)), Err(Error::DegeneratePolytope { .. })));
    }

    #[test]
    fn chebyshev_radius_of_box() {
        let hs =
            instantiate(&PolytopeSpec::ConstantBox { lo: vec![-4.0, -2.0], hi: vec![4.0, 2.0] }, &DVector::zeros(1)).unwrap();
        assert!((hs.chebyshev_radius().unwrap() - 2.0).abs() < 1e-9);
    }
}

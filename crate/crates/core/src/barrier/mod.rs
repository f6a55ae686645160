//! Safe-set functions `h` with the safe set `S = {h <= 0}`.
//!
//! Pairwise and obstacle atoms are evaluated on agent output positions and
//! composed with a shifted log-sum-exp. Gradients and Hessian-vector products
//! are analytic.

mod cascade;
mod lse;

pub use cascade::{build_cascade, CascadeLevel, PsiCascade};
pub use lse::{log_sum_exp, softmax_weights};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentModel, ControlAffine, Layout, Role};
use crate::error::{Error, Result};
use crate::solvers::AgentLie;

/// Positions closer than this make a pair atom's gradient ill-defined.
pub const COINCIDENCE_TOL: f64 = 1e-9;

/// One smooth constraint `h_k(x) <= 0` on output positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierAtom {
    /// `radius^2 - |p_i - p_j|^2`.
    PairCollision { i: usize, j: usize, radius: f64 },
    /// `radius^2 - |p_i - center|^2`.
    AgentObstacle { i: usize, center: Vec<f64>, radius: f64 },
    /// `|p_i - center|^2 - radius^2`: stay inside a ball.
    Containment { i: usize, center: Vec<f64>, radius: f64 },
    /// `normal . p_i - offset`.
    Halfspace { i: usize, normal: Vec<f64>, offset: f64 },
}

fn vec_of(s: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(s)
}

impl BarrierAtom {
    pub fn agents(&self) -> (usize, Option<usize>) {
        match self {
            BarrierAtom::PairCollision { i, j, .. } => (*i, Some(*j)),
            BarrierAtom::AgentObstacle { i, .. } | BarrierAtom::Containment { i, .. } | BarrierAtom::Halfspace { i, .. } => {
                (*i, None)
            }
        }
    }

    /// Value from the involved positions.
    pub fn value_at(&self, pi: &DVector<f64>, pj: Option<&DVector<f64>>) -> f64 {
        match self {
            BarrierAtom::PairCollision { radius, .. } => radius * radius - (pi - pj.unwrap()).norm_squared(),
            BarrierAtom::AgentObstacle { center, radius, .. } => radius * radius - (pi - vec_of(center)).norm_squared(),
            BarrierAtom::Containment { center, radius, .. } => (pi - vec_of(center)).norm_squared() - radius * radius,
            BarrierAtom::Halfspace { normal, offset, .. } => vec_of(normal).dot(pi) - offset,
        }
    }

    /// Gradients with respect to `p_i` and (for pairs) `p_j`.
    fn position_gradient(&self, pi: &DVector<f64>, pj: Option<&DVector<f64>>) -> (DVector<f64>, Option<DVector<f64>>) {
        match self {
            BarrierAtom::PairCollision { .. } => {
                let d = pi - pj.unwrap();
                (&d * -2.0, Some(d * 2.0))
            }
            BarrierAtom::AgentObstacle { center, .. } => ((pi - vec_of(center)) * -2.0, None),
            BarrierAtom::Containment { center, .. } => ((pi - vec_of(center)) * 2.0, None),
            BarrierAtom::Halfspace { normal, .. } => (vec_of(normal), None),
        }
    }

    /// Position Hessian applied to position increments.
    fn position_hess_vec(&self, dpi: &DVector<f64>, dpj: Option<&DVector<f64>>) -> (DVector<f64>, Option<DVector<f64>>) {
        match self {
            BarrierAtom::PairCollision { .. } => {
                let d = dpi - dpj.unwrap();
                (&d * -2.0, Some(d * 2.0))
            }
            BarrierAtom::AgentObstacle { .. } => (dpi * -2.0, None),
            BarrierAtom::Containment { .. } => (dpi * 2.0, None),
            BarrierAtom::Halfspace { .. } => (DVector::zeros(dpi.len()), None),
        }
    }

    fn positions(&self, models: &[AgentModel], layout: &Layout, x: &DVector<f64>) -> (DVector<f64>, Option<DVector<f64>>) {
        let (i, j) = self.agents();
        let pi = models[i].dynamics.position(&layout.slice(x, i));
        (pi, j.map(|j| models[j].dynamics.position(&layout.slice(x, j))))
    }

    pub fn eval(&self, models: &[AgentModel], layout: &Layout, x: &DVector<f64>) -> f64 {
        let (pi, pj) = self.positions(models, layout, x);
        self.value_at(&pi, pj.as_ref())
    }

    /// Adds `scale * grad h_k(x)` into `out`.
    fn add_gradient(
        &self,
        models: &[AgentModel],
        layout: &Layout,
        x: &DVector<f64>,
        scale: f64,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        let (i, j) = self.agents();
        let (pi, pj) = self.positions(models, layout, x);
        if let (Some(j), Some(pj)) = (j, pj.as_ref()) {
            if (&pi - pj).norm() < COINCIDENCE_TOL {
                return Err(Error::GradientSingularity(i, j));
            }
        }
        let (gi, gj) = self.position_gradient(&pi, pj.as_ref());
        let xi = layout.slice(x, i);
        let block = models[i].dynamics.position_jacobian(&xi).transpose() * gi * scale;
        out.rows_mut(layout.offsets[i], layout.dims[i]).add_assign(&block);
        if let (Some(j), Some(gj)) = (j, gj) {
            let xj = layout.slice(x, j);
            let block = models[j].dynamics.position_jacobian(&xj).transpose() * gj * scale;
            out.rows_mut(layout.offsets[j], layout.dims[j]).add_assign(&block);
        }
        Ok(())
    }

    fn gradient(&self, models: &[AgentModel], layout: &Layout, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(x.len());
        self.add_gradient(models, layout, x, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale * Hess h_k(x) v` into `out`.
    fn add_hess_vec(
        &self,
        models: &[AgentModel],
        layout: &Layout,
        x: &DVector<f64>,
        v: &DVector<f64>,
        scale: f64,
        out: &mut DVector<f64>,
    ) {
        let (i, j) = self.agents();
        let (pi, pj) = self.positions(models, layout, x);
        let (gi, gj) = self.position_gradient(&pi, pj.as_ref());
        let xi = layout.slice(x, i);
        let ji = models[i].dynamics.position_jacobian(&xi);
        let vi = layout.slice(v, i);
        let dpi = &ji * &vi;
        let xj_data = j.map(|j| {
            let xj = layout.slice(x, j);
            let jj = models[j].dynamics.position_jacobian(&xj);
            let vj = layout.slice(v, j);
            let dpj = &jj * &vj;
            (xj, jj, vj, dpj)
        });
        let (hi, hj) = self.position_hess_vec(&dpi, xj_data.as_ref().map(|d| &d.3));
        let block = (ji.transpose() * hi + models[i].dynamics.position_curvature(&xi, &gi) * vi) * scale;
        out.rows_mut(layout.offsets[i], layout.dims[i]).add_assign(&block);
        if let (Some(j), Some((xj, jj, vj, _)), Some(hj), Some(gj)) = (j, xj_data, hj, gj) {
            let block = (jj.transpose() * hj + models[j].dynamics.position_curvature(&xj, &gj) * vj) * scale;
            out.rows_mut(layout.offsets[j], layout.dims[j]).add_assign(&block);
        }
    }
}

trait AddAssignExt {
    fn add_assign(&mut self, other: &DVector<f64>);
}

impl<S> AddAssignExt for nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<f64, nalgebra::Dyn, nalgebra::U1>,
{
    fn add_assign(&mut self, other: &DVector<f64>) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

/// Extended class-K-infinity function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaFunction {
    /// `c s`
    Linear { c: f64 },
    /// `c s^3`
    Cubic { c: f64 },
}

impl AlphaFunction {
    pub fn linear(c: f64) -> Self {
        AlphaFunction::Linear { c }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            AlphaFunction::Linear { c } => c * s,
            AlphaFunction::Cubic { c } => c * s * s * s,
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            AlphaFunction::Linear { c } => *c,
            AlphaFunction::Cubic { c } => 3.0 * c * s * s,
        }
    }

    pub fn gain(&self) -> f64 {
        match self {
            AlphaFunction::Linear { c } | AlphaFunction::Cubic { c } => *c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gain() > 0.0 && self.gain().is_finite() {
            Ok(())
        } else {
            Err(Error::Scenario("alpha gain must be positive".into()))
        }
    }
}

/// A scalar function on the stacked state whose 0-sublevel set is a safe set.
pub trait SafeSetFunction {
    fn value(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Per-agent Lie derivatives `(L_{f_i}, L_{g_i})` at `x`.
    fn lie_terms(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<Vec<AgentLie>> {
        let grad = self.gradient(models, x)?;
        Ok(lie_from_gradient(models, x, &grad))
    }
}

/// Splits a stacked gradient into per-agent Lie derivatives.
pub fn lie_from_gradient(models: &[AgentModel], x: &DVector<f64>, grad: &DVector<f64>) -> Vec<AgentLie> {
    let layout = Layout::states(models);
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let xi = layout.slice(x, i);
            let gi = layout.slice(grad, i);
            AgentLie { lf: gi.dot(&m.dynamics.drift(&xi)), lg: m.dynamics.actuation(&xi).transpose() * gi }
        })
        .collect()
}

/// Log-sum-exp composition of atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedBarrier {
    pub atoms: Vec<BarrierAtom>,
    pub rho: f64,
}

impl ComposedBarrier {
    pub fn new(atoms: Vec<BarrierAtom>, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Scenario("rho must be positive".into()));
        }
        Ok(Self { atoms, rho })
    }

    /// Collision atoms for every normal/normal, normal/adversarial and
    /// normal/obstacle pair. Pairs with no normal agent are left out since
    /// nothing can be done about them.
    pub fn collision(models: &[AgentModel], agent_radius: f64, obstacles: &[(Vec<f64>, f64)], rho: f64) -> Result<Self> {
        let mut atoms = Vec::new();
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                if models[i].role == Role::Normal || models[j].role == Role::Normal {
                    atoms.push(BarrierAtom::PairCollision { i, j, radius: agent_radius });
                }
            }
        }
        for (i, m) in models.iter().enumerate() {
            if m.role == Role::Normal {
                for (center, r) in obstacles {
                    atoms.push(BarrierAtom::AgentObstacle { i, center: center.clone(), radius: r + agent_radius / 2.0 });
                }
            }
        }
        Self::new(atoms, rho)
    }

    /// Atoms seen by `agent`: those whose agents (and obstacle centers) lie
    /// within `radius` of the agent's position.
    pub fn local_to(&self, models: &[AgentModel], x: &DVector<f64>, agent: usize, radius: f64) -> Self {
        let layout = Layout::states(models);
        let pos: Vec<DVector<f64>> = (0..models.len()).map(|k| models[k].dynamics.position(&layout.slice(x, k))).collect();
        let near = |k: usize| (&pos[k] - &pos[agent]).norm() <= radius;
        let atoms = self
            .atoms
            .iter()
            .filter(|a| match a {
                BarrierAtom::PairCollision { i, j, .. } => near(*i) && near(*j),
                BarrierAtom::AgentObstacle { i, center, .. } => near(*i) && (vec_of(center) - &pos[agent]).norm() <= radius,
                _ => near(a.agents().0),
            })
            .cloned()
            .collect();
        Self { atoms, rho: self.rho }
    }

    /// Atoms that depend on `agent`. Its gradient block keeps the direction it
    /// has in the full barrier, without the softmax weights underflowing.
    pub fn involving(&self, agent: usize) -> Self {
        let atoms = self
            .atoms
            .iter()
            .filter(|a| {
                let (i, j) = a.agents();
                i == agent || j == Some(agent)
            })
            .cloned()
            .collect();
        Self { atoms, rho: self.rho }
    }

    pub fn atom_values(&self, models: &[AgentModel], x: &DVector<f64>) -> Vec<f64> {
        let layout = Layout::states(models);
        self.atoms.iter().map(|a| a.eval(models, &layout, x)).collect()
    }

    /// `h_tot(x)`; negative infinity when there are no atoms.
    pub fn eval_h(&self, models: &[AgentModel], x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.atom_values(models, x), self.rho)
    }

    pub fn grad_h(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<DVector<f64>> {
        let layout = Layout::states(models);
        let values: Vec<f64> = self.atoms.iter().map(|a| a.eval(models, &layout, x)).collect();
        let w = softmax_weights(&values, self.rho);
        let mut g = DVector::zeros(x.len());
        for (atom, wk) in self.atoms.iter().zip(w) {
            atom.add_gradient(models, &layout, x, wk, &mut g)?;
        }
        Ok(g)
    }

    /// `Hess h_tot(x) v`, using
    /// `sum w_k H_k + rho (sum w_k g_k g_k^T - g g^T)`.
    pub fn hess_vec(&self, models: &[AgentModel], x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let layout = Layout::states(models);
        let values: Vec<f64> = self.atoms.iter().map(|a| a.eval(models, &layout, x)).collect();
        let w = softmax_weights(&values, self.rho);
        let mut out = DVector::zeros(x.len());
        let mut g = DVector::zeros(x.len());
        for (atom, &wk) in self.atoms.iter().zip(&w) {
            let gk = atom.gradient(models, &layout, x)?;
            atom.add_hess_vec(models, &layout, x, v, wk, &mut out);
            out += &gk * (self.rho * wk * gk.dot(v));
            g += gk * wk;
        }
        out -= &g * (self.rho * g.dot(v));
        Ok(out)
    }
}

impl SafeSetFunction for ComposedBarrier {
    fn value(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<f64> {
        Ok(self.eval_h(models, x))
    }

    fn gradient(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<DVector<f64>> {
        self.grad_h(models, x)
    }
}

/// Contribution of one agent to the barrier derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct HdotTerms {
    pub lf: f64,
    pub lg_u: f64,
    /// `|dh/dx_i| * phi_i^max`, the largest possible disturbance contribution.
    pub lphi_bound: f64,
}

/// Splits `h'` under inputs `u` into per-agent terms.
pub fn decompose_hdot(
    barrier: &dyn SafeSetFunction,
    models: &[AgentModel],
    x: &DVector<f64>,
    u: &[DVector<f64>],
) -> Result<Vec<HdotTerms>> {
    let grad = barrier.gradient(models, x)?;
    let layout = Layout::states(models);
    let lie = lie_from_gradient(models, x, &grad);
    Ok(lie
        .into_iter()
        .enumerate()
        .map(|(i, l)| HdotTerms {
            lf: l.lf,
            lg_u: l.lg.dot(&u[i]),
            lphi_bound: layout.slice(&grad, i).norm() * models[i].disturbance_bound,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Dynamics;
    use crate::polytope::PolytopeSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn agent(id: usize, dynamics: Dynamics, role: Role) -> AgentModel {
        let m = dynamics.input_dim();
        AgentModel::new(id, dynamics, PolytopeSpec::symmetric_box(&vec![1.0; m]), role)
    }

    fn fd_gradient(b: &ComposedBarrier, models: &[AgentModel], x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |k, _| {
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            (b.eval_h(models, &xp) - b.eval_h(models, &xm)) / (2.0 * h)
        })
    }

    fn mixed_models() -> Vec<AgentModel> {
        vec![
            agent(0, Dynamics::Unicycle { b_offset: 0.5 }, Role::Normal),
            agent(1, Dynamics::DoubleIntegrator { dim: 2, damping: 1.0 }, Role::Normal),
            agent(2, Dynamics::SingleIntegrator { dim: 2 }, Role::Adversarial),
            agent(3, Dynamics::SingleIntegrator { dim: 2 }, Role::Adversarial),
        ]
    }

    #[test]
    fn pair_gradient_matches_closed_form() {
        let models = vec![
            agent(0, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
            agent(1, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
        ];
        let b = ComposedBarrier::new(vec![BarrierAtom::PairCollision { i: 0, j: 1, radius: 2.0 }], 3.0).unwrap();
        let x = DVector::from_column_slice(&[1.0, 2.0, -0.5, 4.0]);
        let g = b.grad_h(&models, &x).unwrap();
        assert_eq!(g.as_slice(), &[-3.0, 4.0, 3.0, -4.0]);
    }

    #[test]
    fn coincident_pair_is_singular() {
        let models = vec![
            agent(0, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
            agent(1, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
        ];
        let b = ComposedBarrier::new(vec![BarrierAtom::PairCollision { i: 0, j: 1, radius: 2.0 }], 3.0).unwrap();
        let x = DVector::from_column_slice(&[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(b.grad_h(&models, &x).unwrap_err(), Error::GradientSingularity(0, 1));
    }

    #[test]
    fn remark_three_exclusions() {
        let models = mixed_models();
        let b = ComposedBarrier::collision(&models, 1.0, &[(vec![5.0, 5.0], 1.0)], 2.0).unwrap();
        for a in &b.atoms {
            let (i, j) = a.agents();
            let normal_involved = models[i].is_normal() || j.map(|j| models[j].is_normal()).unwrap_or(false);
            assert!(normal_involved);
        }
        // 6 pairs minus the adversary pair, plus one obstacle per normal agent
        assert_eq!(b.atoms.len(), 5 + 2);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let models = mixed_models();
        let b = ComposedBarrier::collision(&models, 1.5, &[(vec![1.0, -1.0], 0.7)], 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = DVector::from_fn(11, |_, _| rng.random_range(-3.0..3.0));
            let g = b.grad_h(&models, &x).unwrap();
            let fd = fd_gradient(&b, &models, &x);
            assert!((&g - &fd).norm() <= 1e-6 * (1.0 + g.norm()), "{g} vs {fd}");

            let v = DVector::from_fn(11, |_, _| rng.random_range(-1.0..1.0));
            let hv = b.hess_vec(&models, &x, &v).unwrap();
            let step = 1e-6;
            let fd_hv =
                (b.grad_h(&models, &(&x + &v * step)).unwrap() - b.grad_h(&models, &(&x - &v * step)).unwrap()) / (2.0 * step);
            assert!((&hv - &fd_hv).norm() <= 1e-5 * (1.0 + hv.norm()), "{hv} vs {fd_hv}");
        }
    }

    #[test]
    fn hdot_terms() {
        let models = vec![agent(0, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal)];
        let b = ComposedBarrier::new(vec![BarrierAtom::Containment { i: 0, center: vec![0.0, 0.0], radius: 1.0 }], 1.0).unwrap();
        let x = DVector::from_column_slice(&[0.3, -0.4]);
        let u = DVector::from_column_slice(&[1.0, 2.0]);
        let t = decompose_hdot(&b, &models, &x, std::slice::from_ref(&u)).unwrap();
        assert_eq!(t[0].lf, 0.0);
        assert!((t[0].lg_u - 2.0 * x.dot(&u)).abs() < 1e-15);
    }

    #[test]
    fn equal_velocity_pair_keeps_h() {
        let models = vec![
            agent(0, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
            agent(1, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
        ];
        let b = ComposedBarrier::new(vec![BarrierAtom::PairCollision { i: 0, j: 1, radius: 1.0 }], 1.0).unwrap();
        let x = DVector::from_column_slice(&[0.0, 0.0, 3.0, 1.0]);
        let u = DVector::from_column_slice(&[0.7, -0.2]);
        let t = decompose_hdot(&b, &models, &x, &[u.clone(), u]).unwrap();
        assert!((t[0].lg_u + t[1].lg_u).abs() < 1e-14);
    }

    #[test]
    fn local_barrier_drops_far_atoms() {
        let models = vec![
            agent(0, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
            agent(1, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
            agent(2, Dynamics::SingleIntegrator { dim: 2 }, Role::Normal),
        ];
        let b = ComposedBarrier::collision(&models, 1.0, &[], 1.0).unwrap();
        let x = DVector::from_column_slice(&[0.0, 0.0, 3.0, 0.0, 50.0, 0.0]);
        let local = b.local_to(&models, &x, 0, 35.0);
        assert_eq!(local.atoms, vec![BarrierAtom::PairCollision { i: 0, j: 1, radius: 1.0 }]);
    }

    #[test]
    fn alpha_functions() {
        let a = AlphaFunction::Cubic { c: 2.0 };
        assert_eq!(a.eval(0.0), 0.0);
        assert_eq!(a.eval(-1.5), -a.eval(1.5));
        assert!(a.eval(0.1) < a.eval(0.2));
        assert!(AlphaFunction::Linear { c: 0.0 }.validate().is_err());
    }
}

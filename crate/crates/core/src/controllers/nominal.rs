use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentModel, ControlAffine, Layout};
use crate::error::{Error, Result};

/// Cubic Bezier curve driven by the timing law `s(t) = (t_f - t) / (t_f - t_0)`,
/// starting at `points[0]` when `t = t_0` and ending at `points[3]` when `t = t_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bezier {
    pub points: [Vec<f64>; 4],
    pub t0: f64,
    pub tf: f64,
}

impl Bezier {
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Timing law `s(t)`.
    pub fn phase(&self, t: f64) -> f64 {
        (self.tf - t) / (self.tf - self.t0)
    }

    fn check(&self, t: f64) -> Result<f64> {
        if t < self.t0 - 1e-12 || t > self.tf + 1e-12 {
            return Err(Error::TimeOutOfRange { time: t, t0: self.t0, tf: self.tf });
        }
        // progress from the first control point
        Ok((1.0 - self.phase(t)).clamp(0.0, 1.0))
    }

    fn combine(&self, weights: &[(usize, f64)]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for &(k, w) in weights {
            out += DVector::from_column_slice(&self.points[k]) * w;
        }
        out
    }

    pub fn position(&self, t: f64) -> Result<DVector<f64>> {
        let r = self.check(t)?;
        let q = 1.0 - r;
        Ok(self.combine(&[(0, q * q * q), (1, 3.0 * r * q * q), (2, 3.0 * r * r * q), (3, r * r * r)]))
    }

    pub fn velocity(&self, t: f64) -> Result<DVector<f64>> {
        let r = self.check(t)?;
        let q = 1.0 - r;
        let k = 3.0 / (self.tf - self.t0);
        Ok(self.combine(&[(0, -k * q * q), (1, k * (q * q - 2.0 * r * q)), (2, k * (2.0 * r * q - r * r)), (3, k * r * r)]))
    }

    pub fn acceleration(&self, t: f64) -> Result<DVector<f64>> {
        let r = self.check(t)?;
        let q = 1.0 - r;
        let k = 6.0 / (self.tf - self.t0).powi(2);
        Ok(self.combine(&[(0, k * q), (1, k * (r - 2.0 * q)), (2, k * (q - 2.0 * r)), (3, k * r)]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingOrder {
    /// The tracked output is velocity-controlled: `u = p_d' + k1 (p_d - p)`.
    First,
    /// The tracked output is acceleration-controlled (position/velocity state):
    /// `u = p_d'' + k1 e_p + k2 e_v` with `e = x_d - x`.
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalPolicy {
    /// Track `curve(t) + offset`.
    FormationBezier {
        curve: Bezier,
        offset: Vec<f64>,
        k1: f64,
        k2: f64,
        order: TrackingOrder,
        /// Use `u = -K e - p_d''` as printed, which pushes away from the target.
        #[serde(default)]
        literal_paper_sign: bool,
    },
    /// Chase another agent: `u = -k1 (p - p_t) - k2 (v - v_t)`.
    PursuitPd {
        target: usize,
        k1: f64,
        k2: f64,
    },
    Zero,
}

/// Position and (for second-order agents) velocity of an agent's output.
fn output_state(model: &AgentModel, xi: &DVector<f64>) -> (DVector<f64>, Option<DVector<f64>>) {
    let p = model.dynamics.position(xi);
    let d = p.len();
    let v = (xi.len() == 2 * d).then(|| xi.rows(d, d).into_owned());
    (p, v)
}

/// Nominal input of `agent` at stacked state `x` and time `t`.
pub fn nominal_input(
    policy: &NominalPolicy,
    models: &[AgentModel],
    x: &DVector<f64>,
    agent: usize,
    t: f64,
) -> Result<DVector<f64>> {
    let layout = Layout::states(models);
    let model = &models[agent];
    let xi = layout.slice(x, agent);
    match policy {
        NominalPolicy::Zero => Ok(DVector::zeros(model.input_dim())),
        NominalPolicy::FormationBezier { curve, offset, k1, k2, order, literal_paper_sign } => {
            let pd = curve.position(t)? + DVector::from_column_slice(offset);
            let vd = curve.velocity(t)?;
            let (p, v) = output_state(model, &xi);
            match order {
                TrackingOrder::First => Ok(vd + (pd - p) * *k1),
                TrackingOrder::Second => {
                    let v = v.ok_or_else(|| Error::Scenario(format!("agent {agent} has no velocity state")))?;
                    let ad = curve.acceleration(t)?;
                    let feedback = (pd - p) * *k1 + (vd - v) * *k2;
                    Ok(if *literal_paper_sign { -feedback - ad } else { feedback + ad })
                }
            }
        }
        NominalPolicy::PursuitPd { target, k1, k2 } => {
            let xt = layout.slice(x, *target);
            let (p, v) = output_state(model, &xi);
            let (pt, vt) = output_state(&models[*target], &xt);
            let mut u = (p - pt) * -*k1;
            if let (Some(v), Some(vt)) = (v, vt) {
                u -= (v - vt) * *k2;
            }
            Ok(u)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dynamics, Role};
    use crate::polytope::PolytopeSpec;

    fn curve() -> Bezier {
        Bezier {
            points: [vec![0.0, 0.0, 0.0], vec![-25.0, 25.0, 30.0], vec![125.0, 75.0, -30.0], vec![100.0, 100.0, 0.0]],
            t0: 0.0,
            tf: 140.0,
        }
    }

    #[test]
    fn endpoints() {
        let c = curve();
        assert_eq!(c.phase(0.0), 1.0);
        assert_eq!(c.position(0.0).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
        assert!((c.position(140.0).unwrap() - DVector::from_column_slice(&[100.0, 100.0, 0.0])).amax() < 1e-12);
        assert!(matches!(c.position(141.0), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn derivatives_match_differences() {
        let c = curve();
        for t in [1.0, 33.3, 70.0, 139.0] {
            let h = 1e-4;
            let dv = (c.position(t + h).unwrap() - c.position(t - h).unwrap()) / (2.0 * h);
            let da = (c.velocity(t + h).unwrap() - c.velocity(t - h).unwrap()) / (2.0 * h);
            assert!((dv - c.velocity(t).unwrap()).amax() < 1e-5);
            assert!((da - c.acceleration(t).unwrap()).amax() < 1e-5);
        }
    }

    fn di(id: usize) -> AgentModel {
        AgentModel::new(
            id,
            Dynamics::DoubleIntegrator { dim: 3, damping: 3.0 },
            PolytopeSpec::symmetric_box(&[2.0; 3]),
            Role::Normal,
        )
    }

    #[test]
    fn second_order_tracking() {
        let c = curve();
        let policy = NominalPolicy::FormationBezier {
            curve: c.clone(),
            offset: vec![30.0, 0.0, 0.0],
            k1: 2.0,
            k2: 2.0 * 2f64.sqrt(),
            order: TrackingOrder::Second,
            literal_paper_sign: false,
        };
        let models = vec![di(0)];
        let t = 50.0;
        let pd = c.position(t).unwrap() + DVector::from_column_slice(&[30.0, 0.0, 0.0]);
        let mut x = DVector::zeros(6);
        x.rows_mut(0, 3).copy_from(&pd);
        x.rows_mut(3, 3).copy_from(&c.velocity(t).unwrap());
        let u = nominal_input(&policy, &models, &x, 0, t).unwrap();
        assert!((u - c.acceleration(t).unwrap()).amax() < 1e-12);

        // pure position error e: literal sign gives -k1 e - a_d
        let e = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let mut xe = x.clone();
        xe.rows_mut(0, 3).copy_from(&(&pd - &e));
        let literal = NominalPolicy::FormationBezier {
            curve: c.clone(),
            offset: vec![30.0, 0.0, 0.0],
            k1: 2.0,
            k2: 2.0 * 2f64.sqrt(),
            order: TrackingOrder::Second,
            literal_paper_sign: true,
        };
        let u = nominal_input(&literal, &models, &xe, 0, t).unwrap();
        assert!((u - (-&e * 2.0 - c.acceleration(t).unwrap())).amax() < 1e-12);
    }

    #[test]
    fn pursuit_points_at_target() {
        let models = vec![di(0), di(1)];
        let mut x = DVector::zeros(12);
        x[6] = 4.0;
        let u = nominal_input(&NominalPolicy::PursuitPd { target: 1, k1: 1.0, k2: 2.0 }, &models, &x, 0, 0.0).unwrap();
        assert_eq!(u.as_slice(), &[4.0, 0.0, 0.0]);
    }
}

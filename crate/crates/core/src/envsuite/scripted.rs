//! Hand-written reference controllers.

use crate::agent::Policy;
use crate::error::{check_dim, Error, Result};

use super::pendulum::wrap_angle;

/// `a = sign(0.5 - x)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LineWalkController;

impl Policy for LineWalkController {
    fn act(&self, state: &[f32]) -> Result<Vec<f32>> {
        check_dim("line_walk state", 1, state.len())?;
        let d = 0.5 - f64::from(state[0]);
        let a = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        Ok(vec![a])
    }
}

/// `a = clamp(-k·(pos + 2·vel))` per axis.
#[derive(Clone, Copy, Debug)]
pub struct PointMassController {
    pub gain: f64,
}

impl Default for PointMassController {
    fn default() -> Self {
        PointMassController { gain: 1.0 }
    }
}

impl Policy for PointMassController {
    fn act(&self, state: &[f32]) -> Result<Vec<f32>> {
        check_dim("point_mass_2d state", 4, state.len())?;
        Ok((0..2)
            .map(|i| {
                let u = -self.gain * (f64::from(state[i]) + 2.0 * f64::from(state[i + 2]));
                u.clamp(-1.0, 1.0) as f32
            })
            .collect())
    }
}

/// Energy-pumping swing-up with a PD catch near upright.
#[derive(Clone, Copy, Debug)]
pub struct PendulumController {
    pub catch_angle: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Default for PendulumController {
    fn default() -> Self {
        PendulumController {
            catch_angle: 0.6,
            kp: 10.0,
            kd: 2.0,
        }
    }
}

impl PendulumController {
    /// Energy of the unforced dynamics, `0.5·θ̇² + 15·cos θ`; upright at rest
    /// is 15.
    fn energy(theta: f64, theta_dot: f64) -> f64 {
        0.5 * theta_dot * theta_dot + 15.0 * theta.cos()
    }
}

impl Policy for PendulumController {
    fn act(&self, state: &[f32]) -> Result<Vec<f32>> {
        check_dim("pendulum state", 3, state.len())?;
        let theta = wrap_angle(f64::from(state[1]).atan2(f64::from(state[0])));
        let omega = f64::from(state[2]);
        let torque = if theta.abs() < self.catch_angle {
            -(self.kp * theta + self.kd * omega)
        } else {
            let deficit = 15.0 - Self::energy(theta, omega);
            let dir = if omega == 0.0 { 1.0 } else { omega.signum() };
            2.0 * (deficit * dir).clamp(-1.0, 1.0)
        };
        Ok(vec![(torque / 2.0).clamp(-1.0, 1.0) as f32])
    }
}

pub fn scripted_controller(env: &str) -> Result<Box<dyn Policy + Send + Sync>> {
    Ok(match env {
        "line_walk" => Box::new(LineWalkController),
        "point_mass_2d" => Box::new(PointMassController::default()),
        "pendulum" => Box::new(PendulumController::default()),
        other => return Err(Error::config(format!("no scripted controller for env `{other}`"))),
    })
}

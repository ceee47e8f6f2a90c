use std::f64::consts::PI;

use super::{Env, EnvSpec, EpisodeClock, StepResult};
use crate::error::Result;
use crate::rng::{substream, uniform};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Torque-limited pendulum swing-up with `θ = 0` upright. State is
/// `(cos θ, sin θ, θ̇)`; the cost is charged on the state before the step.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
}

impl Pendulum {
    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec {
                name: "pendulum",
                state_dim: 3,
                action_dim: 1,
                max_episode_steps: 200,
                reward_range: (-(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE), 0.0),
            },
            theta: 0.0,
            theta_dot: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    pub fn reset_to(&mut self, theta: f64, theta_dot: f64) -> Vec<f32> {
        self.clock.reset();
        self.theta = theta;
        self.theta_dot = theta_dot.clamp(-MAX_SPEED, MAX_SPEED);
        self.observation()
    }

    pub fn angle(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn observation(&self) -> Vec<f32> {
        vec![self.theta.cos() as f32, self.theta.sin() as f32, self.theta_dot as f32]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = substream(seed, "pendulum.reset");
        let theta = uniform(&mut rng, -PI, PI);
        let theta_dot = uniform(&mut rng, -1.0, 1.0);
        self.reset_to(theta, theta_dot)
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let a = self.clock.begin(action, &self.spec)?;
        let u = MAX_TORQUE * a[0];
        let th = wrap_angle(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;
        let acc = -(3.0 * GRAVITY / (2.0 * LENGTH)) * (self.theta + PI).sin() + 3.0 * u / (MASS * LENGTH * LENGTH);
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.theta_dot * DT);
        Ok(self.clock.finish(self.observation(), -cost, false, &self.spec))
    }

    fn clamp_count(&self) -> u64 {
        self.clock.clamped()
    }
}

use super::{Env, EnvSpec, EpisodeClock, StepResult};
use crate::error::Result;
use crate::rng::{substream, uniform};

pub const POINT_MASS_GOAL_RADIUS: f64 = 0.05;
pub const POINT_MASS_BONUS: f64 = 10.0;

/// A 2-D point mass steered by acceleration toward the origin. State is
/// `(x, y, vx, vy)`; velocity is clamped to `[-0.5, 0.5]` and position to
/// `[-2, 2]` per axis.
#[derive(Clone, Debug)]
pub struct PointMass2D {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    clock: EpisodeClock,
}

impl PointMass2D {
    pub fn new() -> Self {
        PointMass2D {
            spec: EnvSpec {
                name: "point_mass_2d",
                state_dim: 4,
                action_dim: 2,
                max_episode_steps: 200,
                reward_range: (-2.0 * std::f64::consts::SQRT_2, POINT_MASS_BONUS),
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            clock: EpisodeClock::default(),
        }
    }

    pub fn reset_to(&mut self, pos: [f64; 2], vel: [f64; 2]) -> Vec<f32> {
        self.clock.reset();
        self.pos = pos.map(|p| p.clamp(-2.0, 2.0));
        self.vel = vel.map(|v| v.clamp(-0.5, 0.5));
        self.observation()
    }

    fn observation(&self) -> Vec<f32> {
        vec![self.pos[0] as f32, self.pos[1] as f32, self.vel[0] as f32, self.vel[1] as f32]
    }
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMass2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = substream(seed, "point_mass_2d.reset");
        let x = uniform(&mut rng, -1.0, 1.0);
        let y = uniform(&mut rng, -1.0, 1.0);
        self.reset_to([x, y], [0.0, 0.0])
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let a = self.clock.begin(action, &self.spec)?;
        for i in 0..2 {
            self.vel[i] = (self.vel[i] + 0.1 * a[i]).clamp(-0.5, 0.5);
            self.pos[i] = (self.pos[i] + self.vel[i]).clamp(-2.0, 2.0);
        }
        let dist = self.pos[0].hypot(self.pos[1]);
        let terminal = dist < POINT_MASS_GOAL_RADIUS;
        let reward = -dist + if terminal { POINT_MASS_BONUS } else { 0.0 };
        Ok(self.clock.finish(self.observation(), reward, terminal, &self.spec))
    }

    fn clamp_count(&self) -> u64 {
        self.clock.clamped()
    }
}

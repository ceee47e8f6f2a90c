use super::{Env, EnvSpec, EpisodeClock, StepResult};
use crate::error::Result;
use crate::rng::{substream, uniform};

pub const LINE_WALK_GOAL: f64 = 0.5;

/// A point on `[-1, 1]` that must walk to `x = 0.5`. Each step moves it by
/// `0.1·a`; reward is `-|x - 0.5|` after the move.
#[derive(Clone, Debug)]
pub struct LineWalk {
    spec: EnvSpec,
    x: f64,
    clock: EpisodeClock,
}

impl LineWalk {
    pub fn new() -> Self {
        LineWalk {
            spec: EnvSpec {
                name: "line_walk",
                state_dim: 1,
                action_dim: 1,
                max_episode_steps: 50,
                reward_range: (-1.5, 0.0),
            },
            x: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    /// Starts an episode at an exact position.
    pub fn reset_to(&mut self, x: f64) -> Vec<f32> {
        self.clock.reset();
        self.x = x.clamp(-1.0, 1.0);
        vec![self.x as f32]
    }

    pub fn position(&self) -> f64 {
        self.x
    }
}

impl Default for LineWalk {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for LineWalk {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let x = uniform(&mut substream(seed, "line_walk.reset"), -1.0, 1.0);
        self.reset_to(x)
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let a = self.clock.begin(action, &self.spec)?;
        self.x = (self.x + 0.1 * a[0]).clamp(-1.0, 1.0);
        let dist = (self.x - LINE_WALK_GOAL).abs();
        Ok(self.clock.finish(vec![self.x as f32], -dist, dist < 0.01, &self.spec))
    }

    fn clamp_count(&self) -> u64 {
        self.clock.clamped()
    }
}

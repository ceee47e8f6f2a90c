//! Small deterministic control tasks with time limits.
//!
//! Every env takes actions in `[-1, 1]^d`. Out-of-range actions are clamped
//! and counted rather than rejected. An episode that hits the step limit is
//! truncated, not terminal, so its last transition still bootstraps.

mod dataset;
mod line_walk;
mod pendulum;
mod point_mass;
mod scripted;

use crate::agent::Policy;
use crate::error::{Error, Result};
use crate::replay::Transition;
use crate::rng::{normal, Rng};

pub use dataset::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetHeader};
pub use line_walk::LineWalk;
pub use pendulum::Pendulum;
pub use point_mass::PointMass2D;
pub use scripted::{scripted_controller, LineWalkController, PendulumController, PointMassController};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: u32,
    pub reward_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f32>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f32>;
    fn step(&mut self, action: &[f32]) -> Result<StepResult>;
    /// Number of action components clamped into `[-1, 1]` so far.
    fn clamp_count(&self) -> u64;
}

pub const ENVS: &[&str] = &["line_walk", "point_mass_2d", "pendulum"];

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    Ok(match name {
        "line_walk" => Box::new(LineWalk::new()),
        "point_mass_2d" => Box::new(PointMass2D::new()),
        "pendulum" => Box::new(Pendulum::new()),
        other => {
            return Err(Error::config(format!(
                "unknown env `{other}` (known: {})",
                ENVS.join(", ")
            )))
        }
    })
}

/// Step bookkeeping shared by every env.
#[derive(Clone, Debug, Default)]
pub(crate) struct EpisodeClock {
    steps: u32,
    done: bool,
    clamped: u64,
}

impl EpisodeClock {
    pub(crate) fn reset(&mut self) {
        self.steps = 0;
        self.done = false;
    }

    /// Validates the call and returns the clamped action.
    pub(crate) fn begin(&mut self, action: &[f32], spec: &EnvSpec) -> Result<Vec<f64>> {
        if self.done {
            return Err(Error::usage(format!("{}: step after episode end", spec.name)));
        }
        if action.len() != spec.action_dim {
            return Err(Error::Dimension {
                context: "env action width",
                expected: spec.action_dim,
                actual: action.len(),
            });
        }
        Ok(action
            .iter()
            .map(|&a| {
                let a = f64::from(a);
                if (-1.0..=1.0).contains(&a) {
                    a
                } else {
                    self.clamped += 1;
                    if a.is_nan() {
                        0.0
                    } else {
                        a.clamp(-1.0, 1.0)
                    }
                }
            })
            .collect())
    }

    pub(crate) fn finish(&mut self, next_state: Vec<f32>, reward: f64, terminal: bool, spec: &EnvSpec) -> StepResult {
        self.steps += 1;
        let truncated = !terminal && self.steps >= spec.max_episode_steps;
        self.done = terminal || truncated;
        StepResult {
            next_state,
            reward,
            terminal,
            truncated,
        }
    }

    pub(crate) fn clamped(&self) -> u64 {
        self.clamped
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub length: u32,
    pub terminal: bool,
}

/// Runs one episode from `seed`. With `noise`, Gaussian noise of the given
/// scale is added to every action and the result clipped to `[-1, 1]`.
pub fn run_episode(
    env: &mut dyn Env,
    policy: &dyn Policy,
    seed: u64,
    mut noise: Option<(f64, &mut Rng)>,
    mut on_transition: impl FnMut(Transition),
) -> Result<EpisodeStats> {
    let mut state = env.reset(seed);
    let mut stats = EpisodeStats {
        episode_return: 0.0,
        length: 0,
        terminal: false,
    };
    loop {
        let mut action = policy.act(&state)?;
        if let Some((sigma, rng)) = noise.as_mut() {
            for a in &mut action {
                *a = (f64::from(*a) + *sigma * normal(rng)).clamp(-1.0, 1.0) as f32;
            }
        }
        let step = env.step(&action)?;
        stats.episode_return += step.reward;
        stats.length += 1;
        stats.terminal = step.terminal;
        let done = step.done();
        on_transition(Transition {
            state: std::mem::take(&mut state),
            action,
            reward: step.reward as f32,
            next_state: step.next_state.clone(),
            not_terminal: !step.terminal,
        });
        state = step.next_state;
        if done {
            return Ok(stats);
        }
    }
}

//! Policy checkpoints.
//!
//! Training is batched behind assessment phases. During a phase the policy is
//! held fixed and scored episode by episode; when the phase ends the policy
//! may replace the checkpoint, and then all training deferred during the phase
//! is run at once.

use std::fmt;

use crate::error::{Error, Result};

/// Scores an assessment phase from its episode returns.
pub trait AssessmentCriterion: Send + fmt::Debug {
    fn name(&self) -> &'static str;
    fn reset(&mut self);
    fn record(&mut self, episode_reward: f64);
    /// Current score; `None` before any episode.
    fn value(&self) -> Option<f64>;
    /// Whether the phase should stop early against `checkpoint_perf`.
    fn falls_short(&self, checkpoint_perf: f64) -> bool;
}

/// Minimum episode return; stops once the minimum is no better than the
/// checkpoint.
#[derive(Debug, Default)]
pub struct MinCriterion {
    min: Option<f64>,
}

impl AssessmentCriterion for MinCriterion {
    fn name(&self) -> &'static str {
        "min"
    }
    fn reset(&mut self) {
        self.min = None;
    }
    fn record(&mut self, r: f64) {
        self.min = Some(self.min.map_or(r, |m| m.min(r)));
    }
    fn value(&self) -> Option<f64> {
        self.min
    }
    fn falls_short(&self, checkpoint_perf: f64) -> bool {
        self.min.is_some_and(|m| m <= checkpoint_perf)
    }
}

/// Running mean of episode returns; stops once the mean is below the
/// checkpoint.
#[derive(Debug, Default)]
pub struct MeanCriterion {
    sum: f64,
    count: u32,
}

impl AssessmentCriterion for MeanCriterion {
    fn name(&self) -> &'static str {
        "mean"
    }
    fn reset(&mut self) {
        self.sum = 0.0;
        self.count = 0;
    }
    fn record(&mut self, r: f64) {
        self.sum += r;
        self.count += 1;
    }
    fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / f64::from(self.count))
    }
    fn falls_short(&self, checkpoint_perf: f64) -> bool {
        self.value().is_some_and(|m| m < checkpoint_perf)
    }
}

pub const CRITERIA: &[&str] = &["min", "mean"];

pub fn criterion(name: &str) -> Result<Box<dyn AssessmentCriterion>> {
    match name {
        "min" => Ok(Box::<MinCriterion>::default()),
        "mean" => Ok(Box::<MeanCriterion>::default()),
        other => Err(Error::config(format!(
            "unknown checkpoint criterion `{other}` (known: {})",
            CRITERIA.join(", ")
        ))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssessConfig {
    pub criterion: String,
    pub early_episodes: u32,
    pub late_episodes: u32,
    pub early_timesteps: u64,
    pub reset_weight: f64,
    pub early_termination: bool,
}

impl Default for AssessConfig {
    fn default() -> Self {
        AssessConfig {
            criterion: "min".to_string(),
            early_episodes: 1,
            late_episodes: 20,
            early_timesteps: 750_000,
            reset_weight: 0.9,
            early_termination: true,
        }
    }
}

impl AssessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.early_episodes == 0 || self.late_episodes == 0 {
            return Err(Error::config("assessment episode counts must be at least 1"));
        }
        if !(self.reset_weight > 0.0 && self.reset_weight <= 1.0) {
            return Err(Error::config(format!(
                "reset weight must lie in (0, 1], got {}",
                self.reset_weight
            )));
        }
        criterion(&self.criterion)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Early,
    Late,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    AssessmentDone,
}

/// Summary of one finished assessment phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssessmentOutcome {
    pub criterion_value: f64,
    pub episodes_used: u32,
    pub full_budget: bool,
    pub updated: bool,
}

#[derive(Debug)]
pub struct CheckpointController<P> {
    config: AssessConfig,
    criterion: Box<dyn AssessmentCriterion>,
    checkpoint: Option<P>,
    checkpoint_perf: f64,
    episodes_this_phase: u32,
    timesteps_since_training: u64,
    phase: Phase,
    awaiting_finalize: bool,
    last_outcome: Option<AssessmentOutcome>,
    total_trained: u64,
    assessments: u64,
}

impl<P> CheckpointController<P> {
    pub fn new(config: AssessConfig) -> Result<Self> {
        config.validate()?;
        let criterion = criterion(&config.criterion)?;
        Ok(CheckpointController {
            config,
            criterion,
            checkpoint: None,
            checkpoint_perf: f64::NEG_INFINITY,
            episodes_this_phase: 0,
            timesteps_since_training: 0,
            phase: Phase::Early,
            awaiting_finalize: false,
            last_outcome: None,
            total_trained: 0,
            assessments: 0,
        })
    }

    pub fn config(&self) -> &AssessConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn checkpoint(&self) -> Option<&P> {
        self.checkpoint.as_ref()
    }

    /// Seeds the checkpoint slot (with the initial policy) without touching
    /// its recorded performance.
    pub fn set_initial(&mut self, policy: P) {
        self.checkpoint = Some(policy);
    }

    pub fn checkpoint_perf(&self) -> f64 {
        self.checkpoint_perf
    }

    pub fn running_perf(&self) -> Option<f64> {
        self.criterion.value()
    }

    pub fn episodes_this_phase(&self) -> u32 {
        self.episodes_this_phase
    }

    pub fn timesteps_since_training(&self) -> u64 {
        self.timesteps_since_training
    }

    pub fn last_outcome(&self) -> Option<AssessmentOutcome> {
        self.last_outcome
    }

    /// Total train steps run through [`Self::drain_training`].
    pub fn total_trained(&self) -> u64 {
        self.total_trained
    }

    pub fn assessments(&self) -> u64 {
        self.assessments
    }

    pub fn budget(&self) -> u32 {
        match self.phase {
            Phase::Early => self.config.early_episodes,
            Phase::Late => self.config.late_episodes,
        }
    }

    pub fn record_episode(&mut self, episode_reward: f64, episode_len: u64) -> Result<Decision> {
        if self.awaiting_finalize {
            return Err(Error::usage("assessment already finished; finalize it first"));
        }
        self.criterion.record(episode_reward);
        self.episodes_this_phase += 1;
        self.timesteps_since_training += episode_len;
        let exhausted = self.episodes_this_phase >= self.budget();
        let short = self.config.early_termination && self.criterion.falls_short(self.checkpoint_perf);
        if exhausted || short {
            self.awaiting_finalize = true;
            Ok(Decision::AssessmentDone)
        } else {
            Ok(Decision::Continue)
        }
    }

    /// Closes the phase. `snapshot` is called only when the checkpoint is
    /// replaced.
    pub fn finalize_assessment(&mut self, snapshot: impl FnOnce() -> P) -> Result<bool> {
        if !self.awaiting_finalize {
            return Err(Error::usage("no finished assessment to finalize"));
        }
        let value = self.criterion.value().expect("at least one episode recorded");
        let full_budget = self.episodes_this_phase >= self.budget();
        let updated = full_budget && value >= self.checkpoint_perf;
        if updated {
            self.checkpoint = Some(snapshot());
            self.checkpoint_perf = value;
        }
        self.last_outcome = Some(AssessmentOutcome {
            criterion_value: value,
            episodes_used: self.episodes_this_phase,
            full_budget,
            updated,
        });
        self.assessments += 1;
        self.criterion.reset();
        self.episodes_this_phase = 0;
        self.awaiting_finalize = false;
        Ok(updated)
    }

    /// Switches to the late phase once `total_env_steps` reaches the early
    /// horizon, scaling the checkpoint score once.
    pub fn phase_transition_check(&mut self, total_env_steps: u64) -> bool {
        if self.phase == Phase::Early && total_env_steps >= self.config.early_timesteps {
            self.phase = Phase::Late;
            self.checkpoint_perf *= self.config.reset_weight;
            true
        } else {
            false
        }
    }

    /// Runs the training deferred during the phase and zeroes the counter.
    pub fn drain_training(&mut self, mut train: impl FnMut() -> Result<()>) -> Result<u64> {
        let n = self.timesteps_since_training;
        for _ in 0..n {
            train()?;
        }
        self.timesteps_since_training = 0;
        self.total_trained += n;
        Ok(n)
    }
}

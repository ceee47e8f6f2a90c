//! Online and offline training loops, evaluation and metric output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Mode, Precision, RunConfig};
use crate::agent::{ActionMode, Agent, Policy, PolicySnapshot, TrainMetrics};
use crate::checkpoint::{CheckpointController, Decision};
use crate::envsuite::{make_env, read_dataset, run_episode};
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::replay::{LapParams, ReplayBuffer, Transition};
use crate::rng::{derive_seed, substream, uniform, Rng};

/// One line of the metric file, written at every evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub env_step: u64,
    pub wall_time: Option<f64>,
    pub eval_mean_return: f64,
    pub eval_returns: Vec<f64>,
    pub critic_loss: Option<f64>,
    pub encoder_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub mean_value_estimate: Option<f64>,
    pub q_min: f64,
    pub q_max: f64,
    pub train_steps: u64,
    pub checkpoint_perf: Option<f64>,
    pub assessments: Option<u64>,
    pub assessment_episodes_used: Option<u32>,
    pub assessment_value: Option<f64>,
    pub assessment_updated: Option<bool>,
}

/// What a finished run reports besides its metric file.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub env_steps: u64,
    pub train_steps: u64,
    /// Env step after which the agent started acting and training.
    pub warmup_end: Option<u64>,
    pub assessments: u64,
    pub checkpoint_updates: u64,
    pub records: Vec<MetricRecord>,
}

impl RunSummary {
    pub fn final_return(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval_mean_return)
    }

    /// Best evaluation at or before `env_step`.
    pub fn best_return_by(&self, env_step: u64) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.env_step <= env_step)
            .map(|r| r.eval_mean_return)
            .reduce(f64::max)
    }
}

/// Appends records to a JSON-lines file, flushing after each line.
pub struct MetricSink {
    out: BufWriter<File>,
    path: std::path::PathBuf,
    start: Option<Instant>,
}

impl MetricSink {
    pub fn create(path: &Path, wall_time: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricSink {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            start: wall_time.then(Instant::now),
        })
    }

    fn elapsed(&self) -> Option<f64> {
        self.start.map(|s| s.elapsed().as_secs_f64())
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::format(&self.path, e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Uniform random actions, seeded per instance.
pub struct RandomPolicy {
    action_dim: usize,
    rng: Mutex<Rng>,
}

impl RandomPolicy {
    pub fn new(action_dim: usize, seed: u64) -> Self {
        RandomPolicy {
            action_dim,
            rng: Mutex::new(substream(seed, "random_policy")),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&self, _state: &[f32]) -> Result<Vec<f32>> {
        let mut rng = self.rng.lock().expect("random policy lock");
        Ok((0..self.action_dim).map(|_| uniform(&mut rng, -1.0, 1.0) as f32).collect())
    }
}

/// Deterministic returns of `n_episodes` fresh episodes. Episode `j` starts
/// from the seed derived from `(root_seed, "eval", [env_step, j])`. Uses its
/// own env instance, so nothing outside the call changes.
pub fn evaluate(policy: &dyn Policy, env: &str, n_episodes: u32, root_seed: u64, env_step: u64) -> Result<Vec<f64>> {
    let mut env = make_env(env)?;
    (0..n_episodes)
        .map(|j| {
            let seed = derive_seed(root_seed, "eval", &[env_step, u64::from(j)]);
            run_episode(env.as_mut(), policy, seed, None, |_| {}).map(|s| s.episode_return)
        })
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// `(r - random) / (reference - random)`: 0 at the random policy, 1 at the
/// reference.
pub fn normalized_score(r: f64, random: f64, reference: f64) -> f64 {
    (r - random) / (reference - random)
}

#[derive(Default)]
struct TrainLog {
    steps: u64,
    critic_loss: Option<f64>,
    encoder_loss: Option<f64>,
    actor_loss: Option<f64>,
    mean_value_estimate: Option<f64>,
}

fn train_once<S: Scalar>(
    agent: &mut Agent<S>,
    buffer: &mut ReplayBuffer,
    log: &mut TrainLog,
    on_train: &mut dyn FnMut(&TrainMetrics),
) -> Result<()> {
    let m = agent.train_step(buffer)?;
    log.steps += 1;
    log.critic_loss = Some(m.critic_loss);
    log.encoder_loss = m.encoder_loss.or(log.encoder_loss);
    log.actor_loss = m.actor_loss.or(log.actor_loss);
    log.mean_value_estimate = Some(m.mean_value_estimate);
    on_train(&m);
    Ok(())
}

fn base_record<S: Scalar>(env_step: u64, returns: Vec<f64>, log: &TrainLog, agent: &Agent<S>) -> MetricRecord {
    let bounds = agent.bounds();
    MetricRecord {
        env_step,
        wall_time: None,
        eval_mean_return: mean(&returns),
        eval_returns: returns,
        critic_loss: log.critic_loss,
        encoder_loss: log.encoder_loss,
        actor_loss: log.actor_loss,
        mean_value_estimate: log.mean_value_estimate,
        q_min: bounds.q_min,
        q_max: bounds.q_max,
        train_steps: log.steps,
        checkpoint_perf: None,
        assessments: None,
        assessment_episodes_used: None,
        assessment_value: None,
        assessment_updated: None,
    }
}

fn no_hook(_: &TrainMetrics) {}

/// Runs the config's mode and precision, writing metrics to `config.out`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    run_observed(config, &mut no_hook)
}

/// [`run`] with a callback after every training step.
pub fn run_observed(config: &RunConfig, on_train: &mut dyn FnMut(&TrainMetrics)) -> Result<RunSummary> {
    config.validate()?;
    match (config.mode, config.precision) {
        (Mode::Online, Precision::F32) => run_online::<f32>(config, on_train),
        (Mode::Online, Precision::F64) => run_online::<f64>(config, on_train),
        (Mode::Offline, Precision::F32) => run_offline::<f32>(config, on_train),
        (Mode::Offline, Precision::F64) => run_offline::<f64>(config, on_train),
    }
}

/// Online training with policy checkpoints.
///
/// Actions are uniform random until the first episode ends past
/// `initial_random_steps`. After that every episode belongs to an assessment
/// phase: the policy is frozen, episodes are scored, and when the phase ends
/// the checkpoint may be replaced and the deferred training runs. With
/// checkpoints disabled the agent instead trains once per env step.
pub fn run_online<S: Scalar>(config: &RunConfig, on_train: &mut dyn FnMut(&TrainMetrics)) -> Result<RunSummary> {
    config.validate()?;
    let mut env = make_env(&config.env)?;
    let spec = env.spec().clone();
    let agent_cfg = config.agent_config();
    let initial_random = agent_cfg.initial_random_steps;
    let mut agent = Agent::<S>::new(agent_cfg, spec.state_dim, spec.action_dim, config.seed)?;
    let mut buffer = ReplayBuffer::new(spec.state_dim, spec.action_dim, config.lap_params())?;
    buffer.set_uniform(config.ablation.no_lap);
    let checkpoints = config.uses_checkpoints();
    let mut ctl: CheckpointController<PolicySnapshot<S>> = CheckpointController::new(config.checkpoint.clone())?;
    ctl.set_initial(agent.policy_snapshot());
    let mut sink = MetricSink::create(&config.out, config.wall_time)?;

    let mut log = TrainLog::default();
    let mut summary = RunSummary::default();
    let mut allow_train = false;
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(config.seed, "env.episode", &[episode]));
    let (mut ep_return, mut ep_len) = (0.0f64, 0u64);

    for t in 1..=config.total_steps {
        let action = if !allow_train {
            agent.random_action()
        } else if checkpoints && config.deterministic_assessment {
            agent.select_action(&state, ActionMode::Deterministic, t)?
        } else {
            agent.select_action(&state, ActionMode::Explore, t)?
        };
        let step = env.step(&action)?;
        buffer.insert(&Transition {
            state: std::mem::take(&mut state),
            action,
            reward: step.reward as f32,
            next_state: step.next_state.clone(),
            not_terminal: !step.terminal,
        })?;
        ep_return += step.reward;
        ep_len += 1;
        state = step.next_state;

        if allow_train && !checkpoints {
            train_once(&mut agent, &mut buffer, &mut log, on_train)?;
        }

        if step.terminal || step.truncated {
            if allow_train && checkpoints && ctl.record_episode(ep_return, ep_len)? == Decision::AssessmentDone {
                if ctl.finalize_assessment(|| agent.policy_snapshot())? {
                    summary.checkpoint_updates += 1;
                }
                ctl.drain_training(|| train_once(&mut agent, &mut buffer, &mut log, on_train))?;
                ctl.phase_transition_check(t);
            }
            if !allow_train && t >= initial_random {
                allow_train = true;
                summary.warmup_end = Some(t);
            }
            episode += 1;
            state = env.reset(derive_seed(config.seed, "env.episode", &[episode]));
            ep_return = 0.0;
            ep_len = 0;
        }

        if t % config.eval_frequency == 0 {
            let use_checkpoint = checkpoints && !config.ablation.current_policy_eval;
            let current;
            let policy: &dyn Policy = match ctl.checkpoint() {
                Some(c) if use_checkpoint => c,
                _ => {
                    current = agent.policy_snapshot();
                    &current
                }
            };
            let returns = evaluate(policy, &config.env, config.eval_episodes, config.seed, t)?;
            let mut rec = base_record(t, returns, &log, &agent);
            rec.wall_time = sink.elapsed();
            if checkpoints {
                let perf = ctl.checkpoint_perf();
                let outcome = ctl.last_outcome();
                rec.checkpoint_perf = perf.is_finite().then_some(perf);
                rec.assessments = Some(ctl.assessments());
                rec.assessment_episodes_used = outcome.map(|o| o.episodes_used);
                rec.assessment_value = outcome.map(|o| o.criterion_value);
                rec.assessment_updated = outcome.map(|o| o.updated);
            }
            sink.write(&rec)?;
            summary.records.push(rec);
        }
    }

    // Train on whatever the last, unfinished phase collected.
    if allow_train && checkpoints {
        let pending = ctl.timesteps_since_training() + ep_len;
        for _ in 0..pending {
            train_once(&mut agent, &mut buffer, &mut log, on_train)?;
        }
    }
    if let Some(path) = &config.snapshot {
        let keep = checkpoints && !config.ablation.current_policy_eval;
        agent.save(path, ctl.checkpoint().filter(|_| keep))?;
    }
    summary.env_steps = config.total_steps;
    summary.train_steps = log.steps;
    summary.assessments = ctl.assessments();
    Ok(summary)
}

/// Offline training on a fixed dataset. Nothing is collected and no
/// checkpoints are kept; the current policy is evaluated on the live env.
pub fn run_offline<S: Scalar>(config: &RunConfig, on_train: &mut dyn FnMut(&TrainMetrics)) -> Result<RunSummary> {
    config.validate()?;
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::config("offline mode needs a dataset path"))?;
    let data = read_dataset(path)?;
    let env = make_env(&config.env)?;
    let spec = env.spec();
    let h = &data.header;
    if h.env != spec.name || h.state_dim != spec.state_dim || h.action_dim != spec.action_dim {
        return Err(Error::config(format!(
            "dataset is for {} ({}x{}), run is for {} ({}x{})",
            h.env, h.state_dim, h.action_dim, spec.name, spec.state_dim, spec.action_dim
        )));
    }
    if data.transitions.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    let lap = LapParams {
        capacity: data.transitions.len(),
        ..config.lap_params()
    };
    let mut buffer = ReplayBuffer::new(spec.state_dim, spec.action_dim, lap)?;
    buffer.set_uniform(config.ablation.no_lap);
    for t in &data.transitions {
        buffer.insert(t)?;
    }
    let mut agent = Agent::<S>::new(config.agent_config(), spec.state_dim, spec.action_dim, config.seed)?;
    let mut sink = MetricSink::create(&config.out, config.wall_time)?;
    let mut log = TrainLog::default();
    let mut summary = RunSummary::default();
    for t in 1..=config.total_steps {
        train_once(&mut agent, &mut buffer, &mut log, on_train)?;
        if t % config.eval_frequency == 0 {
            let policy = agent.policy_snapshot();
            let returns = evaluate(&policy, &config.env, config.eval_episodes, config.seed, t)?;
            let mut rec = base_record(t, returns, &log, &agent);
            rec.wall_time = sink.elapsed();
            sink.write(&rec)?;
            summary.records.push(rec);
        }
    }
    if let Some(path) = &config.snapshot {
        agent.save(path, None)?;
    }
    summary.train_steps = log.steps;
    Ok(summary)
}

/// Rebuilds the agent described by `config` from a snapshot file and returns
/// its checkpoint policy, or the current policy when no checkpoint was saved.
pub fn load_policy(config: &RunConfig, path: &Path) -> Result<Box<dyn Policy + Send + Sync>> {
    fn load<S: Scalar>(config: &RunConfig, path: &Path) -> Result<Box<dyn Policy + Send + Sync>> {
        let env = make_env(&config.env)?;
        let spec = env.spec();
        let mut agent = Agent::<S>::new(config.agent_config(), spec.state_dim, spec.action_dim, config.seed)?;
        let checkpoint = agent.load(path)?;
        Ok(Box::new(checkpoint.unwrap_or_else(|| agent.policy_snapshot())))
    }
    match config.precision {
        Precision::F32 => load::<f32>(config, path),
        Precision::F64 => load::<f64>(config, path),
    }
}

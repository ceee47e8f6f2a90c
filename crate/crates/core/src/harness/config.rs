//! Run configuration.
//!
//! A run is described by flat `key = value` pairs. A named profile supplies
//! the defaults, then the config file, then command-line overrides. Unknown
//! keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{AgentConfig, Normalization, PolicyInputs, TargetUpdate, ValueInputs};
use crate::checkpoint::AssessConfig;
use crate::error::{Error, Result};
use crate::replay::LapParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Online,
    Offline,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Mode::Online),
            "offline" => Ok(Mode::Offline),
            other => Err(Error::config(format!("unknown mode `{other}` (online, offline)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Online => "online",
            Mode::Offline => "offline",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::config(format!("unknown precision `{other}` (f32, f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Component switches layered over the agent hyperparameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablations {
    pub no_sale: bool,
    pub no_lap: bool,
    pub no_checkpoints: bool,
    pub no_clipping: bool,
    /// Actor reads `Q_1` only and the value network uses ReLU.
    pub td3_reverts: bool,
    /// Evaluate the current policy instead of the checkpoint.
    pub current_policy_eval: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub mode: Mode,
    pub profile: String,
    pub precision: Precision,
    pub total_steps: u64,
    pub eval_frequency: u64,
    pub eval_episodes: u32,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    /// Where to write the final agent snapshot, if anywhere.
    pub snapshot: Option<PathBuf>,
    pub agent: AgentConfig,
    /// `None` picks 0 online and 0.1 offline.
    pub bc_weight: Option<f64>,
    pub lap: LapParams,
    pub checkpoint: AssessConfig,
    /// Assessment episodes act without exploration noise.
    pub deterministic_assessment: bool,
    pub ablation: Ablations,
    pub wall_time: bool,
}

/// Named bundle of defaults applied before any file or override.
pub struct Profile {
    pub name: &'static str,
    pub summary: &'static str,
    pub settings: &'static [(&'static str, &'static str)],
}

pub const PROFILES: &[Profile] = &[
    Profile {
        name: "paper",
        summary: "full-scale hyperparameters",
        settings: &[
            ("total_steps", "5000000"),
            ("eval_frequency", "5000"),
            ("eval_episodes", "10"),
            ("lap.capacity", "1000000"),
            ("agent.initial_random_steps", "25000"),
            ("agent.batch_size", "256"),
            ("agent.hidden_dim", "256"),
            ("agent.zs_dim", "256"),
            ("checkpoint.early_timesteps", "750000"),
            ("ablation.normalization", "avg_l1"),
        ],
    },
    Profile {
        name: "desk",
        summary: "small networks and short runs for a laptop CPU",
        settings: &[
            ("total_steps", "50000"),
            ("eval_frequency", "2500"),
            ("eval_episodes", "10"),
            ("lap.capacity", "50000"),
            ("agent.initial_random_steps", "1000"),
            ("agent.batch_size", "64"),
            ("agent.hidden_dim", "64"),
            ("agent.zs_dim", "16"),
            ("checkpoint.early_timesteps", "10000"),
            ("ablation.normalization", "no_phi"),
        ],
    },
];

pub fn profile(name: &str) -> Result<&'static Profile> {
    PROFILES.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PROFILES.iter().map(|p| p.name).collect();
        Error::config(format!("unknown profile `{name}` (known: {})", known.join(", ")))
    })
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// Splits `key = value` text into pairs. Blank lines and `#` comments are
/// skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses a single `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            env: "line_walk".to_string(),
            seed: 0,
            mode: Mode::Online,
            profile: "desk".to_string(),
            precision: Precision::F32,
            total_steps: 0,
            eval_frequency: 0,
            eval_episodes: 0,
            out: PathBuf::from("metrics.jsonl"),
            dataset: None,
            snapshot: None,
            agent: AgentConfig::default(),
            bc_weight: None,
            lap: LapParams::default(),
            checkpoint: AssessConfig::default(),
            deterministic_assessment: true,
            ablation: Ablations::default(),
            wall_time: false,
        };
        cfg.apply_profile("desk").expect("built-in profile");
        cfg
    }
}

impl RunConfig {
    /// Config for a named profile with nothing else changed.
    pub fn with_profile(name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_profile(name)?;
        Ok(cfg)
    }

    /// Builds a config from file pairs then override pairs. A `profile` key
    /// in either source selects the base profile; the last one wins.
    pub fn from_pairs(file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self> {
        let name = file
            .iter()
            .chain(overrides)
            .filter(|(k, _)| k == "profile")
            .map(|(_, v)| v.as_str())
            .last()
            .unwrap_or("desk");
        let mut cfg = RunConfig::with_profile(name)?;
        for (k, v) in file.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        RunConfig::from_pairs(&parse_pairs(text)?, overrides)
    }

    fn apply_profile(&mut self, name: &str) -> Result<()> {
        let p = profile(name)?;
        for (k, v) in p.settings {
            self.set(k, v)?;
        }
        self.profile = p.name.to_string();
        Ok(())
    }

    /// Sets one key. The `profile` key is only recorded here; use
    /// [`RunConfig::from_pairs`] to apply it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.agent;
        match key {
            "env" => self.env = value.to_string(),
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "profile" => {
                profile(value)?;
                self.profile = value.to_string();
            }
            "precision" => self.precision = parse(key, value)?,
            "total_steps" => self.total_steps = parse_count(key, value)?,
            "eval_frequency" => self.eval_frequency = parse_count(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "snapshot" => self.snapshot = (!value.is_empty()).then(|| PathBuf::from(value)),
            "metrics.wall_time" => self.wall_time = parse_bool(key, value)?,

            "agent.discount" => a.discount = parse(key, value)?,
            "agent.target_policy_noise" => a.target_policy_noise = parse(key, value)?,
            "agent.noise_clip" => a.noise_clip = parse(key, value)?,
            "agent.policy_freq" => a.policy_freq = parse(key, value)?,
            "agent.target_update_freq" => a.target_update_freq = parse(key, value)?,
            "agent.tau" => a.tau = parse(key, value)?,
            "agent.exploration_noise" => a.exploration_noise = parse(key, value)?,
            "agent.initial_random_steps" => a.initial_random_steps = parse_count(key, value)?,
            "agent.bc_weight" => {
                self.bc_weight = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "agent.batch_size" => a.batch_size = parse(key, value)?,
            "agent.learning_rate" => a.adam.learning_rate = parse(key, value)?,
            "agent.adam_beta1" => a.adam.beta1 = parse(key, value)?,
            "agent.adam_beta2" => a.adam.beta2 = parse(key, value)?,
            "agent.adam_epsilon" => a.adam.epsilon = parse(key, value)?,
            "agent.hidden_dim" => a.hidden_dim = parse(key, value)?,
            "agent.zs_dim" => a.zs_dim = parse(key, value)?,
            "agent.huber_threshold" => a.huber_threshold = parse(key, value)?,

            "lap.alpha" => self.lap.alpha = parse(key, value)?,
            "lap.min_priority" => self.lap.min_priority = parse(key, value)?,
            "lap.capacity" => self.lap.capacity = parse_count(key, value)? as usize,

            "checkpoint.criterion" => self.checkpoint.criterion = value.to_string(),
            "checkpoint.early_episodes" => self.checkpoint.early_episodes = parse(key, value)?,
            "checkpoint.late_episodes" => self.checkpoint.late_episodes = parse(key, value)?,
            "checkpoint.early_timesteps" => self.checkpoint.early_timesteps = parse_count(key, value)?,
            "checkpoint.reset_weight" => self.checkpoint.reset_weight = parse(key, value)?,
            "checkpoint.early_termination" => self.checkpoint.early_termination = parse_bool(key, value)?,
            "checkpoint.deterministic_assessment" => self.deterministic_assessment = parse_bool(key, value)?,

            "ablation.no_sale" => self.ablation.no_sale = parse_bool(key, value)?,
            "ablation.no_lap" => self.ablation.no_lap = parse_bool(key, value)?,
            "ablation.no_checkpoints" => self.ablation.no_checkpoints = parse_bool(key, value)?,
            "ablation.no_clipping" => self.ablation.no_clipping = parse_bool(key, value)?,
            "ablation.td3_reverts" => self.ablation.td3_reverts = parse_bool(key, value)?,
            "ablation.current_policy_eval" => self.ablation.current_policy_eval = parse_bool(key, value)?,
            "ablation.value_inputs" => a.value_inputs = value.parse::<ValueInputs>()?,
            "ablation.policy_inputs" => a.policy_inputs = value.parse::<PolicyInputs>()?,
            "ablation.fixed_embeddings" => a.fixed_embeddings = parse_bool(key, value)?,
            "ablation.normalization" => a.normalization = value.parse::<Normalization>()?,
            "ablation.encoder_objective" => a.encoder_objective = value.to_string(),
            "ablation.end_to_end" => {
                a.end_to_end = match value {
                    "off" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "ablation.target_update" => a.target_update = value.parse::<TargetUpdate>()?,
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order. Feeding these
    /// pairs back through [`RunConfig::from_pairs`] rebuilds the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.agent;
        let ab = &self.ablation;
        let c = &self.checkpoint;
        vec![
            ("profile", self.profile.clone()),
            ("env", self.env.clone()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("precision", self.precision.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("eval_frequency", self.eval_frequency.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("out", self.out.display().to_string()),
            ("dataset", self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("snapshot", self.snapshot.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("metrics.wall_time", self.wall_time.to_string()),
            ("agent.discount", a.discount.to_string()),
            ("agent.target_policy_noise", a.target_policy_noise.to_string()),
            ("agent.noise_clip", a.noise_clip.to_string()),
            ("agent.policy_freq", a.policy_freq.to_string()),
            ("agent.target_update_freq", a.target_update_freq.to_string()),
            ("agent.tau", a.tau.to_string()),
            ("agent.exploration_noise", a.exploration_noise.to_string()),
            ("agent.initial_random_steps", a.initial_random_steps.to_string()),
            ("agent.bc_weight", self.bc_weight.map_or("auto".to_string(), |w| w.to_string())),
            ("agent.batch_size", a.batch_size.to_string()),
            ("agent.learning_rate", a.adam.learning_rate.to_string()),
            ("agent.adam_beta1", a.adam.beta1.to_string()),
            ("agent.adam_beta2", a.adam.beta2.to_string()),
            ("agent.adam_epsilon", a.adam.epsilon.to_string()),
            ("agent.hidden_dim", a.hidden_dim.to_string()),
            ("agent.zs_dim", a.zs_dim.to_string()),
            ("agent.huber_threshold", a.huber_threshold.to_string()),
            ("lap.alpha", self.lap.alpha.to_string()),
            ("lap.min_priority", self.lap.min_priority.to_string()),
            ("lap.capacity", self.lap.capacity.to_string()),
            ("checkpoint.criterion", c.criterion.clone()),
            ("checkpoint.early_episodes", c.early_episodes.to_string()),
            ("checkpoint.late_episodes", c.late_episodes.to_string()),
            ("checkpoint.early_timesteps", c.early_timesteps.to_string()),
            ("checkpoint.reset_weight", c.reset_weight.to_string()),
            ("checkpoint.early_termination", c.early_termination.to_string()),
            ("checkpoint.deterministic_assessment", self.deterministic_assessment.to_string()),
            ("ablation.no_sale", ab.no_sale.to_string()),
            ("ablation.no_lap", ab.no_lap.to_string()),
            ("ablation.no_checkpoints", ab.no_checkpoints.to_string()),
            ("ablation.no_clipping", ab.no_clipping.to_string()),
            ("ablation.td3_reverts", ab.td3_reverts.to_string()),
            ("ablation.current_policy_eval", ab.current_policy_eval.to_string()),
            ("ablation.value_inputs", a.value_inputs.to_string()),
            ("ablation.policy_inputs", a.policy_inputs.to_string()),
            ("ablation.fixed_embeddings", a.fixed_embeddings.to_string()),
            ("ablation.normalization", a.normalization.to_string()),
            ("ablation.encoder_objective", a.encoder_objective.clone()),
            ("ablation.end_to_end", a.end_to_end.map_or("off".to_string(), |b| b.to_string())),
            ("ablation.target_update", a.target_update.to_string()),
        ]
    }

    /// Renders the config in the file format.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn bc_weight(&self) -> f64 {
        self.bc_weight.unwrap_or(match self.mode {
            Mode::Online => 0.0,
            Mode::Offline => 0.1,
        })
    }

    /// Agent hyperparameters with the ablation switches folded in.
    pub fn agent_config(&self) -> AgentConfig {
        let mut a = self.agent.clone();
        a.bc_weight = self.bc_weight();
        if self.ablation.no_sale {
            a.sale = false;
            a.end_to_end = None;
        }
        if self.ablation.no_clipping {
            a.clipping = false;
        }
        if self.ablation.no_lap {
            a.huber_loss = false;
        }
        if self.ablation.td3_reverts {
            a.single_q_actor = true;
            a.relu_value = true;
        }
        a
    }

    pub fn lap_params(&self) -> LapParams {
        self.lap.clone()
    }

    pub fn uses_checkpoints(&self) -> bool {
        self.mode == Mode::Online && !self.ablation.no_checkpoints
    }

    pub fn validate(&self) -> Result<()> {
        crate::envsuite::make_env(&self.env)?;
        self.agent_config().validate()?;
        self.lap.validate()?;
        self.checkpoint.validate()?;
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if self.eval_frequency == 0 || self.eval_episodes == 0 {
            return Err(Error::config("eval_frequency and eval_episodes must be positive"));
        }
        if self.mode == Mode::Offline && self.dataset.is_none() {
            return Err(Error::config("offline mode needs a dataset path"));
        }
        Ok(())
    }
}

/// Integer counts also accept scientific notation such as `5e4`.
fn parse_count(key: &str, value: &str) -> Result<u64> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = parse(key, value)?;
    if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(Error::config(format!("`{key}` needs a non-negative integer, got `{value}`")))
    }
}

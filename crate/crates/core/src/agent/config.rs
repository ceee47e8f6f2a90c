use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Which components feed the value function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueInputs {
    pub zsa: bool,
    pub zs: bool,
    pub state_action: bool,
}

impl Default for ValueInputs {
    fn default() -> Self {
        ValueInputs {
            zsa: true,
            zs: true,
            state_action: true,
        }
    }
}

/// Which components feed the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyInputs {
    pub zs: bool,
    pub state: bool,
}

impl Default for PolicyInputs {
    fn default() -> Self {
        PolicyInputs { zs: true, state: true }
    }
}

fn parse_set<'a>(s: &'a str, allowed: &[&str], what: &str) -> Result<Vec<&'a str>> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::config(format!("{what} must name at least one input")));
    }
    if let Some(bad) = items.iter().find(|p| !allowed.contains(p)) {
        return Err(Error::config(format!(
            "unknown {what} component `{bad}` (allowed: {})",
            allowed.join(",")
        )));
    }
    Ok(items)
}

impl FromStr for ValueInputs {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let items = parse_set(s, &["zsa", "zs", "sa"], "value input")?;
        Ok(ValueInputs {
            zsa: items.contains(&"zsa"),
            zs: items.contains(&"zs"),
            state_action: items.contains(&"sa"),
        })
    }
}

impl fmt::Display for ValueInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.zsa {
            parts.push("zsa");
        }
        if self.zs {
            parts.push("zs");
        }
        if self.state_action {
            parts.push("sa");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for PolicyInputs {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let items = parse_set(s, &["zs", "s"], "policy input")?;
        Ok(PolicyInputs {
            zs: items.contains(&"zs"),
            state: items.contains(&"s"),
        })
    }
}

impl fmt::Display for PolicyInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.zs {
            parts.push("zs");
        }
        if self.state {
            parts.push("s");
        }
        f.write_str(&parts.join(","))
    }
}

/// Where AvgL1Norm is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Normalization {
    /// On `zs` and on both φ input layers.
    #[default]
    AvgL1,
    /// On `zs` only.
    NoPhi,
    /// Nowhere.
    None,
    /// Default placement plus the output of `g`.
    WithZsa,
}

impl Normalization {
    pub fn on_zs(self) -> bool {
        !matches!(self, Normalization::None)
    }
    pub fn on_phi(self) -> bool {
        matches!(self, Normalization::AvgL1 | Normalization::WithZsa)
    }
    pub fn on_zsa(self) -> bool {
        matches!(self, Normalization::WithZsa)
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "avg_l1" => Normalization::AvgL1,
            "no_phi" => Normalization::NoPhi,
            "none" => Normalization::None,
            "zsa" => Normalization::WithZsa,
            other => {
                return Err(Error::config(format!(
                    "unknown normalization `{other}` (avg_l1, no_phi, none, zsa)"
                )))
            }
        })
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::AvgL1 => "avg_l1",
            Normalization::NoPhi => "no_phi",
            Normalization::None => "none",
            Normalization::WithZsa => "zsa",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TargetUpdate {
    /// Hard copy every `target_update_freq` training steps.
    #[default]
    Periodic,
    /// Polyak averaging with weight `tau` on every policy update.
    Polyak,
}

impl FromStr for TargetUpdate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(TargetUpdate::Periodic),
            "polyak" => Ok(TargetUpdate::Polyak),
            other => Err(Error::config(format!("unknown target update `{other}` (periodic, polyak)"))),
        }
    }
}

impl fmt::Display for TargetUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetUpdate::Periodic => "periodic",
            TargetUpdate::Polyak => "polyak",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub discount: f64,
    pub target_policy_noise: f64,
    pub noise_clip: f64,
    pub policy_freq: u64,
    pub target_update_freq: u64,
    pub target_update: TargetUpdate,
    pub tau: f64,
    pub exploration_noise: f64,
    pub initial_random_steps: u64,
    pub bc_weight: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub hidden_dim: usize,
    pub zs_dim: usize,
    /// False reverts the value function and policy to plain `Q(s,a)`, `π(s)`
    /// networks and skips encoder training.
    pub sale: bool,
    pub value_inputs: ValueInputs,
    pub policy_inputs: PolicyInputs,
    pub fixed_embeddings: bool,
    pub clipping: bool,
    pub normalization: Normalization,
    pub encoder_objective: String,
    /// Weight of the dynamics loss when encoders are trained through the
    /// value loss; `None` keeps them decoupled.
    pub end_to_end: Option<f64>,
    pub single_q_actor: bool,
    pub relu_value: bool,
    /// Huber critic loss (paired with LAP); false falls back to MSE.
    pub huber_loss: bool,
    pub huber_threshold: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            discount: 0.99,
            target_policy_noise: 0.2,
            noise_clip: 0.5,
            policy_freq: 2,
            target_update_freq: 250,
            target_update: TargetUpdate::Periodic,
            tau: 0.005,
            exploration_noise: 0.1,
            initial_random_steps: 25_000,
            bc_weight: 0.0,
            batch_size: 256,
            adam: AdamConfig::default(),
            hidden_dim: 256,
            zs_dim: 256,
            sale: true,
            value_inputs: ValueInputs::default(),
            policy_inputs: PolicyInputs::default(),
            fixed_embeddings: true,
            clipping: true,
            normalization: Normalization::AvgL1,
            encoder_objective: "next_embedding".to_string(),
            end_to_end: None,
            single_q_actor: false,
            relu_value: false,
            huber_loss: true,
            huber_threshold: crate::nn::HUBER_THRESHOLD,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config(format!("discount must lie in [0, 1], got {}", self.discount)));
        }
        if self.policy_freq == 0 || self.target_update_freq == 0 {
            return Err(Error::config("update frequencies must be positive"));
        }
        if !(self.bc_weight >= 0.0 && self.bc_weight.is_finite()) {
            return Err(Error::config(format!("bc_weight must be >= 0, got {}", self.bc_weight)));
        }
        if self.target_policy_noise < 0.0 || self.noise_clip < 0.0 || self.exploration_noise < 0.0 {
            return Err(Error::config("noise scales must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("tau must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.zs_dim == 0 {
            return Err(Error::config("batch_size, hidden_dim and zs_dim must be positive"));
        }
        positive(self.adam.learning_rate, "learning rate")?;
        positive(self.huber_threshold, "huber threshold")?;
        if let Some(beta) = self.end_to_end {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::config(format!("end-to-end weight must be >= 0, got {beta}")));
            }
            if !self.sale {
                return Err(Error::config("end-to-end encoder training needs SALE enabled"));
            }
        }
        crate::sale::encoder_objective::<f32>(&self.encoder_objective)?;
        Ok(())
    }

    /// Effective value inputs after the SALE switch.
    pub fn effective_value_inputs(&self) -> ValueInputs {
        if self.sale {
            self.value_inputs
        } else {
            ValueInputs {
                zsa: false,
                zs: false,
                state_action: true,
            }
        }
    }

    pub fn effective_policy_inputs(&self) -> PolicyInputs {
        if self.sale {
            self.policy_inputs
        } else {
            PolicyInputs { zs: false, state: true }
        }
    }

    /// True when any network consumes embeddings, i.e. the encoder matters.
    pub fn uses_embeddings(&self) -> bool {
        let v = self.effective_value_inputs();
        let p = self.effective_policy_inputs();
        v.zsa || v.zs || p.zs
    }
}

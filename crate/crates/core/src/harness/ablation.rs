//! Named ablation presets and the grids that group them.

use super::config::RunConfig;
use crate::error::{Error, Result};

/// A named modification of a run config.
pub trait AblationPreset: Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn apply(&self, config: &mut RunConfig) -> Result<()>;
}

/// Preset given as config keys, optionally layered over another preset.
pub struct KeyPreset {
    pub name: &'static str,
    pub summary: &'static str,
    pub base: Option<&'static str>,
    pub settings: &'static [(&'static str, &'static str)],
}

impl AblationPreset for KeyPreset {
    fn name(&self) -> &'static str {
        self.name
    }

    fn summary(&self) -> &'static str {
        self.summary
    }

    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(base) = self.base {
            preset(base)?.apply(config)?;
        }
        for (k, v) in self.settings {
            config.set(k, v)?;
        }
        Ok(())
    }
}

const fn keys(
    name: &'static str,
    summary: &'static str,
    settings: &'static [(&'static str, &'static str)],
) -> KeyPreset {
    KeyPreset {
        name,
        summary,
        base: None,
        settings,
    }
}

const fn over(
    base: &'static str,
    name: &'static str,
    summary: &'static str,
    settings: &'static [(&'static str, &'static str)],
) -> KeyPreset {
    KeyPreset {
        name,
        summary,
        base: Some(base),
        settings,
    }
}

const TD3_KEYS: &[(&str, &str)] = &[
    ("ablation.no_sale", "true"),
    ("ablation.no_lap", "true"),
    ("ablation.no_checkpoints", "true"),
    ("ablation.no_clipping", "true"),
    ("ablation.td3_reverts", "true"),
    ("ablation.target_update", "polyak"),
];

static PRESETS: &[&dyn AblationPreset] = &[
    &keys("td7", "full agent", &[]),
    &keys("td3", "every addition removed, Polyak targets", TD3_KEYS),
    &keys(
        "our_td3",
        "TD3 with both-Q actor, ELU values and periodic targets",
        &[
            ("ablation.no_sale", "true"),
            ("ablation.no_lap", "true"),
            ("ablation.no_checkpoints", "true"),
            ("ablation.no_clipping", "true"),
        ],
    ),
    &keys("no_sale", "plain Q(s,a) and pi(s), encoder unused", &[("ablation.no_sale", "true")]),
    &keys("no_checkpoints", "train every step, evaluate the current policy", &[("ablation.no_checkpoints", "true")]),
    &keys("no_lap", "uniform replay with MSE", &[("ablation.no_lap", "true")]),
    &keys(
        "no_sale_with_encoder",
        "encoder trained only through the value loss, policy reads s",
        &[("ablation.end_to_end", "0"), ("ablation.policy_inputs", "s")],
    ),
    &over(
        "td3",
        "td3_encoder",
        "TD3 plus an encoder trained through the value loss",
        &[
            ("ablation.no_sale", "false"),
            ("ablation.end_to_end", "0"),
            ("ablation.policy_inputs", "s"),
        ],
    ),
    &keys("current_policy", "train with checkpoints, evaluate the current policy", &[("ablation.current_policy_eval", "true")]),
    &over("td3", "td3_checkpoints", "TD3 plus policy checkpoints", &[("ablation.no_checkpoints", "false")]),
    &over("td3", "td3_lap", "TD3 plus LAP", &[("ablation.no_lap", "false")]),
    &keys("no_clipping", "unclipped bootstrap values", &[("ablation.no_clipping", "true")]),
    &over("td3", "td3_clipping", "TD3 plus value clipping", &[("ablation.no_clipping", "false")]),
    &keys("no_normalization", "no AvgL1Norm anywhere", &[("ablation.normalization", "none")]),
    &keys("no_fixed_encoder", "networks read the current encoder", &[("ablation.fixed_embeddings", "false")]),
    &keys("no_implementation", "actor reads Q1 only, ReLU value network", &[("ablation.td3_reverts", "true")]),
    &keys("target_next_state", "encoder predicts s'", &[("ablation.encoder_objective", "next_state")]),
    &keys("target_polyak", "encoder predicts a slow target embedding of s'", &[("ablation.encoder_objective", "polyak_target")]),
    &keys("target_reward", "encoder also predicts r", &[("ablation.encoder_objective", "reward")]),
    &keys("target_next_state_action", "encoder predicts z(s',a')", &[("ablation.encoder_objective", "next_state_action")]),
    &keys("target_cosine", "cosine embedding loss", &[("ablation.encoder_objective", "cosine")]),
    &keys("q_no_zsa", "value reads zs, s, a", &[("ablation.value_inputs", "zs,sa")]),
    &keys("q_no_zs", "value reads zsa, s, a", &[("ablation.value_inputs", "zsa,sa")]),
    &keys("q_no_sa", "value reads zsa, zs", &[("ablation.value_inputs", "zsa,zs")]),
    &keys("q_zsa_only", "value reads zsa", &[("ablation.value_inputs", "zsa")]),
    &keys("q_sa_only", "value reads s, a", &[("ablation.value_inputs", "sa")]),
    &keys("pi_s_only", "policy reads s", &[("ablation.policy_inputs", "s")]),
    &keys("pi_zs_only", "policy reads zs", &[("ablation.policy_inputs", "zs")]),
    &keys("norm_full", "AvgL1Norm on zs and on the value input layer", &[("ablation.normalization", "avg_l1")]),
    &keys("norm_no_phi", "AvgL1Norm on zs only", &[("ablation.normalization", "no_phi")]),
    &keys("norm_zsa", "AvgL1Norm also on zsa", &[("ablation.normalization", "zsa")]),
    &keys("end_to_end_0.1", "encoder also trained through the value loss, dynamics weight 0.1", &[("ablation.end_to_end", "0.1")]),
    &keys("end_to_end_1", "encoder also trained through the value loss, dynamics weight 1", &[("ablation.end_to_end", "1")]),
    &keys("end_to_end_10", "encoder also trained through the value loss, dynamics weight 10", &[("ablation.end_to_end", "10")]),
];

pub fn presets() -> &'static [&'static dyn AblationPreset] {
    PRESETS
}

pub fn preset(name: &str) -> Result<&'static dyn AblationPreset> {
    PRESETS.iter().copied().find(|p| p.name() == name).ok_or_else(|| {
        Error::config(format!(
            "unknown ablation `{name}` (see `td7 ablate --list`)"
        ))
    })
}

pub const GRIDS: &[(&str, &[&str])] = &[
    ("main", &["td7", "td3", "no_sale", "no_checkpoints", "no_lap"]),
    (
        "components",
        &[
            "td7",
            "no_sale_with_encoder",
            "td3_encoder",
            "current_policy",
            "td3_checkpoints",
            "td3_lap",
            "no_clipping",
            "td3_clipping",
            "no_normalization",
            "no_fixed_encoder",
            "no_implementation",
            "our_td3",
        ],
    ),
    (
        "targets",
        &["td7", "target_next_state", "target_polyak", "target_reward", "target_next_state_action", "target_cosine"],
    ),
    (
        "inputs",
        &["td7", "q_no_zsa", "q_no_zs", "q_no_sa", "q_zsa_only", "q_sa_only", "pi_s_only", "pi_zs_only", "no_fixed_encoder"],
    ),
    ("normalization", &["td7", "norm_full", "norm_no_phi", "no_normalization", "norm_zsa"]),
    ("end_to_end", &["td7", "end_to_end_0.1", "end_to_end_1", "end_to_end_10"]),
];

/// Preset names for a grid. A single preset name is a grid of one.
pub fn grid(name: &str) -> Result<Vec<&'static str>> {
    if let Some((_, names)) = GRIDS.iter().find(|(g, _)| *g == name) {
        return Ok(names.to_vec());
    }
    Ok(vec![preset(name)?.name()])
}

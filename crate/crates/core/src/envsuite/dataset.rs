//! Offline datasets: a JSON header line followed by packed little-endian
//! records `state f32×S | action f32×A | reward f32 | next_state f32×S |
//! not_terminal u8`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_episode, Env};
use crate::agent::Policy;
use crate::error::{Error, Result};
use crate::replay::Transition;
use crate::rng::{derive_seed, substream};

pub const DATASET_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: u32,
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: u32,
    pub reward_range: (f64, f64),
    pub policy: String,
    pub noise_std: f64,
    pub seed: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
}

impl DatasetHeader {
    fn record_bytes(&self) -> usize {
        4 * (2 * self.state_dim + self.action_dim + 1) + 1
    }
}

/// Rolls `policy` (plus clipped Gaussian noise) until `n_transitions` have
/// been recorded. Episode `k` starts from `derive_seed(seed, "dataset.episode", [k])`.
pub fn generate_dataset(
    env: &mut dyn Env,
    policy: &dyn Policy,
    policy_tag: &str,
    noise_std: f64,
    n_transitions: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_transitions == 0 {
        return Err(Error::config("dataset needs at least one transition"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let spec = env.spec().clone();
    let mut noise_rng = substream(seed, "dataset.noise");
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut episode = 0u64;
    while transitions.len() < n_transitions {
        let noise = (noise_std > 0.0).then_some((noise_std, &mut noise_rng));
        run_episode(env, policy, derive_seed(seed, "dataset.episode", &[episode]), noise, |t| {
            if transitions.len() < n_transitions {
                transitions.push(t);
            }
        })?;
        episode += 1;
    }
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT,
            env: spec.name.to_string(),
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            max_episode_steps: spec.max_episode_steps,
            reward_range: spec.reward_range,
            policy: policy_tag.to_string(),
            noise_std,
            seed,
            count: transitions.len(),
        },
        transitions,
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let h = &dataset.header;
    if h.count != dataset.transitions.len() {
        return Err(Error::usage("dataset header count disagrees with records"));
    }
    let mut buf = serde_json::to_vec(h).map_err(|e| Error::format(path, e.to_string()))?;
    buf.push(b'\n');
    buf.reserve(h.count * h.record_bytes());
    for t in &dataset.transitions {
        t.validate(h.state_dim, h.action_dim)?;
        let floats = t.state.iter().chain(&t.action).chain(std::iter::once(&t.reward)).chain(&t.next_state);
        for v in floats {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(u8::from(t.not_terminal));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::format(path, format!("unsupported format {}", header.format)));
    }
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let width = header.record_bytes();
    if body.len() != header.count * width {
        return Err(Error::format(
            path,
            format!("expected {} records of {width} bytes, found {} bytes", header.count, body.len()),
        ));
    }
    let (sd, ad) = (header.state_dim, header.action_dim);
    let mut transitions = Vec::with_capacity(header.count);
    for rec in body.chunks_exact(width) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let t = Transition {
            state: (0..sd).map(f).collect(),
            action: (sd..sd + ad).map(f).collect(),
            reward: f(sd + ad),
            next_state: (sd + ad + 1..2 * sd + ad + 1).map(f).collect(),
            not_terminal: match rec[width - 1] {
                0 => false,
                1 => true,
                b => return Err(Error::format(path, format!("bad not_terminal byte {b}"))),
            },
        };
        t.validate(sd, ad).map_err(|e| Error::format(path, e.to_string()))?;
        transitions.push(t);
    }
    Ok(Dataset { header, transitions })
}

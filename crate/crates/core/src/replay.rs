//! Loss-adjusted prioritized replay.
//!
//! A FIFO ring of transitions whose sampling probability is proportional to a
//! stored priority `max(|δ|^α, min_priority)`. Priorities live in a flat
//! binary tree holding subtree sums (for proportional sampling) and subtree
//! maxima (so new transitions can take the current maximum in O(1)).

use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::nn::Scalar;
use crate::rng::Rng;

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_state: Vec<f32>,
    /// False only for true environment termination, never for a time limit.
    pub not_terminal: bool,
}

impl Transition {
    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        check_dim("transition state", state_dim, self.state.len())?;
        check_dim("transition next state", state_dim, self.next_state.len())?;
        check_dim("transition action", action_dim, self.action.len())?;
        if self.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::usage(format!("action outside [-1, 1]: {:?}", self.action)));
        }
        let finite = self
            .state
            .iter()
            .chain(&self.next_state)
            .chain(&self.action)
            .chain(std::iter::once(&self.reward))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::usage("transition contains non-finite values"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LapParams {
    pub alpha: f64,
    pub min_priority: f64,
    pub capacity: usize,
}

impl Default for LapParams {
    fn default() -> Self {
        LapParams {
            alpha: 0.4,
            min_priority: 1.0,
            capacity: 1_000_000,
        }
    }
}

impl LapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("lap.alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.min_priority > 0.0 && self.min_priority.is_finite()) {
            return Err(Error::config(format!(
                "lap.min_priority must be > 0, got {}",
                self.min_priority
            )));
        }
        if self.capacity == 0 {
            return Err(Error::config("lap.capacity must be positive"));
        }
        Ok(())
    }

    /// `max(|δ|^α, min_priority)`.
    pub fn priority(&self, abs_td_error: f64) -> f64 {
        abs_td_error.powf(self.alpha).max(self.min_priority)
    }
}

/// Complete binary tree over a power-of-two number of leaves. Node `1` is the
/// root; node `k` has children `2k` and `2k+1`; leaves start at `width`.
#[derive(Clone, Debug)]
pub struct SumTree {
    width: usize,
    sums: Vec<f64>,
    maxes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let width = capacity.max(1).next_power_of_two();
        SumTree {
            width,
            sums: vec![0.0; 2 * width],
            maxes: vec![0.0; 2 * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    pub fn max(&self) -> f64 {
        self.maxes[1]
    }

    pub fn get(&self, index: usize) -> f64 {
        self.sums[self.width + index]
    }

    pub fn set(&mut self, index: usize, priority: f64) {
        let mut node = self.width + index;
        self.sums[node] = priority;
        self.maxes[node] = priority;
        while node > 1 {
            node /= 2;
            let (l, r) = (2 * node, 2 * node + 1);
            self.sums[node] = self.sums[l] + self.sums[r];
            self.maxes[node] = self.maxes[l].max(self.maxes[r]);
        }
    }

    /// Leaf holding the point `mass ∈ [0, total)` of the cumulative priority.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.width {
            let left = 2 * node;
            if mass < self.sums[left] || self.sums[left + 1] <= 0.0 {
                node = left;
            } else {
                mass -= self.sums[left];
                node = left + 1;
            }
        }
        node - self.width
    }

    /// Internal consistency: every inner node equals the sum of its children.
    pub fn check_consistency(&self, rel_tol: f64) -> bool {
        (1..self.width).all(|k| {
            let expected = self.sums[2 * k] + self.sums[2 * k + 1];
            (self.sums[k] - expected).abs() <= rel_tol * expected.abs().max(1e-12)
        })
    }
}

/// A sampled minibatch, converted to the agent's scalar type.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub state: Array2<S>,
    pub action: Array2<S>,
    pub reward: Array1<S>,
    pub next_state: Array2<S>,
    pub not_terminal: Array1<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn len(&self) -> usize {
        self.state.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(transitions: &[Transition]) -> Result<Self> {
        let first = transitions.first().ok_or_else(|| Error::usage("empty batch"))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = transitions.len();
        let row = |f: &dyn Fn(&Transition) -> &[f32], width: usize| {
            Array2::from_shape_fn((n, width), |(i, j)| S::of(f64::from(f(&transitions[i])[j])))
        };
        for t in transitions {
            t.validate(sd, ad)?;
        }
        Ok(Batch {
            state: row(&|t| &t.state, sd),
            action: row(&|t| &t.action, ad),
            reward: transitions.iter().map(|t| S::of(f64::from(t.reward))).collect(),
            next_state: row(&|t| &t.next_state, sd),
            not_terminal: transitions
                .iter()
                .map(|t| if t.not_terminal { S::one() } else { S::zero() })
                .collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Sample<S> {
    pub indices: Vec<usize>,
    pub batch: Batch<S>,
    pub probabilities: Vec<f64>,
}

/// Ring buffer with LAP sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    params: LapParams,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_states: Vec<f32>,
    not_terminal: Vec<bool>,
    tree: SumTree,
    len: usize,
    cursor: usize,
    uniform: bool,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, params: LapParams) -> Result<Self> {
        params.validate()?;
        let cap = params.capacity;
        Ok(ReplayBuffer {
            state_dim,
            action_dim,
            states: vec![0.0; cap * state_dim],
            actions: vec![0.0; cap * action_dim],
            rewards: vec![0.0; cap],
            next_states: vec![0.0; cap * state_dim],
            not_terminal: vec![true; cap],
            tree: SumTree::new(cap),
            len: 0,
            cursor: 0,
            uniform: false,
            params,
        })
    }

    pub fn params(&self) -> &LapParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.params.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn priority(&self, index: usize) -> f64 {
        self.tree.get(index)
    }

    pub fn max_priority(&self) -> f64 {
        if self.len == 0 {
            self.params.min_priority
        } else {
            self.tree.max().max(self.params.min_priority)
        }
    }

    /// Stores `t` in the next ring slot with the current maximum priority.
    /// Returns the slot index.
    pub fn insert(&mut self, t: &Transition) -> Result<usize> {
        t.validate(self.state_dim, self.action_dim)?;
        let priority = self.max_priority();
        let i = self.cursor;
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.not_terminal[i] = t.not_terminal;
        self.tree.set(i, priority);
        self.cursor = (self.cursor + 1) % self.params.capacity;
        self.len = (self.len + 1).min(self.params.capacity);
        Ok(i)
    }

    pub fn transition(&self, index: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            state: self.states[index * sd..(index + 1) * sd].to_vec(),
            action: self.actions[index * ad..(index + 1) * ad].to_vec(),
            reward: self.rewards[index],
            next_state: self.next_states[index * sd..(index + 1) * sd].to_vec(),
            not_terminal: self.not_terminal[index],
        }
    }

    /// Transitions in insertion order (oldest first).
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.params.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |k| self.transition((start + k) % self.params.capacity))
    }

    /// Ignore priorities when sampling. The agent also reads this flag to
    /// switch its critic loss from Huber to MSE.
    pub fn set_uniform(&mut self, enabled: bool) {
        self.uniform = enabled;
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Probability that a single draw returns `index`.
    pub fn probability(&self, index: usize) -> f64 {
        if self.uniform {
            1.0 / self.len as f64
        } else {
            self.tree.get(index) / self.tree.total()
        }
    }

    /// Maps uniform draws `u ∈ [0, 1)` to buffer indices.
    pub fn indices_for_draws(&self, draws: &[f64]) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::usage("cannot sample from an empty replay buffer"));
        }
        Ok(draws
            .iter()
            .map(|&u| {
                if self.uniform {
                    ((u * self.len as f64) as usize).min(self.len - 1)
                } else {
                    self.tree.find(u * self.tree.total()).min(self.len - 1)
                }
            })
            .collect())
    }

    /// Draws `batch_size` indices with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let draws: Vec<f64> = (0..batch_size).map(|_| rng.random::<f64>()).collect();
        self.indices_for_draws(&draws)
    }

    pub fn sample<S: Scalar>(&self, batch_size: usize, rng: &mut Rng) -> Result<Sample<S>> {
        if batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        let indices = self.sample_indices(batch_size, rng)?;
        let probabilities = indices.iter().map(|&i| self.probability(i)).collect();
        Ok(Sample {
            batch: self.gather(&indices),
            indices,
            probabilities,
        })
    }

    pub fn gather<S: Scalar>(&self, indices: &[usize]) -> Batch<S> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = indices.len();
        let cvt = |v: f32| S::of(f64::from(v));
        Batch {
            state: Array2::from_shape_fn((n, sd), |(r, c)| cvt(self.states[indices[r] * sd + c])),
            action: Array2::from_shape_fn((n, ad), |(r, c)| cvt(self.actions[indices[r] * ad + c])),
            reward: indices.iter().map(|&i| cvt(self.rewards[i])).collect(),
            next_state: Array2::from_shape_fn((n, sd), |(r, c)| cvt(self.next_states[indices[r] * sd + c])),
            not_terminal: indices
                .iter()
                .map(|&i| if self.not_terminal[i] { S::one() } else { S::zero() })
                .collect(),
        }
    }

    /// Sets `priority_i ← max(|δ_i|^α, min_priority)`.
    pub fn update_priorities(&mut self, indices: &[usize], abs_td_errors: &[f64]) -> Result<()> {
        check_dim("priority update", indices.len(), abs_td_errors.len())?;
        for (&i, &d) in indices.iter().zip(abs_td_errors) {
            if i >= self.len {
                return Err(Error::usage(format!("priority index {i} out of range ({})", self.len)));
            }
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::usage(format!("|td error| must be finite and >= 0, got {d}")));
            }
            self.tree.set(i, self.params.priority(d));
        }
        Ok(())
    }
}

//! State-action learned embeddings.
//!
//! `f` maps a state to `zs`, `g` maps `(a, zs)` to `zsa`. The pair is trained
//! only to predict the next state's embedding; value and policy networks read
//! embeddings from frozen earlier generations of the pair.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::nn::{avg_l1_norm, avg_l1_norm_backward, Activation, Mlp, MlpSpec, Parameters, Scalar, Tape};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub zs_dim: usize,
    pub hidden_dim: usize,
    /// AvgL1Norm on the output of `f`.
    pub normalize_zs: bool,
    /// AvgL1Norm on the output of `g` (off by default).
    pub normalize_zsa: bool,
    /// Width of the state-action embedding; differs from `zs_dim` only when
    /// the encoder is trained to predict something other than `zs'`.
    pub zsa_dim: usize,
    /// Extra scalar output on `g` predicting the reward.
    pub reward_head: bool,
}

impl EncoderConfig {
    pub fn new(state_dim: usize, action_dim: usize, zs_dim: usize, hidden_dim: usize) -> Self {
        EncoderConfig {
            state_dim,
            action_dim,
            zs_dim,
            hidden_dim,
            normalize_zs: true,
            normalize_zsa: false,
            zsa_dim: zs_dim,
            reward_head: false,
        }
    }
}

/// The encoder pair `(f, g)` plus an iteration tag identifying which
/// generation the parameters belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPair<S> {
    pub f: Mlp<S>,
    pub g: Mlp<S>,
    config: EncoderConfig,
    tag: u64,
}

/// Cached forward pass of `g`.
pub struct StateActionPass<S> {
    tape: Tape<S>,
    /// Embedding after the optional norm.
    pub zsa: Array2<S>,
    /// Predicted reward when the reward head is enabled.
    pub reward: Option<Array1<S>>,
}

impl<S: Scalar> EncoderPair<S> {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if config.zs_dim == 0 || config.hidden_dim == 0 || config.zsa_dim == 0 {
            return Err(Error::config("encoder widths must be positive"));
        }
        let h = config.hidden_dim;
        let f_spec = MlpSpec::new(
            vec![config.state_dim, h, h, config.zs_dim],
            vec![
                Activation::Elu,
                Activation::Elu,
                if config.normalize_zs {
                    Activation::AvgL1Norm
                } else {
                    Activation::Identity
                },
            ],
        )?;
        let g_out = config.zsa_dim + usize::from(config.reward_head);
        let g_spec = MlpSpec::new(
            vec![config.action_dim + config.zs_dim, h, h, g_out],
            vec![Activation::Elu, Activation::Elu, Activation::Identity],
        )?;
        let f = Mlp::new(f_spec, rng);
        let g = Mlp::new(g_spec, rng);
        Ok(EncoderPair { f, g, config, tag: 0 })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn zs_dim(&self) -> usize {
        self.config.zs_dim
    }

    pub fn zsa_dim(&self) -> usize {
        self.config.zsa_dim
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub(crate) fn set_tag(&mut self, tag: u64) {
        self.tag = tag;
    }

    pub fn zeros_like(&self) -> Self {
        EncoderPair {
            f: self.f.zeros_like(),
            g: self.g.zeros_like(),
            config: self.config.clone(),
            tag: self.tag,
        }
    }

    pub fn encode_state(&self, s: ArrayView2<'_, S>) -> Result<Array2<S>> {
        check_dim("state width", self.config.state_dim, s.ncols())?;
        self.f.predict(s)
    }

    pub fn encode_state_tape(&self, s: ArrayView2<'_, S>) -> Result<Tape<S>> {
        check_dim("state width", self.config.state_dim, s.ncols())?;
        self.f.forward(s)
    }

    pub fn encode_state_action(&self, zs: ArrayView2<'_, S>, a: ArrayView2<'_, S>) -> Result<Array2<S>> {
        Ok(self.state_action_pass(zs, a)?.zsa)
    }

    pub fn state_action_pass(&self, zs: ArrayView2<'_, S>, a: ArrayView2<'_, S>) -> Result<StateActionPass<S>> {
        check_dim("action width", self.config.action_dim, a.ncols())?;
        check_dim("zs width", self.config.zs_dim, zs.ncols())?;
        check_dim("zs/action batch", a.nrows(), zs.nrows())?;
        let input = concatenate(Axis(1), &[a, zs]).expect("matching rows");
        let tape = self.g.forward(input.view())?;
        let out = tape.output();
        let d = self.config.zsa_dim;
        let raw = out.slice(s![.., ..d]);
        let zsa = if self.config.normalize_zsa {
            avg_l1_norm(raw)
        } else {
            raw.to_owned()
        };
        let reward = self.config.reward_head.then(|| out.column(d).to_owned());
        Ok(StateActionPass { tape, zsa, reward })
    }

    /// Backpropagates `∂L/∂zsa` (and `∂L/∂r̂`) through `g`. Returns the `g`
    /// gradient plus `(∂L/∂a, ∂L/∂zs)`.
    pub fn state_action_backward(
        &self,
        pass: &StateActionPass<S>,
        d_zsa: ArrayView2<'_, S>,
        d_reward: Option<ArrayView1<'_, S>>,
    ) -> Result<(Mlp<S>, Array2<S>, Array2<S>)> {
        let out = pass.tape.output();
        let d = self.config.zsa_dim;
        let mut d_out = Array2::zeros(out.raw_dim());
        let d_raw = if self.config.normalize_zsa {
            avg_l1_norm_backward(out.slice(s![.., ..d]), d_zsa)
        } else {
            d_zsa.to_owned()
        };
        d_out.slice_mut(s![.., ..d]).assign(&d_raw);
        if let (Some(dr), true) = (d_reward, self.config.reward_head) {
            d_out.column_mut(d).assign(&dr);
        }
        let (grads, d_input) = self.g.backward(&pass.tape, d_out.view())?;
        let ad = self.config.action_dim;
        let d_a = d_input.slice(s![.., ..ad]).to_owned();
        let d_zs = d_input.slice(s![.., ad..]).to_owned();
        Ok((grads, d_a, d_zs))
    }
}

impl<S: Scalar> Parameters<S> for EncoderPair<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut t = self.f.tensors();
        t.extend(self.g.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.f.tensors_mut();
        t.extend(self.g.tensors_mut());
        t
    }
}

/// Which generation of the encoder an embedding is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generation {
    /// Iteration t+1, the one being trained.
    Current,
    /// Iteration t, feeding the current value function and policy.
    Fixed,
    /// Iteration t-1, feeding the target value function and policy.
    TargetFixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGenerations<S> {
    pub current: EncoderPair<S>,
    pub fixed: EncoderPair<S>,
    pub target_fixed: EncoderPair<S>,
}

impl<S: Scalar> EncoderGenerations<S> {
    /// All three generations start from the same parameters.
    pub fn new(mut pair: EncoderPair<S>) -> Self {
        let mut target_fixed = pair.clone();
        target_fixed.tag = 0;
        let mut fixed = pair.clone();
        fixed.tag = 1;
        pair.tag = 2;
        EncoderGenerations {
            current: pair,
            fixed,
            target_fixed,
        }
    }

    pub fn get(&self, generation: Generation) -> &EncoderPair<S> {
        match generation {
            Generation::Current => &self.current,
            Generation::Fixed => &self.fixed,
            Generation::TargetFixed => &self.target_fixed,
        }
    }

    /// `(f_{t-1}, g_{t-1}) ← (f_t, g_t)`, then `(f_t, g_t) ← (f_{t+1}, g_{t+1})`.
    pub fn sync(&mut self) {
        self.target_fixed.copy_from(&self.fixed);
        self.target_fixed.tag = self.fixed.tag;
        self.fixed.copy_from(&self.current);
        self.fixed.tag = self.current.tag;
        self.current.tag += 1;
    }
}

/// Inputs an encoder objective may consume.
pub struct EncoderBatch<'a, S> {
    pub state: ArrayView2<'a, S>,
    pub action: ArrayView2<'a, S>,
    pub reward: ArrayView1<'a, S>,
    pub next_state: ArrayView2<'a, S>,
    /// Target-policy action at the next state, with smoothing noise. Only the
    /// next-state-action objective needs it.
    pub next_action: Option<ArrayView2<'a, S>>,
}

/// Training objective for the encoder pair. Implementations are selected by
/// name through [`encoder_objective`].
pub trait EncoderObjective<S: Scalar>: Send {
    fn name(&self) -> &'static str;

    /// Width of `zsa` this objective trains `g` to emit.
    fn zsa_dim(&self, state_dim: usize, zs_dim: usize) -> usize {
        let _ = state_dim;
        zs_dim
    }

    fn reward_head(&self) -> bool {
        false
    }

    fn needs_next_action(&self) -> bool {
        false
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)>;

    /// Hook run after the optimizer has updated `pair`.
    fn after_update(&mut self, pair: &EncoderPair<S>) {
        let _ = pair;
    }
}

pub const ENCODER_OBJECTIVES: &[&str] = &[
    "next_embedding",
    "next_state",
    "polyak_target",
    "reward",
    "next_state_action",
    "cosine",
];

pub fn encoder_objective<S: Scalar>(name: &str) -> Result<Box<dyn EncoderObjective<S>>> {
    Ok(match name {
        "next_embedding" => Box::new(NextEmbedding),
        "next_state" => Box::new(NextState),
        "polyak_target" => Box::new(PolyakTarget::default()),
        "reward" => Box::new(RewardAugmented),
        "next_state_action" => Box::new(NextStateAction),
        "cosine" => Box::new(Cosine),
        other => {
            return Err(Error::config(format!(
                "unknown encoder objective `{other}` (known: {})",
                ENCODER_OBJECTIVES.join(", ")
            )))
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressionKind {
    /// Mean over the batch of the summed squared error.
    SquaredError,
    /// Mean over the batch of `1 - cos(zsa, target)`.
    Cosine,
}

/// Core of every objective: regress `g(f(s), a)` onto a fixed `target`.
///
/// `target` is treated as a constant, so no gradient reaches whatever
/// produced it. With `reward` present, the reward head is regressed onto it
/// with weight 1.
pub fn embedding_regression<S: Scalar>(
    pair: &EncoderPair<S>,
    state: ArrayView2<'_, S>,
    action: ArrayView2<'_, S>,
    target: ArrayView2<'_, S>,
    kind: RegressionKind,
    reward: Option<ArrayView1<'_, S>>,
) -> Result<(S, EncoderPair<S>)> {
    let batch = state.nrows();
    if batch == 0 {
        return Err(Error::config("empty encoder batch"));
    }
    check_dim("encoder target width", pair.zsa_dim(), target.ncols())?;
    let f_tape = pair.encode_state_tape(state)?;
    let pass = pair.state_action_pass(f_tape.output().view(), action)?;
    let n = S::of(batch as f64);
    let (mut loss, d_zsa) = match kind {
        RegressionKind::SquaredError => {
            let diff = &pass.zsa - &target;
            let loss = diff.iter().map(|v| *v * *v).sum::<S>() / n;
            (loss, diff * (S::of(2.0) / n))
        }
        RegressionKind::Cosine => cosine_loss(pass.zsa.view(), target),
    };
    let d_reward = match (reward, &pass.reward) {
        (Some(r), Some(pred)) => {
            let diff = pred - &r;
            loss += diff.iter().map(|v| *v * *v).sum::<S>() / n;
            Some(diff * (S::of(2.0) / n))
        }
        _ => None,
    };
    let (g_grads, _d_a, d_zs) = pair.state_action_backward(&pass, d_zsa.view(), d_reward.as_ref().map(|d| d.view()))?;
    let (f_grads, _) = pair.f.backward(&f_tape, d_zs.view())?;
    let mut grads = pair.zeros_like();
    grads.f = f_grads;
    grads.g = g_grads;
    Ok((loss, grads))
}

fn cosine_loss<S: Scalar>(u: ArrayView2<'_, S>, v: ArrayView2<'_, S>) -> (S, Array2<S>) {
    let n = S::of(u.nrows() as f64);
    let tiny = S::of(1e-12);
    let mut loss = S::zero();
    let mut grad = Array2::zeros(u.raw_dim());
    for ((ur, vr), mut gr) in u.rows().into_iter().zip(v.rows()).zip(grad.rows_mut()) {
        let nu = ur.dot(&ur).sqrt().max(tiny);
        let nv = vr.dot(&vr).sqrt().max(tiny);
        let cos = ur.dot(&vr) / (nu * nv);
        loss += (S::one() - cos) / n;
        // ∂cos/∂u = v/(|u||v|) − cos·u/|u|²
        for ((g, &a), &b) in gr.iter_mut().zip(ur.iter()).zip(vr.iter()) {
            *g = -(b / (nu * nv) - cos * a / (nu * nu)) / n;
        }
    }
    (loss, grad)
}

/// Default objective: `mean_b Σ_d (zsa − sg(f(s')))²`.
pub fn encoder_loss<S: Scalar>(pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
    let target = pair.encode_state(batch.next_state)?;
    embedding_regression(
        pair,
        batch.state,
        batch.action,
        target.view(),
        RegressionKind::SquaredError,
        None,
    )
}

pub struct NextEmbedding;

impl<S: Scalar> EncoderObjective<S> for NextEmbedding {
    fn name(&self) -> &'static str {
        "next_embedding"
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
        encoder_loss(pair, batch)
    }
}

/// Predicts the raw next state; `zsa` takes the state's width.
pub struct NextState;

impl<S: Scalar> EncoderObjective<S> for NextState {
    fn name(&self) -> &'static str {
        "next_state"
    }

    fn zsa_dim(&self, state_dim: usize, _zs_dim: usize) -> usize {
        state_dim
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
        embedding_regression(
            pair,
            batch.state,
            batch.action,
            batch.next_state,
            RegressionKind::SquaredError,
            None,
        )
    }
}

/// Target embedding from a slowly moving copy of `f`.
pub struct PolyakTarget<S> {
    pub weight: f64,
    slow_f: Option<Mlp<S>>,
}

impl<S> Default for PolyakTarget<S> {
    fn default() -> Self {
        PolyakTarget {
            weight: 0.01,
            slow_f: None,
        }
    }
}

impl<S: Scalar> EncoderObjective<S> for PolyakTarget<S> {
    fn name(&self) -> &'static str {
        "polyak_target"
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
        let slow = self.slow_f.get_or_insert_with(|| pair.f.clone());
        let target = slow.predict(batch.next_state)?;
        embedding_regression(
            pair,
            batch.state,
            batch.action,
            target.view(),
            RegressionKind::SquaredError,
            None,
        )
    }

    fn after_update(&mut self, pair: &EncoderPair<S>) {
        let w = S::of(self.weight);
        match &mut self.slow_f {
            Some(slow) => slow.polyak_from(&pair.f, w),
            None => self.slow_f = Some(pair.f.clone()),
        }
    }
}

/// Next embedding plus a reward-prediction head on `g`.
pub struct RewardAugmented;

impl<S: Scalar> EncoderObjective<S> for RewardAugmented {
    fn name(&self) -> &'static str {
        "reward"
    }

    fn reward_head(&self) -> bool {
        true
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
        let target = pair.encode_state(batch.next_state)?;
        embedding_regression(
            pair,
            batch.state,
            batch.action,
            target.view(),
            RegressionKind::SquaredError,
            Some(batch.reward),
        )
    }
}

/// Predicts the next state-action embedding under the (noisy) target action.
pub struct NextStateAction;

impl<S: Scalar> EncoderObjective<S> for NextStateAction {
    fn name(&self) -> &'static str {
        "next_state_action"
    }

    fn needs_next_action(&self) -> bool {
        true
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
        let next_action = batch
            .next_action
            .ok_or_else(|| Error::config("next_state_action objective needs the target-policy action"))?;
        let zs_next = pair.encode_state(batch.next_state)?;
        let target = pair.encode_state_action(zs_next.view(), next_action)?;
        embedding_regression(
            pair,
            batch.state,
            batch.action,
            target.view(),
            RegressionKind::SquaredError,
            None,
        )
    }
}

/// Cosine-similarity objective toward the next embedding.
pub struct Cosine;

impl<S: Scalar> EncoderObjective<S> for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn loss_and_grads(&mut self, pair: &EncoderPair<S>, batch: &EncoderBatch<'_, S>) -> Result<(S, EncoderPair<S>)> {
        let target = pair.encode_state(batch.next_state)?;
        embedding_regression(
            pair,
            batch.state,
            batch.action,
            target.view(),
            RegressionKind::Cosine,
            None,
        )
    }
}

//! The TD7 learner.
//!
//! Twin value functions and a deterministic policy read embeddings from the
//! frozen encoder generations. One training step samples a batch, trains the
//! encoder, builds clipped targets, trains the critics, reports TD errors for
//! reprioritisation and, on a schedule, trains the policy and shifts every
//! target network up one generation.

mod config;
mod networks;
mod snapshot;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub use config::{AgentConfig, Normalization, PolicyInputs, TargetUpdate, ValueInputs};
pub use networks::{NetShape, PolicyNet, PolicyPass, ValueArgs, ValueGrads, ValueNet, ValuePass};
pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use crate::error::{check_dim, Error, Result};
use crate::nn::{huber, huber_grad, Activation, Adam, Mlp, Parameters, Scalar, Tape};
use crate::replay::{Batch, ReplayBuffer};
use crate::rng::{normal, substream, uniform, Rng};
use crate::sale::{
    encoder_objective, EncoderBatch, EncoderConfig, EncoderGenerations, EncoderObjective, EncoderPair, Generation,
    StateActionPass,
};

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&self, state: &[f32]) -> Result<Vec<f32>>;
}

/// Deterministic policy plus the state encoder it reads `zs` from. This is
/// what a checkpoint stores and what evaluation runs.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot<S> {
    pub actor: PolicyNet<S>,
    pub encoder: Option<Mlp<S>>,
}

impl<S: Scalar> PolicySnapshot<S> {
    pub fn actions(&self, states: ArrayView2<'_, S>) -> Result<Array2<S>> {
        let zs = match (&self.encoder, self.actor.reads_zs()) {
            (Some(f), true) => Some(f.predict(states)?),
            (None, true) => return Err(Error::usage("policy reads zs but has no encoder")),
            _ => None,
        };
        self.actor.predict(zs.as_ref().map(|z| z.view()), states)
    }
}

impl<S: Scalar> Policy for PolicySnapshot<S> {
    fn act(&self, state: &[f32]) -> Result<Vec<f32>> {
        let out = self.actions(row(state).view())?;
        Ok(out.iter().map(|v| v.as_f64() as f32).collect())
    }
}

impl<S: Scalar> Parameters<S> for PolicySnapshot<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut t = self.actor.tensors();
        if let Some(f) = &self.encoder {
            t.extend(f.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.actor.tensors_mut();
        if let Some(f) = &mut self.encoder {
            t.extend(f.tensors_mut());
        }
        t
    }
}

fn row<S: Scalar>(values: &[f32]) -> Array2<S> {
    Array2::from_shape_fn((1, values.len()), |(_, j)| S::of(f64::from(values[j])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Explore,
    Deterministic,
}

/// Running range of every target seen so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipBounds {
    pub q_min: f64,
    pub q_max: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        ClipBounds { q_min: 0.0, q_max: 0.0 }
    }
}

impl ClipBounds {
    /// Widens the range to cover `values`; non-finite values are ignored.
    pub fn update(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values.into_iter().filter(|v| v.is_finite()) {
            self.q_min = self.q_min.min(v);
            self.q_max = self.q_max.max(v);
        }
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.q_min, self.q_max)
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.q_min..=self.q_max).contains(&v)
    }
}

/// Target-policy action at the next state.
#[derive(Clone, Debug)]
pub struct NextAction<S> {
    pub zs: Option<Array2<S>>,
    pub action: Array2<S>,
    /// Clipped smoothing noise that was added to the policy output.
    pub noise: Array2<S>,
}

#[derive(Clone, Debug)]
pub struct TargetOutput<S> {
    pub target: Array1<S>,
    /// `min(Q_1, Q_2)` before clipping.
    pub min_q: Array1<S>,
    /// `min(Q_1, Q_2)` after clipping (equal to `min_q` when clipping is off).
    pub clipped_q: Array1<S>,
    pub next: NextAction<S>,
}

pub struct CriticGrads<S> {
    pub loss: S,
    pub value: [ValueNet<S>; 2],
    /// Gradient reaching the online encoder; only in end-to-end mode.
    pub encoder: Option<EncoderPair<S>>,
    pub abs_td: Vec<f64>,
    pub q1: Array1<S>,
}

pub struct ActorGrads<S> {
    pub loss: S,
    pub grads: PolicyNet<S>,
    pub mean_q: S,
}

/// Scalars reported by one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainMetrics {
    pub step: u64,
    pub encoder_loss: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub mean_target: f64,
    /// Mean of `Q_1` on the batch before the update.
    pub mean_value_estimate: f64,
    pub bounds_before: ClipBounds,
    pub bounds_after: ClipBounds,
    /// Range of the clipped bootstrap values on this batch.
    pub clipped_range: (f64, f64),
    pub synced: bool,
}

/// Full result of [`Agent::train_on_batch`].
#[derive(Clone, Debug)]
pub struct TrainOutput<S> {
    pub metrics: TrainMetrics,
    pub abs_td: Vec<f64>,
    pub target: TargetOutput<S>,
}

struct OnlineEmbedding<S> {
    f_tape: Option<Tape<S>>,
    zs: Option<Array2<S>>,
    g_pass: Option<StateActionPass<S>>,
    zsa: Option<Array2<S>>,
}

impl<S> OnlineEmbedding<S> {
    fn args<'a>(&'a self, state: ArrayView2<'a, S>, action: ArrayView2<'a, S>) -> ValueArgs<'a, S> {
        ValueArgs {
            zsa: self.zsa.as_ref().map(|z| z.view()),
            zs: self.zs.as_ref().map(|z| z.view()),
            state,
            action,
        }
    }
}

pub struct Agent<S: Scalar> {
    config: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    encoders: EncoderGenerations<S>,
    encoder_opt: Adam<S>,
    objective: Box<dyn EncoderObjective<S>>,
    critics: [ValueNet<S>; 2],
    critic_targets: [ValueNet<S>; 2],
    critic_opts: [Adam<S>; 2],
    actor: PolicyNet<S>,
    actor_target: PolicyNet<S>,
    actor_opt: Adam<S>,
    bounds: ClipBounds,
    training_steps: u64,
    explore_rng: Rng,
    noise_rng: Rng,
    replay_rng: Rng,
}

impl<S: Scalar> Agent<S> {
    pub fn new(config: AgentConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::config("state and action dimensions must be positive"));
        }
        let objective = encoder_objective::<S>(&config.encoder_objective)?;
        let mut enc_cfg = EncoderConfig::new(state_dim, action_dim, config.zs_dim, config.hidden_dim);
        enc_cfg.normalize_zs = config.normalization.on_zs();
        enc_cfg.normalize_zsa = config.normalization.on_zsa();
        enc_cfg.zsa_dim = objective.zsa_dim(state_dim, config.zs_dim);
        enc_cfg.reward_head = objective.reward_head();
        let pair = EncoderPair::new(enc_cfg, &mut substream(seed, "init.encoder"))?;
        let shape = NetShape {
            state_dim,
            action_dim,
            zs_dim: config.zs_dim,
            zsa_dim: pair.zsa_dim(),
            hidden_dim: config.hidden_dim,
        };
        let raw = !config.sale;
        let hidden = if config.relu_value {
            Activation::Relu
        } else {
            Activation::Elu
        };
        let phi_norm = config.normalization.on_phi();
        let value = |label: &str| {
            ValueNet::new(
                shape,
                config.effective_value_inputs(),
                raw,
                phi_norm,
                hidden,
                &mut substream(seed, label),
            )
        };
        let critics = [value("init.critic.0")?, value("init.critic.1")?];
        let actor = PolicyNet::new(
            shape,
            config.effective_policy_inputs(),
            raw,
            phi_norm,
            &mut substream(seed, "init.actor"),
        )?;
        Ok(Agent {
            encoder_opt: Adam::new(config.adam),
            critic_opts: [Adam::new(config.adam), Adam::new(config.adam)],
            actor_opt: Adam::new(config.adam),
            critic_targets: critics.clone(),
            actor_target: actor.clone(),
            encoders: EncoderGenerations::new(pair),
            objective,
            critics,
            actor,
            bounds: ClipBounds::default(),
            training_steps: 0,
            explore_rng: substream(seed, "explore"),
            noise_rng: substream(seed, "target_noise"),
            replay_rng: substream(seed, "replay"),
            state_dim,
            action_dim,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn training_steps(&self) -> u64 {
        self.training_steps
    }

    pub fn bounds(&self) -> ClipBounds {
        self.bounds
    }

    pub fn encoders(&self) -> &EncoderGenerations<S> {
        &self.encoders
    }

    pub fn encoders_mut(&mut self) -> &mut EncoderGenerations<S> {
        &mut self.encoders
    }

    pub fn critics(&self) -> &[ValueNet<S>; 2] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [ValueNet<S>; 2] {
        &mut self.critics
    }

    pub fn critic_targets(&self) -> &[ValueNet<S>; 2] {
        &self.critic_targets
    }

    pub fn critic_targets_mut(&mut self) -> &mut [ValueNet<S>; 2] {
        &mut self.critic_targets
    }

    pub fn actor(&self) -> &PolicyNet<S> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut PolicyNet<S> {
        &mut self.actor
    }

    pub fn actor_target(&self) -> &PolicyNet<S> {
        &self.actor_target
    }

    pub fn set_bounds(&mut self, bounds: ClipBounds) {
        self.bounds = bounds;
    }

    /// Generation whose embeddings feed the current value function and policy.
    pub fn online_generation(&self) -> Generation {
        if self.config.fixed_embeddings && self.config.end_to_end.is_none() {
            Generation::Fixed
        } else {
            Generation::Current
        }
    }

    /// Generation whose embeddings feed the target networks.
    pub fn target_generation(&self) -> Generation {
        match self.online_generation() {
            Generation::Fixed => Generation::TargetFixed,
            _ => Generation::Fixed,
        }
    }

    fn online_pair(&self) -> &EncoderPair<S> {
        self.encoders.get(self.online_generation())
    }

    fn target_pair(&self) -> &EncoderPair<S> {
        self.encoders.get(self.target_generation())
    }

    fn embeds(&self) -> bool {
        self.config.uses_embeddings()
    }

    fn value_reads_zsa(&self) -> bool {
        self.config.effective_value_inputs().zsa
    }

    // Action selection

    pub fn random_action(&mut self) -> Vec<f32> {
        (0..self.action_dim)
            .map(|_| uniform(&mut self.explore_rng, -1.0, 1.0) as f32)
            .collect()
    }

    /// Deterministic policy output for a batch of states.
    pub fn policy_actions(&self, states: ArrayView2<'_, S>) -> Result<Array2<S>> {
        check_dim("state width", self.state_dim, states.ncols())?;
        let zs = self.zs_for_policy(self.online_pair(), states)?;
        self.actor.predict(zs.as_ref().map(|z| z.view()), states)
    }

    fn zs_for_policy(&self, pair: &EncoderPair<S>, states: ArrayView2<'_, S>) -> Result<Option<Array2<S>>> {
        if self.embeds() {
            Ok(Some(pair.encode_state(states)?))
        } else {
            Ok(None)
        }
    }

    pub fn select_action(&mut self, state: &[f32], mode: ActionMode, step: u64) -> Result<Vec<f32>> {
        check_dim("state width", self.state_dim, state.len())?;
        if mode == ActionMode::Explore && step < self.config.initial_random_steps {
            return Ok(self.random_action());
        }
        let mean = self.policy_actions(row::<S>(state).view())?;
        let sigma = self.config.exploration_noise;
        Ok(mean
            .iter()
            .map(|m| {
                let m = m.as_f64();
                let a = match mode {
                    ActionMode::Deterministic => m,
                    ActionMode::Explore => (m + sigma * normal(&mut self.explore_rng)).clamp(-1.0, 1.0),
                };
                a as f32
            })
            .collect())
    }

    pub fn policy_snapshot(&self) -> PolicySnapshot<S> {
        PolicySnapshot {
            actor: self.actor.clone(),
            encoder: self.embeds().then(|| self.online_pair().f.clone()),
        }
    }

    // Targets

    /// Target-policy action at `s'` with clipped smoothing noise.
    pub fn target_action(&mut self, batch: &Batch<S>) -> Result<NextAction<S>> {
        let zs = self.zs_for_policy(self.target_pair(), batch.next_state.view())?;
        let mean = self
            .actor_target
            .predict(zs.as_ref().map(|z| z.view()), batch.next_state.view())?;
        let (sigma, c) = (self.config.target_policy_noise, self.config.noise_clip);
        let noise = Array2::from_shape_fn(mean.raw_dim(), |_| S::of((sigma * normal(&mut self.noise_rng)).clamp(-c, c)));
        let (lo, hi) = (-S::one(), S::one());
        let action = (&mean + &noise).mapv(|v| v.max(lo).min(hi));
        Ok(NextAction { zs, action, noise })
    }

    /// Clipped double-Q target for a given next action.
    pub fn target_from(&self, batch: &Batch<S>, next: &NextAction<S>) -> Result<TargetOutput<S>> {
        let pair = self.target_pair();
        let zsa = match (&next.zs, self.value_reads_zsa()) {
            (Some(zs), true) => Some(pair.encode_state_action(zs.view(), next.action.view())?),
            _ => None,
        };
        let args = ValueArgs {
            zsa: zsa.as_ref().map(|z| z.view()),
            zs: next.zs.as_ref().map(|z| z.view()),
            state: batch.next_state.view(),
            action: next.action.view(),
        };
        let q1 = self.critic_targets[0].predict(args)?;
        let q2 = self.critic_targets[1].predict(args)?;
        let min_q = ndarray::Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b));
        let clipped_q = if self.config.clipping {
            let (lo, hi) = (S::of(self.bounds.q_min), S::of(self.bounds.q_max));
            min_q.mapv(|v| v.max(lo).min(hi))
        } else {
            min_q.clone()
        };
        let gamma = S::of(self.config.discount);
        let target = ndarray::Zip::from(&batch.reward)
            .and(&batch.not_terminal)
            .and(&clipped_q)
            .map_collect(|&r, &nt, &q| if nt == S::zero() { r } else { r + nt * gamma * q });
        Ok(TargetOutput {
            target,
            min_q,
            clipped_q,
            next: next.clone(),
        })
    }

    pub fn compute_target(&mut self, batch: &Batch<S>) -> Result<TargetOutput<S>> {
        let next = self.target_action(batch)?;
        self.target_from(batch, &next)
    }

    pub fn update_clip_bounds(&mut self, targets: ArrayView1<'_, S>) {
        self.bounds.update(targets.iter().map(|v| v.as_f64()));
    }

    // Encoder

    fn encoder_batch<'a>(batch: &'a Batch<S>, next: Option<&'a NextAction<S>>) -> EncoderBatch<'a, S> {
        EncoderBatch {
            state: batch.state.view(),
            action: batch.action.view(),
            reward: batch.reward.view(),
            next_state: batch.next_state.view(),
            next_action: next.map(|n| n.action.view()),
        }
    }

    /// Loss and gradient of the configured encoder objective on the current
    /// generation.
    pub fn encoder_loss_and_grads(&mut self, batch: &Batch<S>, next: Option<&NextAction<S>>) -> Result<(S, EncoderPair<S>)> {
        let eb = Self::encoder_batch(batch, next);
        self.objective.loss_and_grads(&self.encoders.current, &eb)
    }

    pub fn encoder_update(&mut self, batch: &Batch<S>, next: Option<&NextAction<S>>) -> Result<S> {
        let (loss, grads) = self.encoder_loss_and_grads(batch, next)?;
        self.finite_loss(loss, "encoder")?;
        self.encoder_opt.step(&mut self.encoders.current, &grads)?;
        self.objective.after_update(&self.encoders.current);
        Ok(loss)
    }

    fn finite_loss(&self, loss: S, what: &str) -> Result<()> {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::Training {
                step: self.training_steps,
                message: format!(
                    "{what} loss is {loss} (bounds [{}, {}])",
                    self.bounds.q_min, self.bounds.q_max
                ),
            })
        }
    }

    // Critic

    fn online_embedding(&self, state: ArrayView2<'_, S>, action: ArrayView2<'_, S>, taped: bool) -> Result<OnlineEmbedding<S>> {
        if !self.embeds() {
            return Ok(OnlineEmbedding {
                f_tape: None,
                zs: None,
                g_pass: None,
                zsa: None,
            });
        }
        let pair = self.online_pair();
        let (f_tape, zs) = if taped {
            let tape = pair.encode_state_tape(state)?;
            let zs = tape.output().clone();
            (Some(tape), zs)
        } else {
            (None, pair.encode_state(state)?)
        };
        let (g_pass, zsa) = if self.value_reads_zsa() {
            let pass = pair.state_action_pass(zs.view(), action)?;
            let zsa = pass.zsa.clone();
            (Some(pass), Some(zsa))
        } else {
            (None, None)
        };
        Ok(OnlineEmbedding {
            f_tape,
            zs: Some(zs),
            g_pass,
            zsa,
        })
    }

    /// Critic loss, summed over the twins, with its gradients. `target` is a
    /// constant.
    pub fn critic_loss_and_grads(&self, batch: &Batch<S>, target: ArrayView1<'_, S>) -> Result<CriticGrads<S>> {
        let n = batch.len();
        check_dim("target batch", n, target.len())?;
        if n == 0 {
            return Err(Error::usage("empty batch"));
        }
        let e2e = self.config.end_to_end.is_some() && self.embeds();
        let emb = self.online_embedding(batch.state.view(), batch.action.view(), e2e)?;
        let args = emb.args(batch.state.view(), batch.action.view());
        let inv_n = S::of(1.0 / n as f64);
        let kappa = S::of(self.config.huber_threshold);
        let mut loss = S::zero();
        let mut abs_td = vec![0.0f64; n];
        let mut q1 = None;
        let mut value_grads = Vec::with_capacity(2);
        let mut d_zsa: Option<Array2<S>> = None;
        let mut d_zs: Option<Array2<S>> = None;
        for critic in &self.critics {
            let pass = critic.forward(args)?;
            let residual = &target - &pass.q;
            for (td, r) in abs_td.iter_mut().zip(residual.iter()) {
                *td = td.max(r.as_f64().abs());
            }
            let d_q = if self.config.huber_loss {
                loss += residual.iter().map(|&r| huber(r, kappa)).sum::<S>() * inv_n;
                residual.mapv(|r| -huber_grad(r, kappa) * inv_n)
            } else {
                loss += residual.iter().map(|&r| r * r).sum::<S>() * inv_n;
                residual.mapv(|r| -(r + r) * inv_n)
            };
            let grads = critic.backward(&pass, d_q.view())?;
            if e2e {
                accumulate(&mut d_zsa, grads.d_zsa.as_ref());
                accumulate(&mut d_zs, grads.d_zs.as_ref());
            }
            value_grads.push(grads.params);
            q1.get_or_insert(pass.q);
        }
        let encoder = if e2e {
            let pair = self.online_pair();
            let mut enc = pair.zeros_like();
            let mut d_zs = d_zs.unwrap_or_else(|| Array2::zeros((n, pair.zs_dim())));
            if let (Some(pass), Some(d)) = (&emb.g_pass, &d_zsa) {
                let (g_grads, _, d_zs_g) = pair.state_action_backward(pass, d.view(), None)?;
                enc.g = g_grads;
                d_zs += &d_zs_g;
            }
            let tape = emb.f_tape.as_ref().expect("taped in end-to-end mode");
            enc.f = pair.f.backward(tape, d_zs.view())?.0;
            Some(enc)
        } else {
            None
        };
        let [v1, v2]: [ValueNet<S>; 2] = value_grads.try_into().map_err(|_| Error::usage("twin count"))?;
        Ok(CriticGrads {
            loss,
            value: [v1, v2],
            encoder,
            abs_td,
            q1: q1.expect("two critics"),
        })
    }

    /// One Adam step on both critics; returns the loss, `|δ|` per transition
    /// and the mean pre-update `Q_1`.
    pub fn critic_update(&mut self, batch: &Batch<S>, target: ArrayView1<'_, S>) -> Result<(S, Vec<f64>, f64)> {
        self.critic_update_with(batch, target, None)
    }

    fn critic_update_with(
        &mut self,
        batch: &Batch<S>,
        target: ArrayView1<'_, S>,
        dynamics: Option<EncoderPair<S>>,
    ) -> Result<(S, Vec<f64>, f64)> {
        let grads = self.critic_loss_and_grads(batch, target)?;
        self.finite_loss(grads.loss, "critic")?;
        let [g1, g2] = &grads.value;
        self.critic_opts[0].step(&mut self.critics[0], g1)?;
        self.critic_opts[1].step(&mut self.critics[1], g2)?;
        if let Some(mut enc) = grads.encoder {
            if let Some(dyn_grads) = dynamics {
                enc.accumulate(&dyn_grads);
            }
            self.encoder_opt.step(&mut self.encoders.current, &enc)?;
            self.objective.after_update(&self.encoders.current);
        }
        let mean_q = grads.q1.mean().map(|v| v.as_f64()).unwrap_or(0.0);
        Ok((grads.loss, grads.abs_td, mean_q))
    }

    // Actor

    /// `−mean Q + λ·|mean Q|·mean((π − a)²)` with its policy gradient. The
    /// critics and encoders are treated as constants.
    pub fn actor_loss_and_grads(&self, batch: &Batch<S>) -> Result<ActorGrads<S>> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::usage("empty batch"));
        }
        let pair = self.online_pair();
        let zs = self.zs_for_policy(pair, batch.state.view())?;
        let pi = self.actor.forward(zs.as_ref().map(|z| z.view()), batch.state.view())?;
        let a_pi = pi.action();
        let g_pass = match (&zs, self.value_reads_zsa()) {
            (Some(zs), true) => Some(pair.state_action_pass(zs.view(), a_pi.view())?),
            _ => None,
        };
        let args = ValueArgs {
            zsa: g_pass.as_ref().map(|p| p.zsa.view()),
            zs: zs.as_ref().map(|z| z.view()),
            state: batch.state.view(),
            action: a_pi.view(),
        };
        let twins = if self.config.single_q_actor { 1 } else { 2 };
        let weight = S::of(1.0 / twins as f64);
        let inv_n = S::of(1.0 / n as f64);
        let mut q = Array1::<S>::zeros(n);
        let mut passes = Vec::with_capacity(twins);
        for critic in &self.critics[..twins] {
            let pass = critic.forward(args)?;
            q.scaled_add(weight, &pass.q);
            passes.push(pass);
        }
        let mean_q = q.sum() * inv_n;
        let diff = a_pi - &batch.action;
        let bc = diff.iter().map(|&d| d * d).sum::<S>() / S::of(diff.len() as f64);
        let lambda = S::of(self.config.bc_weight);
        let scale = lambda * mean_q.abs();
        let loss = -mean_q + scale * bc;

        let d_q = Array1::from_elem(n, -weight * inv_n);
        let mut d_a = Array2::<S>::zeros(a_pi.raw_dim());
        let mut d_zsa: Option<Array2<S>> = None;
        for (critic, pass) in self.critics[..twins].iter().zip(&passes) {
            let grads = critic.backward(pass, d_q.view())?;
            d_a += &grads.d_action;
            accumulate(&mut d_zsa, grads.d_zsa.as_ref());
        }
        if let (Some(pass), Some(d)) = (&g_pass, &d_zsa) {
            let (_, d_a_g, _) = pair.state_action_backward(pass, d.view(), None)?;
            d_a += &d_a_g;
        }
        if lambda > S::zero() {
            d_a.scaled_add(scale * S::of(2.0) / S::of(diff.len() as f64), &diff);
        }
        let grads = self.actor.backward(&pi, d_a.view())?;
        Ok(ActorGrads { loss, grads, mean_q })
    }

    pub fn actor_update(&mut self, batch: &Batch<S>) -> Result<S> {
        let ActorGrads { loss, grads, .. } = self.actor_loss_and_grads(batch)?;
        self.finite_loss(loss, "actor")?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(loss)
    }

    // Targets

    /// Hard copy of every target network and one encoder generation shift.
    pub fn target_sync(&mut self) {
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.copy_from(c);
        }
        self.actor_target.copy_from(&self.actor);
        self.encoders.sync();
    }

    fn polyak_targets(&mut self) {
        let tau = S::of(self.config.tau);
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.polyak_from(c, tau);
        }
        self.actor_target.polyak_from(&self.actor, tau);
    }

    // Training

    /// Samples from `buffer`, trains, and writes the new priorities back.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer) -> Result<TrainMetrics> {
        let sample = buffer.sample::<S>(self.config.batch_size, &mut self.replay_rng)?;
        let indices = sample.indices;
        let out = self.train_inner(&sample.batch, |td| buffer.update_priorities(&indices, td))?;
        Ok(out.metrics)
    }

    /// One full training step on a given batch, without a buffer.
    pub fn train_on_batch(&mut self, batch: &Batch<S>) -> Result<TrainOutput<S>> {
        self.train_inner(batch, |_| Ok(()))
    }

    fn train_inner(&mut self, batch: &Batch<S>, reprioritise: impl FnOnce(&[f64]) -> Result<()>) -> Result<TrainOutput<S>> {
        check_dim("batch state width", self.state_dim, batch.state.ncols())?;
        check_dim("batch action width", self.action_dim, batch.action.ncols())?;
        self.training_steps += 1;
        let step = self.training_steps;

        let next = self.target_action(batch)?;
        let needs_next = self.objective.needs_next_action();
        let next_ref = needs_next.then_some(&next);
        let (encoder_loss, dynamics) = match self.config.end_to_end {
            _ if !self.config.sale => (None, None),
            None => (Some(self.encoder_update(batch, next_ref)?.as_f64()), None),
            Some(beta) => {
                let (loss, mut grads) = self.encoder_loss_and_grads(batch, next_ref)?;
                grads.scale(S::of(beta));
                (Some(loss.as_f64()), Some(grads))
            }
        };

        let target = self.target_from(batch, &next)?;
        let bounds_before = self.bounds;
        self.update_clip_bounds(target.target.view());

        let (critic_loss, abs_td, mean_q) = self.critic_update_with(batch, target.target.view(), dynamics)?;
        reprioritise(&abs_td)?;

        let actor_loss = if step % self.config.policy_freq == 0 {
            let loss = self.actor_update(batch)?;
            if self.config.target_update == TargetUpdate::Polyak {
                self.polyak_targets();
            }
            Some(loss.as_f64())
        } else {
            None
        };

        let synced = step % self.config.target_update_freq == 0;
        if synced {
            match self.config.target_update {
                TargetUpdate::Periodic => self.target_sync(),
                TargetUpdate::Polyak => self.encoders.sync(),
            }
        }

        let clipped_range = target
            .clipped_q
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
        let metrics = TrainMetrics {
            step,
            encoder_loss,
            critic_loss: critic_loss.as_f64(),
            actor_loss,
            mean_target: target.target.mean().map(|v| v.as_f64()).unwrap_or(0.0),
            mean_value_estimate: mean_q,
            bounds_before,
            bounds_after: self.bounds,
            clipped_range,
            synced,
        };
        log::trace!("train step {step}: critic {:.4e}", metrics.critic_loss);
        Ok(TrainOutput {
            metrics,
            abs_td,
            target,
        })
    }
}

fn accumulate<S: Scalar>(acc: &mut Option<Array2<S>>, add: Option<&Array2<S>>) {
    if let Some(add) = add {
        match acc {
            Some(a) => *a += add,
            None => *acc = Some(add.clone()),
        }
    }
}

/// Converts f32 rows (as stored by the replay buffer) into a batch matrix.
pub fn states_matrix<S: Scalar>(rows: &[Vec<f32>]) -> Array2<S> {
    let width = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), width), |(i, j)| S::of(f64::from(rows[i][j])))
}

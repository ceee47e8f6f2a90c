//! Oracles and helpers shared by the integration tests and the acceptance
//! target. Nothing here calls into the code under test except to read
//! parameters out of it or to build inputs for it.
#![allow(dead_code)]

use td7::agent::Policy;
use td7::envsuite::{make_env, scripted_controller};
use td7::harness::{evaluate, mean, RandomPolicy};
use td7::nn::Parameters;
use td7::replay::{Batch, Transition};
use td7::rng::{normal, substream, uniform};

pub mod criteria;

// Finite differences

/// Central-difference step for double precision.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn flat<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

pub fn set_param<P: Parameters<f64>>(p: &mut P, mut k: usize, value: f64) {
    for t in p.tensors_mut() {
        if k < t.len() {
            t[k] = value;
            return;
        }
        k -= t.len();
    }
    panic!("parameter index out of range");
}

/// Worst relative error between `analytic` and central differences of
/// `loss_at(k, x)`, which must evaluate the loss with parameter `k` set to
/// `x` and leave the parameter restored afterwards.
pub fn fd_worst(analytic: &[f64], base: &[f64], mut loss_at: impl FnMut(usize, f64) -> f64) -> f64 {
    assert_eq!(analytic.len(), base.len());
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        let lp = loss_at(k, base[k] + FD_STEP);
        let lm = loss_at(k, base[k] - FD_STEP);
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}

// Inputs

pub fn random_transitions(n: usize, state_dim: usize, action_dim: usize, seed: u64) -> Vec<Transition> {
    let mut rng = substream(seed, "test.transitions");
    (0..n)
        .map(|i| Transition {
            state: (0..state_dim).map(|_| normal(&mut rng) as f32).collect(),
            action: (0..action_dim).map(|_| uniform(&mut rng, -1.0, 1.0) as f32).collect(),
            reward: normal(&mut rng) as f32,
            next_state: (0..state_dim).map(|_| normal(&mut rng) as f32).collect(),
            not_terminal: i % 7 != 3,
        })
        .collect()
}

pub fn random_batch(n: usize, state_dim: usize, action_dim: usize, seed: u64) -> Batch<f64> {
    Batch::from_transitions(&random_transitions(n, state_dim, action_dim, seed)).unwrap()
}

// Reference returns

pub const REFERENCE_EPISODES: u32 = 200;
pub const REFERENCE_SEED: u64 = 12345;

/// Mean returns of the scripted controller and of uniform random actions.
pub fn reference_returns(env: &str) -> (f64, f64) {
    let scripted = scripted_controller(env).unwrap();
    let random = RandomPolicy::new(make_env(env).unwrap().spec().action_dim, 1);
    let run = |p: &dyn Policy| mean(&evaluate(p, env, REFERENCE_EPISODES, REFERENCE_SEED, 0).unwrap());
    (run(scripted.as_ref()), run(&random))
}

/// Return at `fraction` of the way from random to scripted.
pub fn threshold(env: &str, fraction: f64) -> f64 {
    let (scripted, random) = reference_returns(env);
    random + fraction * (scripted - random)
}

// Prioritised sampling

/// Index whose cumulative-priority interval contains `u · Σp`, by linear scan.
pub fn linear_scan(priorities: &[f64], u: f64) -> usize {
    let total: f64 = priorities.iter().sum();
    let mass = u * total;
    let mut acc = 0.0;
    for (i, p) in priorities.iter().enumerate() {
        acc += p;
        if mass < acc {
            return i;
        }
    }
    priorities.len() - 1
}

pub fn chi_square(counts: &[u64], probabilities: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probabilities)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper 0.001 quantile of the chi-square distribution with 63 degrees of
/// freedom.
pub const CHI2_63_P001: f64 = 103.442;

// Reference TD3

pub struct Dense {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: vec![vec![0.0; inp]; out],
            b: vec![0.0; out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// ReLU MLP with a linear or tanh head, one sample at a time.
pub struct RefNet {
    pub layers: Vec<Dense>,
    pub tanh_out: bool,
}

struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl RefNet {
    pub fn from_linears(layers: &[td7::nn::Linear<f64>], tanh_out: bool) -> Self {
        let layers = layers
            .iter()
            .map(|l| Dense {
                w: l.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                b: l.bias.to_vec(),
            })
            .collect();
        RefNet { layers, tanh_out }
    }

    fn zeros_like(&self) -> Self {
        RefNet {
            layers: self.layers.iter().map(|l| Dense::zeros(l.w.len(), l.w[0].len())).collect(),
            tanh_out: self.tanh_out,
        }
    }

    fn params_mut(&mut self) -> Vec<&mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().flat_map(|r| r.iter_mut()).chain(l.b.iter_mut()))
            .collect()
    }

    fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().flat_map(|r| r.iter().copied()).chain(l.b.iter().copied()))
            .collect()
    }

    fn forward(&self, x: &[f64]) -> Cache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let z = l.apply(&h);
            h = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else if self.tanh_out {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Cache { inputs, pre, out: h }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).out
    }

    /// Adds this sample's parameter gradient to `grads`; returns `∂L/∂x`.
    fn backward(&self, cache: &Cache, d_out: &[f64], grads: &mut RefNet) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let z = &cache.pre[i];
            let dz: Vec<f64> = if i < last {
                d.iter().zip(z).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect()
            } else if self.tanh_out {
                d.iter().zip(z).map(|(g, z)| g * (1.0 - z.tanh().powi(2))).collect()
            } else {
                d.clone()
            };
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for (o, dzo) in dz.iter().enumerate() {
                g.b[o] += dzo;
                for (j, xj) in x.iter().enumerate() {
                    g.w[o][j] += dzo * xj;
                }
            }
            let l = &self.layers[i];
            d = (0..x.len()).map(|j| dz.iter().enumerate().map(|(o, dzo)| dzo * l.w[o][j]).sum()).collect();
        }
        d
    }

    fn soft_update(&mut self, from: &RefNet, tau: f64) {
        for (t, s) in self.params_mut().into_iter().zip(from.params()) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    fn copy(&self) -> Self {
        let mut c = self.zeros_like();
        for (t, s) in c.params_mut().into_iter().zip(self.params()) {
            *t = s;
        }
        c
    }
}

pub struct RefAdam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl RefAdam {
    pub fn new(lr: f64) -> Self {
        RefAdam {
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn step(&mut self, net: &mut RefNet, grads: &RefNet) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let g = grads.params();
        if self.m.is_empty() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        self.t += 1;
        for (k, p) in net.params_mut().into_iter().enumerate() {
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g[k];
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = self.m[k] / (1.0 - b1.powi(self.t));
            let v_hat = self.v[k] / (1.0 - b2.powi(self.t));
            *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

pub struct RefSample {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub not_done: f64,
}

pub fn ref_samples(batch: &Batch<f64>) -> Vec<RefSample> {
    (0..batch.len())
        .map(|i| RefSample {
            s: batch.state.row(i).to_vec(),
            a: batch.action.row(i).to_vec(),
            r: batch.reward[i],
            s2: batch.next_state.row(i).to_vec(),
            not_done: batch.not_terminal[i],
        })
        .collect()
}

/// Plain TD3: twin critics, clipped double-Q target with externally supplied
/// smoothing noise, MSE critic loss, delayed actor on `Q_1`, Polyak targets.
pub struct RefTd3 {
    pub actor: RefNet,
    pub actor_target: RefNet,
    pub critics: [RefNet; 2],
    pub critic_targets: [RefNet; 2],
    actor_opt: RefAdam,
    critic_opts: [RefAdam; 2],
    pub gamma: f64,
    pub tau: f64,
    pub policy_freq: u64,
    iterations: u64,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

impl RefTd3 {
    pub fn new(actor: RefNet, critics: [RefNet; 2], lr: f64) -> Self {
        RefTd3 {
            actor_target: actor.copy(),
            critic_targets: [critics[0].copy(), critics[1].copy()],
            actor,
            critics,
            actor_opt: RefAdam::new(lr),
            critic_opts: [RefAdam::new(lr), RefAdam::new(lr)],
            gamma: 0.99,
            tau: 0.005,
            policy_freq: 2,
            iterations: 0,
        }
    }

    /// One update; returns the critic loss and, on actor steps, the actor loss.
    pub fn train(&mut self, batch: &[RefSample], noise: &[Vec<f64>]) -> (f64, Option<f64>) {
        self.iterations += 1;
        let n = batch.len() as f64;
        let targets: Vec<f64> = batch
            .iter()
            .zip(noise)
            .map(|(t, eps)| {
                let a2: Vec<f64> = self
                    .actor_target
                    .eval(&t.s2)
                    .iter()
                    .zip(eps)
                    .map(|(a, e)| (a + e).clamp(-1.0, 1.0))
                    .collect();
                let x = concat(&t.s2, &a2);
                let q = self.critic_targets[0].eval(&x)[0].min(self.critic_targets[1].eval(&x)[0]);
                t.r + t.not_done * self.gamma * q
            })
            .collect();

        let mut critic_loss = 0.0;
        for k in 0..2 {
            let mut grads = self.critics[k].zeros_like();
            for (t, y) in batch.iter().zip(&targets) {
                let cache = self.critics[k].forward(&concat(&t.s, &t.a));
                let diff = cache.out[0] - y;
                critic_loss += diff * diff / n;
                self.critics[k].backward(&cache, &[2.0 * diff / n], &mut grads);
            }
            self.critic_opts[k].step(&mut self.critics[k], &grads);
        }

        let mut actor_loss = None;
        if self.iterations % self.policy_freq == 0 {
            let mut grads = self.actor.zeros_like();
            let mut scratch = self.critics[0].zeros_like();
            let mut loss = 0.0;
            let ad = batch[0].a.len();
            for t in batch {
                let pi = self.actor.forward(&t.s);
                let qc = self.critics[0].forward(&concat(&t.s, &pi.out));
                loss -= qc.out[0] / n;
                let d_in = self.critics[0].backward(&qc, &[-1.0 / n], &mut scratch);
                let d_a = &d_in[d_in.len() - ad..];
                self.actor.backward(&pi, d_a, &mut grads);
            }
            self.actor_opt.step(&mut self.actor, &grads);
            for k in 0..2 {
                self.critic_targets[k].soft_update(&self.critics[k], self.tau);
            }
            self.actor_target.soft_update(&self.actor, self.tau);
            actor_loss = Some(loss);
        }
        (critic_loss, actor_loss)
    }
}

//! Measurements behind the quick acceptance checks. Each returns the numbers
//! a check is judged on; callers decide pass or fail.

use ndarray::{Array1, Array2};
use td7::agent::{Agent, AgentConfig, Normalization};
use td7::checkpoint::{AssessConfig, CheckpointController, Decision};
use td7::harness::{preset, run, run_observed, RunConfig};
use td7::nn::{avg_l1_norm, avg_l1_norm_backward, Adam, AdamConfig};
use td7::replay::{LapParams, ReplayBuffer, Transition};
use td7::rng::{normal, substream, uniform};
use td7::sale::{embedding_regression, encoder_loss, EncoderBatch, EncoderConfig, EncoderPair, RegressionKind};

use super::*;

pub const STATE_DIM: usize = 3;
pub const ACTION_DIM: usize = 2;

fn small_agent_config(normalization: Normalization, bc_weight: f64) -> AgentConfig {
    let mut cfg = RunConfig::default().agent_config();
    cfg.hidden_dim = 16;
    cfg.zs_dim = 8;
    cfg.normalization = normalization;
    cfg.bc_weight = bc_weight;
    cfg
}

// Gradients

fn encoder_error(config: EncoderConfig, kind: RegressionKind, with_reward: bool, seed: u64) -> f64 {
    let mut pair = EncoderPair::<f64>::new(config, &mut substream(seed, "test.encoder")).unwrap();
    let batch = random_batch(6, STATE_DIM, ACTION_DIM, seed);
    // The regression target is held fixed, as in training.
    let target = match pair.zsa_dim() {
        d if d == pair.zs_dim() => pair.encode_state(batch.next_state.view()).unwrap(),
        d => Array2::from_shape_fn((6, d), |(i, j)| batch.next_state[[i, j % STATE_DIM]]),
    };
    let reward = with_reward.then(|| batch.reward.view());
    let loss = |p: &EncoderPair<f64>| {
        embedding_regression(p, batch.state.view(), batch.action.view(), target.view(), kind, reward)
            .unwrap()
    };
    let analytic = flat(&loss(&pair).1);
    let base = flat(&pair);
    fd_worst(&analytic, &base, |k, x| {
        set_param(&mut pair, k, x);
        let l = loss(&pair).0;
        set_param(&mut pair, k, base[k]);
        l
    })
}

fn critic_error(normalization: Normalization, huber: bool, seed: u64) -> f64 {
    let mut cfg = small_agent_config(normalization, 0.0);
    cfg.huber_loss = huber;
    let mut agent = Agent::<f64>::new(cfg, STATE_DIM, ACTION_DIM, seed).unwrap();
    let batch = random_batch(6, STATE_DIM, ACTION_DIM, seed);
    let target = Array1::from_shape_fn(6, |i| 2.0 * batch.reward[i] - 0.5);
    let grads = agent.critic_loss_and_grads(&batch, target.view()).unwrap();
    let mut worst = 0.0f64;
    for c in 0..2 {
        let analytic = flat(&grads.value[c]);
        let base = flat(&agent.critics()[c]);
        worst = worst.max(fd_worst(&analytic, &base, |k, x| {
            set_param(&mut agent.critics_mut()[c], k, x);
            let l = agent.critic_loss_and_grads(&batch, target.view()).unwrap().loss;
            set_param(&mut agent.critics_mut()[c], k, base[k]);
            l
        }));
    }
    worst
}

/// The behaviour-cloning weight `λ·|mean Q|` is a constant in the actor
/// loss, so the numeric side freezes it at the unperturbed value.
fn actor_error(normalization: Normalization, lambda: f64, single_q: bool, seed: u64) -> f64 {
    let mut cfg = small_agent_config(normalization, lambda);
    cfg.single_q_actor = single_q;
    let mut agent = Agent::<f64>::new(cfg, STATE_DIM, ACTION_DIM, seed).unwrap();
    let batch = random_batch(6, STATE_DIM, ACTION_DIM, seed);
    let g = agent.actor_loss_and_grads(&batch).unwrap();
    let weight = lambda * g.mean_q.abs();
    let analytic = flat(&g.grads);
    let base = flat(agent.actor());
    let loss = |agent: &Agent<f64>| {
        let mean_q = agent.actor_loss_and_grads(&batch).unwrap().mean_q;
        let pi = agent.policy_actions(batch.state.view()).unwrap();
        let bc = (&pi - &batch.action).mapv(|d| d * d).mean().unwrap();
        -mean_q + weight * bc
    };
    fd_worst(&analytic, &base, |k, x| {
        set_param(agent.actor_mut(), k, x);
        let l = loss(&agent);
        set_param(agent.actor_mut(), k, base[k]);
        l
    })
}

/// Worst relative error per loss.
pub fn gradient_errors() -> Vec<(&'static str, f64)> {
    let enc = EncoderConfig::new(STATE_DIM, ACTION_DIM, 8, 16);
    let mut enc_zsa = enc.clone();
    enc_zsa.normalize_zsa = true;
    let mut enc_reward = enc.clone();
    enc_reward.reward_head = true;
    let mut enc_state = enc.clone();
    enc_state.zsa_dim = STATE_DIM;
    vec![
        ("encoder", encoder_error(enc.clone(), RegressionKind::SquaredError, false, 1)),
        ("encoder, normalised zsa", encoder_error(enc_zsa, RegressionKind::SquaredError, false, 2)),
        ("encoder, reward head", encoder_error(enc_reward, RegressionKind::SquaredError, true, 3)),
        ("encoder, next state", encoder_error(enc_state, RegressionKind::SquaredError, false, 4)),
        ("encoder, cosine", encoder_error(enc, RegressionKind::Cosine, false, 5)),
        ("critic, huber", critic_error(Normalization::AvgL1, true, 6)),
        ("critic, huber, no input norm", critic_error(Normalization::NoPhi, true, 7)),
        ("critic, mse", critic_error(Normalization::AvgL1, false, 8)),
        ("actor, lambda 0", actor_error(Normalization::AvgL1, 0.0, false, 9)),
        ("actor, lambda 0.1", actor_error(Normalization::AvgL1, 0.1, false, 10)),
        ("actor, lambda 0.1, no input norm", actor_error(Normalization::NoPhi, 0.1, false, 11)),
        ("actor, first critic only", actor_error(Normalization::AvgL1, 0.0, true, 12)),
    ]
}

// AvgL1Norm

pub struct NormReport {
    pub unit_error: f64,
    pub scale_error: f64,
    pub gradient_error: f64,
}

pub fn avg_l1_properties(n: usize) -> NormReport {
    let mut rng = substream(7, "test.avg_l1");
    let mut report = NormReport {
        unit_error: 0.0,
        scale_error: 0.0,
        gradient_error: 0.0,
    };
    for _ in 0..n {
        let dim = 1 + (uniform(&mut rng, 0.0, 16.0) as usize);
        let spread = 10f64.powf(uniform(&mut rng, -2.0, 2.0));
        let x = Array2::from_shape_fn((1, dim), |_| spread * normal(&mut rng));
        let y = avg_l1_norm(x.view());
        let mean_abs = y.iter().map(|v| v.abs()).sum::<f64>() / dim as f64;
        report.unit_error = report.unit_error.max((mean_abs - 1.0).abs());

        let c = 10f64.powf(uniform(&mut rng, -3.0, 3.0));
        let ys = avg_l1_norm((&x * c).view());
        let d = ys.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.scale_error = report.scale_error.max(d);

        // Gradient of a random linear read-out of the normalised vector.
        let w = Array2::from_shape_fn((1, dim), |_| normal(&mut rng));
        let analytic = avg_l1_norm_backward(x.view(), w.view());
        let h = 1e-6 * spread;
        for k in 0..dim {
            let read = |delta: f64| {
                let mut xp = x.clone();
                xp[[0, k]] += delta;
                (avg_l1_norm(xp.view()) * &w).sum()
            };
            let numeric = (read(h) - read(-h)) / (2.0 * h);
            let scale = analytic[[0, k]].abs().max(numeric.abs()).max(1.0 / spread);
            report.gradient_error = report.gradient_error.max((analytic[[0, k]] - numeric).abs() / scale);
        }
    }
    report
}

// Prioritised replay

pub struct LapReport {
    pub chi_square: f64,
    pub mismatches: usize,
    pub draws_compared: usize,
}

pub fn lap_distribution(samples: usize) -> LapReport {
    let params = LapParams {
        alpha: 0.4,
        min_priority: 1.0,
        capacity: 64,
    };
    let mut buffer = ReplayBuffer::new(1, 1, params).unwrap();
    for i in 0..64 {
        buffer
            .insert(&Transition {
                state: vec![i as f32],
                action: vec![0.0],
                reward: 0.0,
                next_state: vec![0.0],
                not_terminal: true,
            })
            .unwrap();
    }
    let mut rng = substream(11, "test.lap");
    let abs_td: Vec<f64> = (0..64).map(|_| uniform(&mut rng, 0.0, 20.0)).collect();
    let indices: Vec<usize> = (0..64).collect();
    buffer.update_priorities(&indices, &abs_td).unwrap();

    let expected: Vec<f64> = abs_td.iter().map(|d| d.powf(0.4).max(1.0)).collect();
    let total: f64 = expected.iter().sum();
    let probabilities: Vec<f64> = expected.iter().map(|p| p / total).collect();

    let mut counts = vec![0u64; 64];
    let mut draw_rng = substream(12, "test.lap.draws");
    for i in buffer.sample_indices(samples, &mut draw_rng).unwrap() {
        counts[i] += 1;
    }

    let mut shared = substream(13, "test.lap.shared");
    let draws: Vec<f64> = (0..10_000).map(|_| uniform(&mut shared, 0.0, 1.0)).collect();
    let tree = buffer.indices_for_draws(&draws).unwrap();
    let mismatches = draws
        .iter()
        .zip(&tree)
        .filter(|(u, i)| linear_scan(&expected, **u) != **i)
        .count();
    LapReport {
        chi_square: chi_square(&counts, &probabilities),
        mismatches,
        draws_compared: draws.len(),
    }
}

// Value clipping

pub struct ClipReport {
    pub train_steps: u64,
    pub outside_bounds: u64,
    pub shrinking_bounds: u64,
    pub broken_chain: u64,
    pub final_range: (f64, f64),
}

/// Slack for bounds stored in f64 but applied in f32.
pub const CLIP_SLACK: f64 = 1e-6;

pub fn clipping_run(dir: &std::path::Path) -> ClipReport {
    let mut cfg = RunConfig::default();
    cfg.env = "point_mass_2d".into();
    cfg.total_steps = 5_000;
    cfg.eval_frequency = 2_500;
    cfg.eval_episodes = 2;
    cfg.out = dir.join("clip.jsonl");
    let mut report = ClipReport {
        train_steps: 0,
        outside_bounds: 0,
        shrinking_bounds: 0,
        broken_chain: 0,
        final_range: (0.0, 0.0),
    };
    let mut previous = None;
    let slack = |b: f64| CLIP_SLACK * b.abs().max(1.0);
    run_observed(&cfg, &mut |m| {
        report.train_steps += 1;
        let (lo, hi) = (m.bounds_before.q_min, m.bounds_before.q_max);
        if m.clipped_range.0 < lo - slack(lo) || m.clipped_range.1 > hi + slack(hi) {
            report.outside_bounds += 1;
        }
        if m.bounds_after.q_min > lo || m.bounds_after.q_max < hi {
            report.shrinking_bounds += 1;
        }
        if previous.is_some_and(|p| p != m.bounds_before) {
            report.broken_chain += 1;
        }
        previous = Some(m.bounds_after);
        report.final_range = (m.bounds_after.q_min, m.bounds_after.q_max);
    })
    .unwrap();
    report
}

// TD3 reduction

pub struct Td3Report {
    pub batches: usize,
    pub actor_steps: usize,
    pub critic_error: f64,
    pub actor_error: f64,
}

fn close(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn td3_reduction(batches: usize) -> Td3Report {
    let mut cfg = RunConfig::default();
    preset("td3").unwrap().apply(&mut cfg).unwrap();
    let mut ac = cfg.agent_config();
    ac.hidden_dim = 32;
    assert!(!ac.sale && !ac.huber_loss && !ac.clipping && ac.single_q_actor);
    assert_eq!((ac.discount, ac.tau, ac.policy_freq), (0.99, 0.005, 2));
    assert_eq!((ac.target_policy_noise, ac.noise_clip), (0.2, 0.5));
    let lr = ac.adam.learning_rate;
    let mut agent = Agent::<f64>::new(ac, STATE_DIM, ACTION_DIM, 21).unwrap();
    assert!(agent.actor().phi.is_none() && agent.critics().iter().all(|c| c.phi.is_none()));
    let mut oracle = RefTd3::new(
        RefNet::from_linears(agent.actor().trunk.layers(), true),
        [
            RefNet::from_linears(agent.critics()[0].trunk.layers(), false),
            RefNet::from_linears(agent.critics()[1].trunk.layers(), false),
        ],
        lr,
    );
    let mut report = Td3Report {
        batches,
        actor_steps: 0,
        critic_error: 0.0,
        actor_error: 0.0,
    };
    for b in 0..batches {
        let batch = random_batch(32, STATE_DIM, ACTION_DIM, 1000 + b as u64);
        let out = agent.train_on_batch(&batch).unwrap();
        let noise: Vec<Vec<f64>> = out.target.next.noise.rows().into_iter().map(|r| r.to_vec()).collect();
        let (critic, actor) = oracle.train(&ref_samples(&batch), &noise);
        report.critic_error = report.critic_error.max(close(out.metrics.critic_loss, critic));
        match (out.metrics.actor_loss, actor) {
            (Some(a), Some(b)) => {
                report.actor_steps += 1;
                report.actor_error = report.actor_error.max(close(a, b));
            }
            (None, None) => {}
            _ => report.actor_error = f64::INFINITY,
        }
    }
    report
}

// Encoder overfit

/// Settings for the overfit check: point-mass sized inputs and a learning
/// rate high enough for the moving target to settle within the budget.
pub const OVERFIT_ZS: usize = 8;
pub const OVERFIT_HIDDEN: usize = 128;
pub const OVERFIT_LR: f64 = 3e-3;

/// Encoder loss before each of `steps` Adam updates on one fixed batch.
pub fn encoder_overfit(steps: usize) -> Vec<f64> {
    let batch = random_batch(32, 4, 2, 31);
    let config = EncoderConfig::new(4, 2, OVERFIT_ZS, OVERFIT_HIDDEN);
    let mut pair = EncoderPair::<f64>::new(config, &mut substream(31, "test.overfit")).unwrap();
    let mut opt = Adam::new(AdamConfig {
        learning_rate: OVERFIT_LR,
        ..AdamConfig::default()
    });
    let eb = EncoderBatch {
        state: batch.state.view(),
        action: batch.action.view(),
        reward: batch.reward.view(),
        next_state: batch.next_state.view(),
        next_action: None,
    };
    let mut losses: Vec<f64> = (0..steps)
        .map(|_| {
            let (loss, grads) = encoder_loss(&pair, &eb).unwrap();
            opt.step(&mut pair, &grads).unwrap();
            loss
        })
        .collect();
    losses.push(encoder_loss(&pair, &eb).unwrap().0);
    losses
}

// Checkpoint controller

pub struct CheckpointReport {
    pub perf_decreases: u64,
    pub termination_mismatches: u64,
    pub perf_mismatches: u64,
    pub transitions: u64,
    pub reset_exact: bool,
    pub drained_vs_recorded: (u64, u64),
    pub run_train_vs_env: Vec<(u64, u64)>,
}

pub fn checkpoint_streams(dir: &std::path::Path) -> CheckpointReport {
    let mut report = CheckpointReport {
        perf_decreases: 0,
        termination_mismatches: 0,
        perf_mismatches: 0,
        transitions: 0,
        reset_exact: true,
        drained_vs_recorded: (0, 0),
        run_train_vs_env: Vec::new(),
    };
    let mut rng = substream(41, "test.checkpoint");
    let (mut drained, mut recorded) = (0u64, 0u64);
    for stream in 0..40u64 {
        let cfg = AssessConfig {
            late_episodes: 2 + (stream % 5) as u32,
            ..AssessConfig::default()
        };
        let mut ctl = CheckpointController::<u64>::new(cfg.clone()).unwrap();
        let mut oracle_perf = f64::NEG_INFINITY;
        let mut running_min = f64::INFINITY;
        let mut in_phase = 0u32;
        let mut t = 0u64;
        let mut last_perf = ctl.checkpoint_perf();
        let drift = uniform(&mut rng, -0.5, 2.0);
        let mut fired = 0;
        let mut late = false;
        for episode in 0..3000u64 {
            let len = 50 + (uniform(&mut rng, 0.0, 950.0) as u64);
            let reward = drift * episode as f64 + 100.0 * normal(&mut rng);
            t += len;
            recorded += len;
            let budget = if late { cfg.late_episodes } else { cfg.early_episodes };
            running_min = running_min.min(reward);
            in_phase += 1;
            let expect_done = in_phase >= budget || running_min <= oracle_perf;
            let decision = ctl.record_episode(reward, len).unwrap();
            if (decision == Decision::AssessmentDone) != expect_done {
                report.termination_mismatches += 1;
            }
            if decision == Decision::AssessmentDone {
                if in_phase >= budget && running_min >= oracle_perf {
                    oracle_perf = running_min;
                }
                ctl.finalize_assessment(|| episode).unwrap();
                drained += ctl.drain_training(|| Ok(())).unwrap();
                if ctl.checkpoint_perf() < last_perf {
                    report.perf_decreases += 1;
                }
                let before = ctl.checkpoint_perf();
                let expect_fire = !late && t >= cfg.early_timesteps;
                let fired_now = ctl.phase_transition_check(t);
                report.reset_exact &= fired_now == expect_fire;
                if fired_now {
                    fired += 1;
                    report.transitions += 1;
                    report.reset_exact &= ctl.checkpoint_perf() == before * cfg.reset_weight;
                }
                if expect_fire {
                    late = true;
                    oracle_perf *= cfg.reset_weight;
                }
                if ctl.checkpoint_perf() != oracle_perf {
                    report.perf_mismatches += 1;
                }
                last_perf = ctl.checkpoint_perf();
                running_min = f64::INFINITY;
                in_phase = 0;
            }
        }
        // Episodes of a phase still open at the end were never drained.
        recorded -= ctl.timesteps_since_training();
        report.reset_exact &= fired == 1;
    }
    report.drained_vs_recorded = (drained, recorded);

    for (env, seed) in [("line_walk", 1u64), ("point_mass_2d", 2)] {
        let mut cfg = RunConfig::default();
        cfg.env = env.into();
        cfg.seed = seed;
        cfg.total_steps = 3_000;
        cfg.eval_frequency = 1_000;
        cfg.eval_episodes = 1;
        cfg.agent.initial_random_steps = 500;
        cfg.agent.hidden_dim = 16;
        cfg.agent.zs_dim = 8;
        cfg.agent.batch_size = 16;
        cfg.checkpoint.early_timesteps = 1_500;
        cfg.out = dir.join(format!("ckpt_{env}.jsonl"));
        let s = run(&cfg).unwrap();
        report
            .run_train_vs_env
            .push((s.train_steps, s.env_steps - s.warmup_end.unwrap_or(s.env_steps)));
    }
    report
}

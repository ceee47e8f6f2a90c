use std::path::Path;

use td7::agent::{Agent, Policy};
use td7::harness::{run, RunConfig};
use td7::replay::ReplayBuffer;

fn tiny(dir: &Path, name: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.env = "point_mass_2d".into();
    cfg.seed = seed;
    cfg.total_steps = 1_500;
    cfg.eval_frequency = 500;
    cfg.eval_episodes = 2;
    cfg.agent.initial_random_steps = 300;
    cfg.agent.hidden_dim = 16;
    cfg.agent.zs_dim = 8;
    cfg.agent.batch_size = 16;
    cfg.checkpoint.early_timesteps = 800;
    cfg.out = dir.join(name);
    cfg
}

#[test]
fn identical_runs_write_identical_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    for precision in ["f32", "f64"] {
        let mut a = tiny(dir.path(), "a.jsonl", 3);
        let mut b = tiny(dir.path(), "b.jsonl", 3);
        a.set("precision", precision).unwrap();
        b.set("precision", precision).unwrap();
        run(&a).unwrap();
        run(&b).unwrap();
        let (ba, bb) = (std::fs::read(&a.out).unwrap(), std::fs::read(&b.out).unwrap());
        assert!(!ba.is_empty());
        assert_eq!(ba, bb, "{precision} runs differ");
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(dir.path(), "a.jsonl", 1);
    let b = tiny(dir.path(), "b.jsonl", 2);
    run(&a).unwrap();
    run(&b).unwrap();
    assert_ne!(std::fs::read(&a.out).unwrap(), std::fs::read(&b.out).unwrap());
}

#[test]
fn snapshot_round_trip_preserves_parameters_and_actions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "unused.jsonl", 5);
    let ac = cfg.agent_config();
    let mut agent = Agent::<f32>::new(ac.clone(), 4, 2, 5).unwrap();
    let mut buffer = ReplayBuffer::new(4, 2, cfg.lap_params()).unwrap();
    for t in support_transitions() {
        buffer.insert(&t).unwrap();
    }
    for _ in 0..300 {
        agent.train_step(&mut buffer).unwrap();
    }
    let checkpoint = agent.policy_snapshot();
    let path = dir.path().join("agent.bin");
    agent.save(&path, Some(&checkpoint)).unwrap();

    let mut restored = Agent::<f32>::new(ac, 4, 2, 99).unwrap();
    let loaded = restored.load(&path).unwrap().expect("checkpoint saved");
    assert_eq!(agent.to_bytes(Some(&checkpoint)), restored.to_bytes(Some(&loaded)));
    assert_eq!(agent.training_steps(), restored.training_steps());
    let s = [0.3f32, -0.2, 0.1, 0.0];
    assert_eq!(checkpoint.act(&s).unwrap(), loaded.act(&s).unwrap());

}

#[test]
fn corrupted_snapshots_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let agent = Agent::<f32>::new(cfg.agent_config(), 4, 2, 0).unwrap();
    let path = dir.path().join("agent.bin");
    agent.save(&path, None).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();

    let mut other = Agent::<f32>::new(cfg.agent_config(), 3, 2, 0).unwrap();
    assert!(other.load(&path).is_err(), "state width mismatch accepted");

    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let mut same = Agent::<f32>::new(cfg.agent_config(), 4, 2, 0).unwrap();
    assert!(same.load(&path).is_err(), "bad magic accepted");

    let mut f64_agent = Agent::<f64>::new(cfg.agent_config(), 4, 2, 0).unwrap();
    agent.save(&path, None).unwrap();
    assert!(f64_agent.load(&path).is_err(), "precision mismatch accepted");
}

fn support_transitions() -> Vec<td7::replay::Transition> {
    (0..200)
        .map(|i| {
            let x = i as f32 / 200.0;
            td7::replay::Transition {
                state: vec![x, -x, 0.5 * x, 1.0 - x],
                action: vec![(3.0 * x).sin(), (5.0 * x).cos()],
                reward: x - 0.5,
                next_state: vec![x + 0.01, -x, 0.5 * x, 0.99 - x],
                not_terminal: i % 50 != 49,
            }
        })
        .collect()
}

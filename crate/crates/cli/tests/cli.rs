use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to finish in about a second
env = line_walk
total_steps = 600
eval_frequency = 300
eval_episodes = 2
agent.initial_random_steps = 100
agent.batch_size = 16
agent.hidden_dim = 16
agent.zs_dim = 8
checkpoint.early_timesteps = 300
lap.alpha = 0.2
";

fn td7(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_td7"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn td7")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("c.cfg");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn train_online_writes_metrics_at_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("m.jsonl");
    let o = td7(&["train-online", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = lines(&out);
    assert_eq!(recs.len(), 2);
    assert!(recs[0].contains("\"env_step\":300"));
    assert!(recs[0].contains("\"wall_time\":null"));
}

#[test]
fn set_overrides_file_values_and_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train-online", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = td7(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&a, &["--set", "lap.alpha=0.4"]);
    run(&b, &["--set", "lap.alpha=0.4", "--set", "metrics.wall_time=true"]);
    assert!(!lines(&b)[0].contains("\"wall_time\":null"));
    // Same override, same seed: identical learning curves.
    let strip = |l: &str| l.split("\"wall_time\"").next().unwrap().to_string();
    assert_eq!(lines(&a).iter().map(|l| strip(l)).collect::<Vec<_>>(), lines(&b).iter().map(|l| strip(l)).collect::<Vec<_>>());
    // A different alpha changes sampling, so the curves diverge.
    let c = dir.path().join("c.jsonl");
    run(&c, &[]);
    assert_ne!(lines(&a), lines(&c));
}

#[test]
fn unknown_key_prints_usage_and_fails() {
    let o = td7(&["train-online", "--set", "lap.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("lap.bogus"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_subcommand_fails_with_usage() {
    let o = td7(&["train-sideways"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn offline_pipeline_and_snapshot_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("lw.bin");
    let o = td7(&["gen-dataset", "--env", "line_walk", "--transitions", "500", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("500 transitions"));

    let out = dir.path().join("off.jsonl");
    let snap = dir.path().join("agent.bin");
    let o = td7(&[
        "train-offline",
        "--config",
        &cfg,
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--save",
        snap.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(lines(&out).len(), 2);

    let o = td7(&["evaluate", "--config", &cfg, "--policy", snap.to_str().unwrap(), "--episodes", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean return"));

    let o = td7(&["evaluate", "--env", "point_mass_2d", "--policy", "scripted", "--episodes", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("point_mass_2d scripted"));
}

#[test]
fn ablate_runs_each_preset_and_plot_renders_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("abl");
    let o = td7(&["ablate", "no_lap", "--config", &cfg, "--seeds", "2", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = out.join("no_lap/seed0.jsonl");
    let b = out.join("no_lap/seed1.jsonl");
    assert_eq!(lines(&a).len(), 2);
    assert_eq!(lines(&b).len(), 2);
    assert!(stdout(&o).contains("no_lap"));

    let svg = dir.path().join("curves.svg");
    let o = td7(&["plot", a.to_str().unwrap(), b.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);
    assert!(text.contains("no_lap/seed1"));
}

#[test]
fn ablate_list_names_grids_and_presets() {
    let o = td7(&["ablate", "--list"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["main", "components", "td3", "target_reward", "end_to_end_10"] {
        assert!(s.contains(name), "missing {name}");
    }
    let o = td7(&["ablate", "no_such_grid"]);
    assert_eq!(o.status.code(), Some(2));
}

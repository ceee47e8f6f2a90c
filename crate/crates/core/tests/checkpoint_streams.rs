mod support;

use proptest::prelude::*;
use support::criteria::checkpoint_streams;
use td7::checkpoint::{AssessConfig, CheckpointController, Decision};

#[test]
fn controller_follows_its_contract_on_synthetic_streams() {
    let dir = tempfile::tempdir().unwrap();
    let r = checkpoint_streams(dir.path());
    assert_eq!(r.perf_decreases, 0, "checkpoint score fell within a phase");
    assert_eq!(r.termination_mismatches, 0, "early termination disagreed with the running min");
    assert_eq!(r.perf_mismatches, 0, "checkpoint score disagreed with the oracle");
    assert_eq!(r.transitions, 40);
    assert!(r.reset_exact, "reset weight not applied exactly once at the crossing");
    assert_eq!(r.drained_vs_recorded.0, r.drained_vs_recorded.1);
    for (train, env) in r.run_train_vs_env {
        assert_eq!(train, env);
    }
}

proptest! {
    #[test]
    fn mean_criterion_terminates_only_below_the_checkpoint(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..60),
        budget in 1u32..8,
    ) {
        let cfg = AssessConfig {
            criterion: "mean".into(),
            late_episodes: budget,
            early_timesteps: 0,
            ..AssessConfig::default()
        };
        let mut ctl = CheckpointController::<u32>::new(cfg).unwrap();
        ctl.phase_transition_check(0);
        let (mut sum, mut n) = (0.0, 0u32);
        for r in rewards {
            sum += r;
            n += 1;
            let perf = ctl.checkpoint_perf();
            let done = ctl.record_episode(r, 10).unwrap() == Decision::AssessmentDone;
            prop_assert_eq!(done, n >= budget || sum / f64::from(n) < perf);
            if done {
                let updated = ctl.finalize_assessment(|| n).unwrap();
                prop_assert_eq!(updated, n >= budget && sum / f64::from(n) >= perf);
                prop_assert!(ctl.checkpoint_perf() >= perf);
                sum = 0.0;
                n = 0;
            }
        }
    }

    #[test]
    fn without_early_termination_every_phase_runs_its_budget(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..60),
        budget in 1u32..8,
    ) {
        let cfg = AssessConfig {
            late_episodes: budget,
            early_timesteps: 0,
            early_termination: false,
            ..AssessConfig::default()
        };
        let mut ctl = CheckpointController::<u32>::new(cfg).unwrap();
        ctl.phase_transition_check(0);
        let mut n = 0;
        for r in rewards {
            n += 1;
            let done = ctl.record_episode(r, 1).unwrap() == Decision::AssessmentDone;
            prop_assert_eq!(done, n == budget);
            if done {
                ctl.finalize_assessment(|| n).unwrap();
                prop_assert_eq!(ctl.drain_training(|| Ok(())).unwrap(), u64::from(budget));
                n = 0;
            }
        }
    }
}

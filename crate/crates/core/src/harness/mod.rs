//! Run orchestration: configuration, ablation presets, training loops,
//! evaluation, metric files and plots.

mod ablation;
mod config;
mod plot;
mod run;

pub use ablation::{grid, preset, presets, AblationPreset, KeyPreset, GRIDS};
pub use config::{parse_override, parse_pairs, profile, Ablations, Mode, Precision, Profile, RunConfig, PROFILES};
pub use plot::{render_svg, Series};
pub use run::{
    evaluate, load_policy, mean, normalized_score, read_metrics, run, run_observed, run_offline, run_online, MetricRecord,
    MetricSink, RandomPolicy, RunSummary,
};

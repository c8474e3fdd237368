//! Experiment orchestration: configuration, training runs, the reward-flip
//! study, the variant ablation, curves and the theory checks.

mod config;
mod curves;
mod experiment;
mod theory;

pub use config::{AgentOverrides, ExperimentConfig, RelabelOverride, Variant};
pub use curves::{emit_curves, load_series, parse_polylines, render_svg, Series};
pub use experiment::{
    aggregate_header, read_metrics_csv, run_ablation, run_experiment, run_flip_study, run_seed,
    streams, write_aggregate_csv, write_metrics_csv, ArmSummary, ExperimentOutput, FlipRow,
    MetricsRow, SeedRun, DEFAULT_FLIP_RATES, METRICS_HEADER,
};
pub use theory::{verify_theory, GridCheck, TheoryReport, VerifyConfig};

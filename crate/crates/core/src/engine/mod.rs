//! Experiment configuration, the simulation loop, metrics and regret.

pub mod config;
pub mod metrics;
pub mod regret;
pub mod sim;

pub use config::{
    apply_override, parse_override, ExperimentConfig, OutputSpec, Params, PlacementSpec, SweepSpec,
    WorkloadSpec,
};
pub use metrics::{
    csv_header, mean_std, NodeCost, PathRecord, RunSummary, SlotMetrics, FIXED_COLUMNS,
};
pub use regret::{regret_oracle, KeyRegret, LossRecord, RegretPoint, RegretTracker};
pub use sim::{
    build_source, placement_name, run_dir, run_experiment, run_seed, RunOutput, Simulation,
};

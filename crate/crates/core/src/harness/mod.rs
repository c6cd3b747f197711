//! Training loop, schedules, metrics and evaluation.

mod config;
mod metrics;
mod schedule;
pub mod trace;
mod trainer;

pub use config::{NoiseConfig, ScheduleConfig, TrainConfig};
pub use metrics::{sig9, EpisodeWindow, MetricsRow, MetricsWriter, HEADER, LINK_COLUMNS};
pub use schedule::schedules;
pub use trace::{Observer, TraceEvent};
pub use trainer::{
    agent_specs, baseline_random, build_policies, evaluate, evaluate_policies, load_policies,
    run_training, stream, substream, wire_schemas, AgentPolicy, EpisodeSummary, EvalReport,
    RunSummary, StepReport, Trainer,
};

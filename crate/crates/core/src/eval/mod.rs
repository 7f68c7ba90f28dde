//! Metrics, experiment configuration and orchestration, checkpoints and reports.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod metrics;

pub use checkpoint::Checkpoint;
pub use config::{apply_ablation, AblationFlags, ArchitectureConfig, EffectiveSetup, ExperimentConfig, Method};
pub use experiment::{
    evaluate_checkpoint, read_report, run_experiment, run_on_dataset, write_outputs, ExperimentOutput,
    MetricsReport, RepeatOutcome,
};
pub use metrics::{compute_metrics, macro_f1, subgroup_report, Confusion, DiseaseMetrics, MeanStd};

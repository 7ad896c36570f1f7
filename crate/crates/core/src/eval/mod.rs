//! Metrics, the synthetic benchmark and the end-to-end experiment runner.
pub mod config;
mod experiment;
mod metrics;
mod report;
mod synth;

pub use config::{ConfigError, DataSource, ExperimentConfig, NetworkChoice};
pub use experiment::{
    modality_subset_fusion, run_experiment, table_subsets, ExperimentError, ExperimentReport, ModalityRun, Stage,
    SubsetRow, VALIDATION_SEED_SALT,
};
pub use metrics::{confusion, evaluate, metrics, ClassMetrics, ConfusionMatrix, MetricsError, MetricsReport};
pub use report::{parse_report_csv, render_csv, render_text};
pub use synth::{synth_generate, write_dataset, SynthConfig, SynthError};

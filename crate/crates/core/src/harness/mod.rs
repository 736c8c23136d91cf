//! Training loops, the two experiment protocols and their reports.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod train;

pub use config::{heads_label, ExperimentConfig, Phase, Precision, TrainConfig};
pub use experiments::{prepare_datasets, recompute_accuracy, Bundle, ExperimentData, RunRecord, Runner};
pub use metrics::{convergence_epoch, mean_std, MetricsLog, MetricsRow, METRICS_HEADER};
pub use report::{summarize, write_report, SummaryRow};
pub use train::{accuracy, evaluate_ae, policy_inputs, train_ae, train_policy, AeRun, LatentSet, PolicyRun};

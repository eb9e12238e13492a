//! Dataset files, model checkpoints, the leave-one-subject-out harness and
//! the `bmfnet` command line, on top of `bmfnet-core`.

pub mod cli;
pub mod complexity;
pub mod config;
pub mod error;
pub mod export;
pub mod harness;
pub mod metrics;
pub mod store;

pub use bmfnet_core as core;
pub use config::{desk_training, DatasetParams, ModelParams, Profile, RunConfig, VariantPlan};
pub use error::{Error, Result};
pub use harness::{run_loso, run_loso_with, write_report, FoldJob, FoldRow, FoldRun, LosoRun, MetricsReport, VariantSummary};
pub use metrics::{compute_metrics, Confusion, Metrics};

//! Experiment plumbing: JSON run configs, the training runner with its
//! metrics CSV and checkpoints, run comparison and cost reports.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod cost_report;
pub mod runner;

pub use checkpoint::{encode_checkpoint, write_checkpoint, Checkpoint};
pub use compare::{compare, Comparison, SummaryRow};
pub use config::{DatasetSpec, Precision, RunConfig};
pub use cost_report::{cost_tables, CostOptions, CostTables};
pub use runner::{build_network, read_metrics, run, MetricsRow, RunSummary};

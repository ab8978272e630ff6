//! Config-driven experiment matrix and CSV reports.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{
    cell_seed, cells, obtain_dataset, run_cell, run_experiment, run_experiment_with, run_matrix,
    Cell, RunOptions,
};
pub use report::{emit_report, summarize, ResultRow, ResultTable, SummaryRow};

//! Scenario configuration, campaign execution and result reporting.

mod compare;
mod config;
mod report;
mod runner;

pub use compare::{
    compare_policies, run_cells, run_policies, sweep_seeds, AverageRow, Comparison, MeanStd,
    PolicyRow, SeedStat, SeedSweep,
};
pub use config::{ApplicationSpec, ConfigError, ScenarioConfig};
pub use report::{FaultProbs, NodeBreakdown, Report, ReportBody, ReportError, ReportFormat};
pub use runner::{run_cell, CellResult, CopyCounts, NodeMetrics, RunError, RunMetrics};

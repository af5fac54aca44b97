use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::compare::{Comparison, SeedSweep};
use super::config::ScenarioConfig;
use super::runner::NodeMetrics;
use crate::fault::{transient_fault_prob, transient_rate};
use crate::workload::Application;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Text,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(format!(
                "unknown format {other:?}, expected csv, json or text"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv output is not valid utf-8")]
    Utf8,
}

/// Transient-fault probability at the shortest, mean and longest task
/// duration across the scenario's applications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultProbs {
    pub lambda: f64,
    pub durations: [f64; 3],
    pub probs: [f64; 3],
}

impl FaultProbs {
    pub fn of(cfg: &ScenarioConfig, apps: &[Application]) -> FaultProbs {
        let lambda = transient_rate(&cfg.transient).unwrap_or(f64::NAN);
        let d: Vec<f64> = apps
            .iter()
            .flat_map(|a| a.real_tasks().map(|t| t.duration))
            .collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let durations = [min, mean, max];
        FaultProbs {
            lambda,
            durations,
            probs: durations.map(|t| transient_fault_prob(lambda, t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBreakdown {
    pub application: String,
    pub nodes: Vec<NodeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportBody {
    Run {
        comparison: Comparison,
        per_node: Vec<NodeBreakdown>,
    },
    Compare {
        comparison: Comparison,
    },
    Sweep {
        sweep: SeedSweep,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub faults: FaultProbs,
    pub body: ReportBody,
}

impl Report {
    pub fn new(
        scenario: &ScenarioConfig,
        seed: u64,
        apps: &[Application],
        body: ReportBody,
    ) -> Report {
        Report {
            scenario: scenario.clone(),
            seed,
            faults: FaultProbs::of(scenario, apps),
            body,
        }
    }

    pub fn from_json(text: &str) -> Result<Report, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, ReportError> {
        match format {
            ReportFormat::Json => Ok(serde_json::to_string_pretty(self)? + "\n"),
            ReportFormat::Csv => self.csv(),
            ReportFormat::Text => Ok(self.text()),
        }
    }

    fn csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        match &self.body {
            ReportBody::Run { comparison, .. } | ReportBody::Compare { comparison } => {
                w.write_record([
                    "application",
                    "policy",
                    "pof",
                    "failed",
                    "applications",
                    "mandatory",
                    "on_demand",
                    "overhead",
                    "total",
                    "normalized",
                    "per_task_round",
                    "disputes",
                    "isolations",
                    "alerts",
                    "elections",
                    "sweeps",
                    "trace_hash",
                ])?;
                for r in &comparison.rows {
                    let c = r.copies;
                    w.write_record([
                        r.application.clone(),
                        r.policy.label().to_string(),
                        r.pof.to_string(),
                        r.failed_applications.to_string(),
                        r.applications_total.to_string(),
                        c.mandatory.to_string(),
                        c.on_demand.to_string(),
                        c.protocol_overhead.to_string(),
                        c.total.to_string(),
                        r.normalized_copies.to_string(),
                        r.copies_per_task_round.to_string(),
                        r.disputes.to_string(),
                        r.isolations.to_string(),
                        r.alerts.to_string(),
                        r.elections.to_string(),
                        r.sweeps.to_string(),
                        format!("{:016x}", r.trace_hash),
                    ])?;
                }
                for a in &comparison.averages {
                    let mut rec = vec![String::new(); 17];
                    rec[0] = "average".into();
                    rec[1] = a.policy.label().into();
                    rec[2] = a.pof.to_string();
                    rec[9] = a.normalized_copies.to_string();
                    w.write_record(&rec)?;
                }
            }
            ReportBody::Sweep { sweep } => {
                w.write_record([
                    "application",
                    "policy",
                    "pof_mean",
                    "pof_std",
                    "normalized_mean",
                    "normalized_std",
                ])?;
                for s in &sweep.stats {
                    w.write_record([
                        s.application.clone(),
                        s.policy.label().to_string(),
                        s.pof.mean.to_string(),
                        s.pof.std.to_string(),
                        s.normalized_copies.mean.to_string(),
                        s.normalized_copies.std.to_string(),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        String::from_utf8(bytes).map_err(|_| ReportError::Utf8)
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let f = &self.faults;
        let _ = writeln!(
            out,
            "scenario {}  seed {}  nodes {}x{}  runs {}",
            self.scenario.name,
            self.seed,
            self.scenario.n_nodes,
            self.scenario.cores_per_node,
            self.scenario.runs_per_node
        );
        let _ = writeln!(
            out,
            "faulty cores per node {:?}",
            self.scenario.faulty_core_counts
        );
        let _ = writeln!(out, "lambda {:.4e}/s", f.lambda);
        for (label, (t, p)) in ["min", "mean", "max"]
            .iter()
            .zip(f.durations.iter().zip(f.probs))
        {
            let _ = writeln!(out, "  F({label} = {t:.3} s) = {p:.4e}");
        }
        out.push('\n');
        match &self.body {
            ReportBody::Run {
                comparison,
                per_node,
            } => {
                comparison_table(&mut out, comparison);
                for b in per_node {
                    let _ = writeln!(out, "\n{} per node", b.application);
                    let _ = writeln!(
                        out,
                        "{:>4} {:>10} {:>10} {:>8} {:>8} {:>8}",
                        "node", "copies", "on_demand", "failed", "disputes", "disables"
                    );
                    for n in &b.nodes {
                        let _ = writeln!(
                            out,
                            "{:>4} {:>10} {:>10} {:>8} {:>8} {:>8}",
                            n.node,
                            n.copies.total,
                            n.copies.on_demand,
                            n.failed_applications,
                            n.disputes,
                            n.disables
                        );
                    }
                }
            }
            ReportBody::Compare { comparison } => comparison_table(&mut out, comparison),
            ReportBody::Sweep { sweep } => {
                let _ = writeln!(out, "seeds {:?}", sweep.seeds);
                let _ = writeln!(
                    out,
                    "{:<12} {:<8} {:>20} {:>20}",
                    "application", "policy", "pof", "normalized copies"
                );
                for s in &sweep.stats {
                    let _ = writeln!(
                        out,
                        "{:<12} {:<8} {:>9.4} ± {:<8.4} {:>9.4} ± {:<8.4}",
                        s.application,
                        s.policy.label(),
                        s.pof.mean,
                        s.pof.std,
                        s.normalized_copies.mean,
                        s.normalized_copies.std
                    );
                }
            }
        }
        out
    }
}

fn comparison_table(out: &mut String, c: &Comparison) {
    let _ = writeln!(
        out,
        "{:<12} {:<8} {:>8} {:>10} {:>10} {:>9} {:>10} {:>8} {:>16}",
        "application",
        "policy",
        "pof",
        "copies",
        "overhead",
        "norm",
        "per task",
        "isolate",
        "trace"
    );
    for r in &c.rows {
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:>8.4} {:>10} {:>10} {:>9.4} {:>10.3} {:>8} {:016x}",
            r.application,
            r.policy.label(),
            r.pof,
            r.copies.total,
            r.copies.protocol_overhead,
            r.normalized_copies,
            r.copies_per_task_round,
            r.isolations,
            r.trace_hash
        );
    }
    let _ = writeln!(out, "\naverage over applications");
    for a in &c.averages {
        let _ = writeln!(
            out,
            "  {:<8} pof {:.4}  normalized copies {:.4}",
            a.policy.label(),
            a.pof,
            a.normalized_copies
        );
    }
}

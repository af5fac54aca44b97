use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::runner::{run_cell, CellResult, CopyCounts, RunError};
use crate::tmr::PolicyKind;
use crate::workload::Application;

/// One (application, policy) line of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub application: String,
    pub policy: PolicyKind,
    pub pof: f64,
    pub failed_applications: u64,
    pub applications_total: u64,
    pub copies: CopyCounts,
    /// Total copies divided by C-TMR's total on the same application.
    pub normalized_copies: f64,
    /// Cluster-wide copies per (task, round).
    /// Cluster-wide copies per (task, round).
    pub copies_per_task_round: f64,
    pub disputes: u64,
    pub isolations: u64,
    pub alerts: u64,
    pub elections: u64,
    pub sweeps: u64,
    pub trace_hash: u64,
}

/// Per-policy mean over applications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub policy: PolicyKind,
    pub pof: f64,
    pub normalized_copies: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub rows: Vec<PolicyRow>,
    pub averages: Vec<AverageRow>,
}

impl Comparison {
    pub fn row(&self, application: &str, policy: PolicyKind) -> Option<&PolicyRow> {
        self.rows
            .iter()
            .find(|r| r.application == application && r.policy == policy)
    }

    pub fn average(&self, policy: PolicyKind) -> Option<&AverageRow> {
        self.averages.iter().find(|r| r.policy == policy)
    }
}

/// Runs every (application, policy) cell in parallel. Cells are
/// independent, so the result does not depend on thread count.
pub fn run_cells(
    cfg: &ScenarioConfig,
    apps: &[Application],
    policies: &[PolicyKind],
    seed: u64,
    keep_trace: bool,
) -> Result<Vec<CellResult>, RunError> {
    let cells: Vec<(&Application, PolicyKind)> = apps
        .iter()
        .flat_map(|a| policies.iter().map(move |&p| (a, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(app, policy)| run_cell(cfg, app, policy, seed, keep_trace))
        .collect()
}

pub fn compare_policies(cfg: &ScenarioConfig, seed: u64) -> Result<Comparison, RunError> {
    Ok(run_policies(cfg, &cfg.policies, seed, false)?.0)
}

/// Runs `policies` plus the C-TMR baseline and tabulates them. The cells
/// are returned alongside, in application-major order.
pub fn run_policies(
    cfg: &ScenarioConfig,
    listed: &[PolicyKind],
    seed: u64,
    keep_trace: bool,
) -> Result<(Comparison, Vec<CellResult>), RunError> {
    cfg.validate()?;
    let apps = cfg.load_applications()?;
    let mut policies = listed.to_vec();
    // the baseline is always run, even if not listed
    let baseline_listed = policies.contains(&PolicyKind::CTmr);
    if !baseline_listed {
        policies.insert(0, PolicyKind::CTmr);
    }
    let cells = run_cells(cfg, &apps, &policies, seed, keep_trace)?;
    let mut rows = Vec::new();
    for (app, chunk) in apps.iter().zip(cells.chunks(policies.len())) {
        let base = chunk
            .iter()
            .find(|c| c.policy == PolicyKind::CTmr)
            .map_or(f64::NAN, |c| c.metrics.executed_copies.total as f64);
        let task_rounds = app.real_task_count() as f64 * f64::from(cfg.runs_per_node);
        for cell in chunk {
            if cell.policy == PolicyKind::CTmr && !baseline_listed {
                continue;
            }
            let m = &cell.metrics;
            rows.push(PolicyRow {
                application: app.name.clone(),
                policy: cell.policy,
                pof: m.pof,
                failed_applications: m.failed_applications,
                applications_total: m.applications_total,
                copies: m.executed_copies,
                normalized_copies: m.executed_copies.total as f64 / base,
                copies_per_task_round: m.executed_copies.total as f64 / task_rounds,
                disputes: m.disputes,
                isolations: m.isolations,
                alerts: m.alerts,
                elections: m.elections,
                sweeps: m.sweeps,
                trace_hash: m.trace_hash,
            });
        }
    }
    let averages = listed
        .iter()
        .map(|&policy| {
            let of: Vec<&PolicyRow> = rows.iter().filter(|r| r.policy == policy).collect();
            let n = of.len() as f64;
            AverageRow {
                policy,
                pof: of.iter().map(|r| r.pof).sum::<f64>() / n,
                normalized_copies: of.iter().map(|r| r.normalized_copies).sum::<f64>() / n,
            }
        })
        .collect();
    Ok((
        Comparison {
            seed,
            rows,
            averages,
        },
        cells,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub application: String,
    pub policy: PolicyKind,
    pub pof: MeanStd,
    pub normalized_copies: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub seeds: Vec<u64>,
    pub stats: Vec<SeedStat>,
}

pub fn sweep_seeds(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<SeedSweep, RunError> {
    let runs = seeds
        .par_iter()
        .map(|&s| compare_policies(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stats = Vec::new();
    if let Some(first) = runs.first() {
        for (i, row) in first.rows.iter().enumerate() {
            let pof: Vec<f64> = runs.iter().map(|c| c.rows[i].pof).collect();
            let norm: Vec<f64> = runs.iter().map(|c| c.rows[i].normalized_copies).collect();
            stats.push(SeedStat {
                application: row.application.clone(),
                policy: row.policy,
                pof: MeanStd::of(&pof),
                normalized_copies: MeanStd::of(&norm),
            });
        }
    }
    Ok(SeedSweep {
        seeds: seeds.to_vec(),
        stats,
    })
}

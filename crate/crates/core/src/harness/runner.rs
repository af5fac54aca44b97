use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use crate::fault::{FaultModel, InputToken, PermanentFaultConfig};
use crate::fti::{Cluster, ProtocolError};
use crate::isolation::{AlertKind, SweepReport};
use crate::node::{Health, NodeId, NodeState};
use crate::sim::{Fnv64, SimTime, Stream, StreamKind, Streams};
use crate::tmr::{
    build_schedule, record_dispute, run_task_tmr, DisputedEntry, PolicyKind, RtmrDetector,
    Schedule, ScheduleError,
};
use crate::workload::Application;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Copies executed, split by where they came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyCounts {
    pub mandatory: u64,
    pub on_demand: u64,
    /// Votes, reference executions, re-executions and arbiter executions.
    pub protocol_overhead: u64,
    pub total: u64,
}

impl CopyCounts {
    fn add(&mut self, o: &CopyCounts) {
        self.mandatory += o.mandatory;
        self.on_demand += o.on_demand;
        self.protocol_overhead += o.protocol_overhead;
        self.total += o.total;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub copies: CopyCounts,
    pub failed_applications: u64,
    pub applications_total: u64,
    pub disputes: u64,
    pub disables: u64,
    pub migrations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub executed_copies: CopyCounts,
    pub failed_applications: u64,
    pub applications_total: u64,
    pub pof: f64,
    pub disputes: u64,
    pub isolations: u64,
    pub reenables: u64,
    pub alerts: u64,
    pub all_faulty_alerts: u64,
    pub elections: u64,
    pub sweeps: u64,
    pub migrations: u64,
    pub trace_hash: u64,
}

/// Everything one (application, policy, seed) cell produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub application: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub per_node: Vec<NodeMetrics>,
    pub sweeps: Vec<SweepReport>,
    /// Disable orders in execution order: (round, core) pairs.
    pub disable_log: Vec<(u32, crate::node::CoreAddr)>,
    pub final_nodes: Vec<NodeState>,
    pub trace: Option<Vec<String>>,
}

impl CellResult {
    /// Sum of the per-node metrics; agrees with the campaign totals.
    pub fn node_sum(&self) -> NodeMetrics {
        let mut s = NodeMetrics::default();
        for n in &self.per_node {
            s.copies.add(&n.copies);
            s.failed_applications += n.failed_applications;
            s.applications_total += n.applications_total;
            s.disputes += n.disputes;
            s.disables += n.disables;
            s.migrations += n.migrations;
        }
        s
    }
}

struct NodeRun {
    rng: Stream,
    detector: RtmrDetector,
    schedules: BTreeMap<u64, Schedule>,
}

/// Runs `runs_per_node` rounds of one application on every node under one
/// policy, with FTI-TMR detection cycles between rounds as scheduled.
pub fn run_cell(
    cfg: &ScenarioConfig,
    app: &Application,
    policy: PolicyKind,
    seed: u64,
    keep_trace: bool,
) -> Result<CellResult, RunError> {
    cfg.validate()?;
    let placement = cfg.fault_placement(seed);
    let permanent = PermanentFaultConfig {
        faulty_cores: placement.clone(),
        ..cfg.permanent.clone()
    };
    let faults = FaultModel::new(cfg.transient, permanent).map_err(ConfigError::from)?;
    let mut nodes: Vec<NodeState> = (0..cfg.n_nodes)
        .map(|i| NodeState::new(i, cfg.cores_per_node))
        .collect();
    for (&node, cores) in &placement {
        for &c in cores {
            nodes[node].cores[c].health = Health::PermanentFault;
        }
    }
    let mut cluster = Cluster::new(nodes, faults, cfg.protocol.clone(), seed, keep_trace)?;
    cluster.verbose = keep_trace;
    let streams = Streams::new(seed);
    let mut runs: Vec<NodeRun> = (0..cfg.n_nodes)
        .map(|i| NodeRun {
            rng: streams.stream(StreamKind::Execution, i as u64),
            detector: if cfg.rtmr_detector_broken {
                RtmrDetector::broken(cfg.cores_per_node, cfg.rtmr_loss_threshold)
            } else {
                RtmrDetector::new(cfg.cores_per_node, cfg.rtmr_loss_threshold)
            },
            schedules: BTreeMap::new(),
        })
        .collect();
    let mut per_node: Vec<NodeMetrics> = (0..cfg.n_nodes)
        .map(|node| NodeMetrics {
            node,
            ..Default::default()
        })
        .collect();
    let mut detection = cfg.detection.restarted();
    let mut sweeps = Vec::new();
    let mut disable_log = Vec::new();
    let mut metrics = RunMetrics::default();
    let mut exec_hash = Fnv64::default();

    for round in 1..=cfg.runs_per_node {
        let mut round_ms = 0;
        for node in 0..cfg.n_nodes {
            let nm = &mut per_node[node];
            let nr = &mut runs[node];
            let mut failed = false;
            let mut mask = cluster.nodes[node].enabled_mask();
            let first = schedule_for(nr, &cluster.nodes[node], app, policy)?;
            round_ms = round_ms.max(first.makespan_ms());
            let order = first.order.clone();
            let mut replicas_of = first.clone();
            for &task in &order {
                let replicas = replicas_of.replicas(task).expect("scheduled task");
                let input = InputToken::new(task, round);
                let ns = &mut cluster.nodes[node];
                let run = run_task_tmr(
                    input,
                    app.task(task).duration,
                    policy,
                    replicas,
                    &ns.cores,
                    &cluster.faults,
                    &mut nr.rng,
                    &mut cluster.mint,
                );
                let o = run.outcome;
                for (core, copy) in &run.copies {
                    exec_hash.write_u64(*core as u64);
                    exec_hash.write_u64(copy.token().0);
                }
                if policy.is_two_phase() {
                    nm.copies.mandatory += 2;
                    nm.copies.on_demand += u64::from(o.copies_executed - 2);
                } else {
                    nm.copies.mandatory += u64::from(o.copies_executed);
                }
                failed |= o.failed_copies >= 2;
                for core in ns.cores.iter_mut().filter(|c| c.enabled) {
                    core.executed_tasks += 1;
                }
                if o.disputed {
                    nm.disputes += 1;
                    record_dispute(ns, &run.participants(), DisputedEntry::new(task, input));
                }
                if policy == PolicyKind::RTmr {
                    let (w, l) = run.winners_and_losers();
                    if let Some(order) = nr.detector.observe(&w, &l, &ns.enabled_cores()) {
                        for &c in &order.disable {
                            ns.cores[c].enabled = false;
                            disable_log.push((round, ns.cores[c].addr));
                        }
                        nm.disables += order.disable.len() as u64;
                        nm.migrations += 1;
                    }
                }
                if cluster.nodes[node].enabled_mask() != mask {
                    mask = cluster.nodes[node].enabled_mask();
                    replicas_of = schedule_for(nr, &cluster.nodes[node], app, policy)?.clone();
                }
            }
            nm.applications_total += 1;
            nm.failed_applications += u64::from(failed);
        }
        let now = cluster.kernel().now();
        cluster
            .kernel_mut()
            .advance_to(SimTime(now.ms() + round_ms), "round")
            .expect("forward");

        if policy == PolicyKind::FtiTmr && detection.due(round) {
            let report = cluster.run_detection_cycle(app, detection.sweeps())?;
            detection.complete_sweep();
            metrics.isolations += report.disabled.len() as u64;
            metrics.reenables += report.reenabled.len() as u64;
            metrics.alerts += report.alerts.len() as u64;
            metrics.all_faulty_alerts += report
                .alerts
                .iter()
                .filter(|a| a.kind == AlertKind::AllCoresFaulty)
                .count() as u64;
            for addr in &report.disabled {
                disable_log.push((round, *addr));
                per_node[addr.node].disables += 1;
            }
            sweeps.push(report);
        }
    }

    for nm in &mut per_node {
        nm.copies.total = nm.copies.mandatory + nm.copies.on_demand;
    }
    let mut copies = CopyCounts::default();
    for nm in &per_node {
        copies.add(&nm.copies);
        metrics.failed_applications += nm.failed_applications;
        metrics.applications_total += nm.applications_total;
        metrics.disputes += nm.disputes;
        metrics.migrations += nm.migrations;
    }
    if policy == PolicyKind::FtiTmr {
        copies.protocol_overhead = cluster.counters.overhead_copies();
        copies.total += copies.protocol_overhead;
    }
    metrics.executed_copies = copies;
    metrics.pof = metrics.failed_applications as f64 / metrics.applications_total as f64;
    metrics.elections = cluster.counters.elections;
    metrics.sweeps = sweeps.len() as u64;
    if policy == PolicyKind::RTmr {
        metrics.isolations = per_node.iter().map(|n| n.disables).sum();
    }
    exec_hash.write_u64(cluster.kernel().trace_hash());
    metrics.trace_hash = exec_hash.finish();
    let trace = cluster.kernel().log().map(|l| {
        let mut lines = l.to_vec();
        lines.extend(cluster.transcript.iter().cloned());
        lines
    });
    Ok(CellResult {
        application: app.name.clone(),
        policy,
        seed,
        metrics,
        per_node,
        sweeps,
        disable_log,
        final_nodes: cluster.nodes.clone(),
        trace,
    })
}

fn schedule_for<'a>(
    nr: &'a mut NodeRun,
    node: &NodeState,
    app: &Application,
    policy: PolicyKind,
) -> Result<&'a Schedule, ScheduleError> {
    match nr.schedules.entry(node.enabled_mask()) {
        Entry::Occupied(e) => Ok(e.into_mut()),
        Entry::Vacant(e) => {
            // a node with every core disabled keeps running on all of them
            let mut cores = node.enabled_cores();
            if cores.is_empty() {
                cores = (0..node.cores.len()).collect();
            }
            Ok(e.insert(build_schedule(app, policy, &cores)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ApplicationSpec;

    fn small(
        policy: PolicyKind,
        counts: Vec<usize>,
        lambda0: f64,
    ) -> (ScenarioConfig, Application) {
        let mut cfg = ScenarioConfig {
            faulty_core_counts: counts,
            runs_per_node: 20,
            policy,
            applications: vec![ApplicationSpec::Random {
                count: 30,
                min_duration: 1.0,
                max_duration: 10.0,
                seed: 4,
                name: None,
            }],
            ..Default::default()
        };
        cfg.transient.lambda0 = lambda0;
        let app = cfg.load_applications().unwrap().remove(0);
        (cfg, app)
    }

    #[test]
    fn ctmr_fault_free_copy_count_is_exact() {
        let (cfg, app) = small(PolicyKind::CTmr, vec![0; 9], 1e-6);
        let r = run_cell(&cfg, &app, PolicyKind::CTmr, 1, false).unwrap();
        assert_eq!(r.metrics.executed_copies.total, 3 * 30 * 20 * 9);
    }

    #[test]
    fn zero_faults_zero_pof() {
        for policy in PolicyKind::ALL {
            let (cfg, app) = small(policy, vec![0; 9], 0.0);
            let r = run_cell(&cfg, &app, policy, 3, false).unwrap();
            assert_eq!(r.metrics.pof, 0.0, "{policy}");
            assert_eq!(r.metrics.disputes, 0);
        }
    }

    #[test]
    fn node_metrics_add_up() {
        let (cfg, app) = small(PolicyKind::FtiTmr, vec![0, 0, 0, 0, 0, 1, 2, 3, 4], 1e-6);
        let r = run_cell(&cfg, &app, PolicyKind::FtiTmr, 5, false).unwrap();
        let s = r.node_sum();
        assert_eq!(s.failed_applications, r.metrics.failed_applications);
        assert_eq!(s.applications_total, r.metrics.applications_total);
        assert_eq!(
            s.copies.mandatory + s.copies.on_demand + r.metrics.executed_copies.protocol_overhead,
            r.metrics.executed_copies.total
        );
        assert_eq!(s.disputes, r.metrics.disputes);
        assert!(r.metrics.sweeps >= 2);
    }

    #[test]
    fn same_seed_same_trace() {
        let (cfg, app) = small(PolicyKind::FtiTmr, vec![0, 0, 0, 0, 0, 1, 2, 3, 4], 1e-6);
        let a = run_cell(&cfg, &app, PolicyKind::FtiTmr, 8, false).unwrap();
        let b = run_cell(&cfg, &app, PolicyKind::FtiTmr, 8, false).unwrap();
        assert_eq!(a.metrics, b.metrics);
        let c = run_cell(&cfg, &app, PolicyKind::FtiTmr, 9, false).unwrap();
        assert_ne!(a.metrics.trace_hash, c.metrics.trace_hash);
    }
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PolicyKind;
use crate::workload::{AppKind, Application, TaskId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("no enabled cores to schedule on")]
    NoCores,
    #[error("application `{0}` has a precedence cycle")]
    Cyclic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: TaskId,
    /// 0 and 1 are the mandatory copies; 2 is the (possibly on-demand) third.
    pub replica: u8,
    pub core: usize,
    /// Simulated seconds from the start of the round.
    pub start: f64,
}

/// Static replica placement for one round. The third replica always gets a
/// reserved slot, even under two-phase policies where it only runs on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub assignments: Vec<Assignment>,
    /// Non-dummy tasks in dispatch order.
    pub order: Vec<TaskId>,
    replicas: Vec<Option<[usize; 3]>>,
    pub makespan: f64,
}

impl Schedule {
    pub fn replicas(&self, task: TaskId) -> Option<[usize; 3]> {
        self.replicas.get(task as usize).copied().flatten()
    }

    pub fn makespan_ms(&self) -> u64 {
        (self.makespan * 1000.0).ceil() as u64
    }

    /// Number of replicas placed on each core index.
    pub fn core_loads(&self, cores: usize) -> Vec<usize> {
        let mut loads = vec![0; cores];
        for a in &self.assignments {
            loads[a.core] += 1;
        }
        loads
    }
}

/// List scheduling: Longest-Task-First over ready DAG tasks, First-Come-
/// First-Served for independent tasks. Each replica goes to the core where
/// it can start earliest; distinct-core policies first minimise the number
/// of the task's replicas already on a core, which keeps replicas on
/// distinct cores when three are available and spreads them as evenly as
/// possible otherwise.
pub fn build_schedule(
    app: &Application,
    policy: PolicyKind,
    enabled_cores: &[usize],
) -> Result<Schedule, ScheduleError> {
    if enabled_cores.is_empty() {
        return Err(ScheduleError::NoCores);
    }
    let n = app.tasks.len();
    let max_core = enabled_cores.iter().copied().max().unwrap_or(0);
    let mut avail = vec![0.0f64; max_core + 1];
    let mut resolved = vec![f64::NAN; n];
    let mut replicas = vec![None; n];
    let mut assignments = Vec::with_capacity(3 * n);
    let mut order = Vec::with_capacity(n);

    let dispatch: Vec<TaskId> = match app.kind {
        AppKind::Independent => (0..n as TaskId).collect(),
        AppKind::Dag => ltf_order(app).ok_or_else(|| ScheduleError::Cyclic(app.name.clone()))?,
    };

    for id in dispatch {
        let task = app.task(id);
        let ready = task
            .predecessors
            .iter()
            .map(|&p| resolved[p as usize])
            .fold(0.0f64, f64::max);
        if task.is_dummy() {
            resolved[id as usize] = ready;
            continue;
        }
        let mut placed = [usize::MAX; 3];
        let mut finish = ready;
        for r in 0..3 {
            let core = *enabled_cores
                .iter()
                .min_by(|&&a, &&b| {
                    let start_a = avail[a].max(ready);
                    let start_b = avail[b].max(ready);
                    let spread = |c: usize| {
                        if policy.distinct_cores() {
                            placed[..r].iter().filter(|&&x| x == c).count()
                        } else {
                            0
                        }
                    };
                    spread(a)
                        .cmp(&spread(b))
                        .then(start_a.total_cmp(&start_b))
                        .then(a.cmp(&b))
                })
                .expect("non-empty core set");
            let start = avail[core].max(ready);
            avail[core] = start + task.duration;
            finish = finish.max(avail[core]);
            placed[r] = core;
            assignments.push(Assignment {
                task: id,
                replica: r as u8,
                core,
                start,
            });
        }
        resolved[id as usize] = finish;
        replicas[id as usize] = Some(placed);
        order.push(id);
    }

    let makespan = resolved
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(0.0, f64::max);
    Ok(Schedule {
        assignments,
        order,
        replicas,
        makespan,
    })
}

// Repeatedly dispatches the longest ready task (ties: lowest id), where a
// task is ready once all of its predecessors have been dispatched.
fn ltf_order(app: &Application) -> Option<Vec<TaskId>> {
    let n = app.tasks.len();
    let mut remaining: Vec<usize> = app.tasks.iter().map(|t| t.predecessors.len()).collect();
    let mut succ: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    for t in &app.tasks {
        for &p in &t.predecessors {
            succ[p as usize].push(t.id);
        }
    }
    // keyed by (descending duration, ascending id)
    let key = |id: TaskId| (std::cmp::Reverse(OrdF64(app.task(id).duration)), id);
    let mut ready: BTreeSet<(std::cmp::Reverse<OrdF64>, TaskId)> = (0..n as TaskId)
        .filter(|&i| remaining[i as usize] == 0)
        .map(key)
        .collect();
    let mut out = Vec::with_capacity(n);
    while let Some((_, id)) = ready.pop_first() {
        out.push(id);
        for &s in &succ[id as usize] {
            remaining[s as usize] -= 1;
            if remaining[s as usize] == 0 {
                ready.insert(key(s));
            }
        }
    }
    (out.len() == n).then_some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

//! Leader-driven detection and logical isolation of permanently faulty
//! cores.

mod check;
mod sweep;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use check::{check_core, CheckEnv, CoreCheck, CoreVerdict};
pub use sweep::{assemble_verdict, SweepEnd};

use crate::node::{CoreAddr, NodeId};
use crate::sim::SimTime;
use crate::tmr::DtList;

/// Rounds of application execution between isolation sweeps: starts at
/// `initial`, multiplied by `growth` after each sweep, capped at `cap`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionSchedule {
    pub initial: u32,
    pub growth: u32,
    pub cap: u32,
    #[serde(skip)]
    period: u32,
    #[serde(skip)]
    next_due: u32,
    #[serde(skip)]
    sweeps: u32,
}

impl Default for DetectionSchedule {
    fn default() -> Self {
        DetectionSchedule::new(2, 2, 100)
    }
}

impl DetectionSchedule {
    pub fn new(initial: u32, growth: u32, cap: u32) -> Self {
        let initial = initial.max(1);
        DetectionSchedule {
            initial,
            growth,
            cap: cap.max(initial),
            period: initial,
            next_due: initial,
            sweeps: 0,
        }
    }

    /// Fresh copy of the configured schedule (serde leaves runtime fields zeroed).
    pub fn restarted(&self) -> Self {
        DetectionSchedule::new(self.initial, self.growth, self.cap)
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn sweeps(&self) -> u32 {
        self.sweeps
    }

    /// True when a sweep follows the given number of completed rounds.
    pub fn due(&self, rounds_completed: u32) -> bool {
        rounds_completed == self.next_due
    }

    pub fn complete_sweep(&mut self) {
        self.sweeps += 1;
        self.period = self.period.saturating_mul(self.growth).min(self.cap);
        self.next_due = self.next_due.saturating_add(self.period);
    }

    /// Round counts after which sweeps happen, within `rounds`.
    pub fn sweep_rounds(&self, rounds: u32) -> Vec<u32> {
        let mut s = self.restarted();
        let mut out = Vec::new();
        for r in 1..=rounds {
            if s.due(r) {
                out.push(r);
                s.complete_sweep();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    NodeUnresponsive,
    AllCoresFaulty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub node_id: NodeId,
    pub kind: AlertKind,
    pub term: u64,
    pub time: SimTime,
}

/// Outcome of inspecting one node: `faulty` is E, `fault_free` is A.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationVerdict {
    pub faulty: BTreeSet<usize>,
    pub fault_free: BTreeSet<usize>,
    pub unresponsive: BTreeSet<usize>,
    pub cleaned_dtlist: DtList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolationPhase {
    Init,
    RequestingDtlist(usize),
    CheckingCore(usize),
    VerdictsReady,
    Applying,
    NodeAlert,
    Advancing,
}

impl IsolationPhase {
    /// Allowed transitions of the per-node inspection machine.
    pub fn can_follow(self, prev: IsolationPhase) -> bool {
        use IsolationPhase::*;
        match (prev, self) {
            (Init, RequestingDtlist(0)) => true,
            (RequestingDtlist(k), RequestingDtlist(k2)) => k2 == k + 1,
            (RequestingDtlist(_), CheckingCore(0)) | (RequestingDtlist(_), NodeAlert) => true,
            (CheckingCore(j), CheckingCore(j2)) => j2 == j + 1,
            (CheckingCore(_), VerdictsReady) => true,
            (VerdictsReady, Applying) | (VerdictsReady, NodeAlert) => true,
            (Applying, Advancing) | (NodeAlert, Advancing) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInspection {
    pub node: NodeId,
    pub phases: Vec<IsolationPhase>,
    pub verdict: Option<IsolationVerdict>,
    pub alert: Option<AlertKind>,
    pub dtlist_before: usize,
    pub dtlist_after: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweep: u32,
    /// (term, primary, secondary) of the pair that finished the sweep.
    pub leaders: Option<(u64, NodeId, NodeId)>,
    pub inspections: Vec<NodeInspection>,
    pub alerts: Vec<Alert>,
    pub disabled: Vec<CoreAddr>,
    pub reenabled: Vec<CoreAddr>,
    /// Times the sweep was abandoned and restarted under new leaders.
    pub restarts: u32,
    pub completed: bool,
}

impl SweepReport {
    /// Union of applied E sets over the sweep.
    pub fn applied_faulty(&self) -> Vec<CoreAddr> {
        self.inspections
            .iter()
            .filter(|i| i.alert.is_none())
            .filter_map(|i| i.verdict.as_ref().map(|v| (i.node, v)))
            .flat_map(|(node, v)| v.faulty.iter().map(move |&core| CoreAddr { node, core }))
            .collect()
    }
}

//! Simulated nodes and cores.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tmr::DtList;

pub type NodeId = usize;

/// `Core_ij`: core `core` of node `node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoreAddr {
    pub node: NodeId,
    pub core: usize,
}

impl fmt::Display for CoreAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}.C{}", self.node, self.core)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    PermanentFault,
}

/// Per-core agent state. The stability counters and the DTList are node-wide
/// quantities; every enabled core keeps its own replica of them.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreState {
    pub addr: CoreAddr,
    /// Set only by fault injection.
    pub health: Health,
    /// Logical-isolation flag; toggled only by isolation orders.
    pub enabled: bool,
    /// Replica of `S_i`, the node's executed-task count.
    pub executed_tasks: u64,
    /// Replica of `D_i`, the node's disputed-task count.
    pub dispute_counter: u64,
    pub dt_list: DtList,
    pub current_term: u64,
}

impl CoreState {
    pub fn new(addr: CoreAddr, cores_per_node: usize) -> Self {
        CoreState {
            addr,
            health: Health::Healthy,
            enabled: true,
            executed_tasks: 0,
            dispute_counter: 0,
            dt_list: DtList::new(cores_per_node),
            current_term: 0,
        }
    }

    pub fn is_faulty(&self) -> bool {
        self.health == Health::PermanentFault
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    PrimaryLeader,
    SecondaryLeader,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("assignment from disabled core {0} rejected")]
    FromIsolated(CoreAddr),
    #[error("assignment to disabled core {0} rejected")]
    ToIsolated(CoreAddr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub cores: Vec<CoreState>,
    pub contact_core: Option<usize>,
    pub role: Role,
    pub group: BTreeSet<NodeId>,
    /// Raised when every core was verdicted faulty; the node keeps running
    /// its local workload but cannot be repaired by isolation.
    pub all_cores_faulty: bool,
}

impl NodeState {
    pub fn new(id: NodeId, cores: usize) -> Self {
        NodeState {
            id,
            cores: (0..cores)
                .map(|c| CoreState::new(CoreAddr { node: id, core: c }, cores))
                .collect(),
            contact_core: None,
            role: Role::Follower,
            group: BTreeSet::new(),
            all_cores_faulty: false,
        }
    }

    pub fn enabled_cores(&self) -> Vec<usize> {
        self.cores
            .iter()
            .filter(|c| c.enabled)
            .map(|c| c.addr.core)
            .collect()
    }

    pub fn faulty_cores(&self) -> BTreeSet<usize> {
        self.cores
            .iter()
            .filter(|c| c.is_faulty())
            .map(|c| c.addr.core)
            .collect()
    }

    /// Enabled-core bitmask, used as a schedule cache key.
    pub fn enabled_mask(&self) -> u64 {
        self.cores
            .iter()
            .filter(|c| c.enabled)
            .fold(0, |m, c| m | (1 << c.addr.core))
    }

    /// The node's `S_i` and `D_i` as seen by one of its cores.
    pub fn counters_seen_by(&self, core: usize) -> (u64, u64) {
        let c = &self.cores[core];
        (c.executed_tasks, c.dispute_counter)
    }

    /// Logical isolation: healthy cores refuse work handed out by, or aimed
    /// at, a disabled core.
    pub fn accept_assignment(&self, from: usize, to: usize) -> Result<(), AssignmentError> {
        if !self.cores[from].enabled {
            return Err(AssignmentError::FromIsolated(self.cores[from].addr));
        }
        if !self.cores[to].enabled {
            return Err(AssignmentError::ToIsolated(self.cores[to].addr));
        }
        Ok(())
    }
}

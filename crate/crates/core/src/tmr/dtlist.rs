use serde::{Deserialize, Serialize};

use crate::fault::InputToken;
use crate::node::NodeState;
use crate::sim::Fnv64;
use crate::workload::TaskId;

/// One disputed-task record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputedEntry {
    pub task: TaskId,
    pub input: InputToken,
    /// Kept for fidelity with the record layout; removal on pass is what
    /// actually retires an entry.
    pub passed: bool,
    pub failed_count: u32,
    /// Sweep in which the entry last failed, anchoring its backoff window.
    pub last_failed_sweep: Option<u32>,
}

impl DisputedEntry {
    pub fn new(task: TaskId, input: InputToken) -> Self {
        DisputedEntry {
            task,
            input,
            passed: false,
            failed_count: 0,
            last_failed_sweep: None,
        }
    }

    /// After failing in sweep `s`, the entry is not re-checked before sweep
    /// `s + 2^failed_count`.
    pub fn under_backoff(&self, sweep: u32) -> bool {
        match self.last_failed_sweep {
            Some(s) => u64::from(sweep) < u64::from(s) + (1u64 << self.failed_count.min(32)),
            None => false,
        }
    }

    pub fn mark_failed(&mut self, sweep: u32) {
        self.failed_count += 1;
        self.last_failed_sweep = Some(sweep);
    }
}

/// Disputed tasks partitioned by core: `partitions[j]` lists the disputed
/// tasks that had a copy executed on core `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtList {
    pub partitions: Vec<Vec<DisputedEntry>>,
}

impl DtList {
    pub fn new(cores: usize) -> Self {
        DtList {
            partitions: vec![Vec::new(); cores],
        }
    }

    pub fn partition(&self, core: usize) -> &[DisputedEntry] {
        &self.partitions[core]
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.iter().all(Vec::is_empty)
    }

    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::default();
        for (j, part) in self.partitions.iter().enumerate() {
            h.write_u64(j as u64);
            h.write_u64(part.len() as u64);
            for e in part {
                h.write_u64(u64::from(e.task));
                h.write_u64(e.input.0);
                h.write(&[u8::from(e.passed)]);
                h.write_u64(u64::from(e.failed_count));
                h.write_u64(e.last_failed_sweep.map_or(u64::MAX, u64::from));
            }
        }
        h.finish()
    }
}

/// Records a disputed task on every enabled core of the node: each core's
/// replica gains the entry under every participating core, and each core's
/// dispute counter goes up by one.
pub fn record_dispute(node: &mut NodeState, participants: &[usize], entry: DisputedEntry) {
    for core in node.cores.iter_mut().filter(|c| c.enabled) {
        for (i, &j) in participants.iter().enumerate() {
            if !participants[..i].contains(&j) {
                core.dt_list.partitions[j].push(entry);
            }
        }
        core.dispute_counter += 1;
    }
}

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::node::NodeId;

/// Stability score `(S - D + f) / (S + F)`. A node that has done nothing
/// yet (`S + F = 0`) scores 1.
pub fn compute_ss(s_total: u64, disputes: u64, f_actual: f64, f_max: f64) -> f64 {
    let denom = s_total as f64 + f_max;
    if denom == 0.0 {
        return 1.0;
    }
    (s_total as f64 - disputes as f64 + f_actual) / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub node_id: NodeId,
    pub term: u64,
    pub s_total: u64,
    pub disputes: u64,
    pub f_actual: f64,
    pub f_max: f64,
    pub ss: f64,
}

impl StabilityReport {
    pub fn honest(node_id: NodeId, term: u64, s_total: u64, disputes: u64) -> Self {
        StabilityReport {
            node_id,
            term,
            s_total,
            disputes,
            f_actual: 0.0,
            f_max: 0.0,
            ss: compute_ss(s_total, disputes, 0.0, 0.0),
        }
    }

    fn recomputes(&self) -> bool {
        self.disputes <= self.s_total
            && self.f_actual <= self.f_max
            && compute_ss(self.s_total, self.disputes, self.f_actual, self.f_max) == self.ss
    }
}

/// Heap entry: rejected reports carry key -1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub node_id: NodeId,
    pub ss_key: f64,
}

impl CandidateEntry {
    pub fn rejected(&self) -> bool {
        self.ss_key < 0.0
    }

    /// Higher score first, lower node id on ties.
    pub fn rank(&self, other: &Self) -> Ordering {
        other
            .ss_key
            .total_cmp(&self.ss_key)
            .then(self.node_id.cmp(&other.node_id))
    }
}

pub fn validate_report(r: &StabilityReport, local_term: u64) -> CandidateEntry {
    let ok = r.term == local_term && r.recomputes() && (0.0..=1.0).contains(&r.ss);
    CandidateEntry {
        node_id: r.node_id,
        ss_key: if ok { r.ss } else { -1.0 },
    }
}

/// A voter's view of the stability reports it received this term.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateHeap {
    entries: BTreeMap<NodeId, CandidateEntry>,
}

impl CandidateHeap {
    /// Keeps the first report per node; later duplicates are ignored.
    pub fn insert(&mut self, entry: CandidateEntry) {
        self.entries.entry(entry.node_id).or_insert(entry);
    }

    pub fn get(&self, node: NodeId) -> Option<&CandidateEntry> {
        self.entries.get(&node)
    }

    pub fn is_rejected(&self, node: NodeId) -> bool {
        self.entries.get(&node).is_some_and(|e| e.rejected())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best non-rejected entry accepted by `eligible`.
    pub fn top_where(&self, mut eligible: impl FnMut(NodeId) -> bool) -> Option<CandidateEntry> {
        self.entries
            .values()
            .filter(|e| !e.rejected() && eligible(e.node_id))
            .min_by(|a, b| a.rank(b))
            .copied()
    }

    pub fn sorted(&self) -> Vec<CandidateEntry> {
        let mut v: Vec<_> = self.entries.values().copied().collect();
        v.sort_by(|a, b| a.rank(b));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(compute_ss(100, 0, 0.0, 0.0), 1.0);
        assert_eq!(compute_ss(100, 10, 0.0, 0.0), 0.9);
        assert_eq!(compute_ss(10, 10, 0.0, 0.0), 0.0);
        assert_eq!(compute_ss(0, 0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn validation() {
        let r = StabilityReport::honest(3, 5, 100, 10);
        assert_eq!(validate_report(&r, 5).ss_key, 0.9);
        let inflated = StabilityReport { ss: 1.7, ..r };
        assert!(validate_report(&inflated, 5).rejected());
        let stale = StabilityReport { term: 4, ..r };
        assert!(validate_report(&stale, 5).rejected());
        let mismatch = StabilityReport { ss: 0.95, ..r };
        assert!(validate_report(&mismatch, 5).rejected());
    }

    #[test]
    fn heap_order_is_lexicographic() {
        let mut h = CandidateHeap::default();
        h.insert(CandidateEntry {
            node_id: 4,
            ss_key: 0.9,
        });
        h.insert(CandidateEntry {
            node_id: 2,
            ss_key: 0.9,
        });
        h.insert(CandidateEntry {
            node_id: 7,
            ss_key: 0.5,
        });
        h.insert(CandidateEntry {
            node_id: 1,
            ss_key: -1.0,
        });
        assert_eq!(h.top_where(|_| true).unwrap().node_id, 2);
        assert_eq!(h.top_where(|n| n != 2).unwrap().node_id, 4);
        assert_eq!(
            h.sorted().iter().map(|e| e.node_id).collect::<Vec<_>>(),
            vec![2, 4, 7, 1]
        );
        assert!(h.is_rejected(1));
        assert!(h.top_where(|n| n == 1).is_none());
    }
}

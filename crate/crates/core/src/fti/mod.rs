//! Stability-scored leader election, heartbeats and leader self-healing.

mod election;
mod heartbeat;
mod message;
mod stability;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use election::{select_contact_core, Agent, Phase};
pub use heartbeat::{Anomaly, HeartbeatMonitor};
pub use message::{Event, LeaderKind, Message, Payload, Timer};
pub use stability::{compute_ss, validate_report, CandidateEntry, CandidateHeap, StabilityReport};

use crate::fault::{FaultModel, TokenMint};
use crate::node::{NodeId, NodeState, Role};
use crate::sim::{Bus, Kernel, Stream, StreamKind, Streams};

/// Protocol timing, all in simulated milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub latency_ms: u64,
    pub delay_min_ms: u64,
    pub delay_max_ms: u64,
    pub ss_exchange_ms: u64,
    pub vote_phase_ms: u64,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_timeout_ms: u64,
    /// Simulated time per isolation re-execution or reference execution.
    pub isolation_exec_ms: u64,
    /// Give up after this many term restarts within one election.
    pub max_terms: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            latency_ms: 1,
            delay_min_ms: 150,
            delay_max_ms: 300,
            ss_exchange_ms: 500,
            vote_phase_ms: 500,
            heartbeat_interval_ms: 100,
            heartbeat_timeout_ms: 400,
            isolation_exec_ms: 1,
            max_terms: 64,
        }
    }
}

impl ProtocolConfig {
    /// Start delay, stability exchange, then vote and ack phases for both
    /// leader kinds.
    pub fn term_timeout_ms(&self) -> u64 {
        self.delay_max_ms + self.ss_exchange_ms + 4 * self.vote_phase_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaders {
    pub primary: NodeId,
    pub secondary: NodeId,
    pub group: BTreeSet<NodeId>,
    pub term: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("a cluster needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("no leaders confirmed after {terms} terms")]
    NoLeaders { terms: u64 },
}

/// Test-only faults injected into the leaders during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionHook {
    /// The primary goes silent once it starts inspecting this node.
    CrashPrimaryWhenInspecting(NodeId),
    /// From this node on, the secondary reports the next node id instead.
    SkewSecondaryWhenInspecting(NodeId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolCounters {
    pub elections: u64,
    pub terms_started: u64,
    pub votes_cast: u64,
    pub reference_execs: u64,
    pub reexecs: u64,
    pub arbiter_execs: u64,
    pub self_heals: u64,
    pub reelections: u64,
    pub messages_dropped: u64,
}

impl ProtocolCounters {
    /// Work the protocol adds on top of application copies.
    pub fn overhead_copies(&self) -> u64 {
        self.votes_cast + self.reference_execs + self.reexecs + self.arbiter_execs
    }
}

/// Safety bookkeeping checked by the property suites.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElectionAudit {
    /// term -> nodes that reached primary-confirmed in that term.
    pub confirmed_primaries: BTreeMap<u64, BTreeSet<NodeId>>,
    /// (term, voter, kind) -> votes sent.
    pub votes: BTreeMap<(u64, NodeId, LeaderKind), u32>,
    /// (term, primary) -> heap of every node that acknowledged it.
    pub acker_views: BTreeMap<(u64, NodeId), Vec<(NodeId, CandidateHeap)>>,
}

impl ElectionAudit {
    pub fn max_primaries_per_term(&self) -> usize {
        self.confirmed_primaries
            .values()
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
    }

    pub fn max_votes_per_term(&self) -> u32 {
        self.votes.values().copied().max().unwrap_or(0)
    }
}

/// Runtime state of the elected pair while a sweep is running.
#[derive(Debug, Clone, Default)]
pub(crate) struct LeaderRuntime {
    pub crashed: [bool; 2],
    pub pointer_corrupt: [bool; 2],
    pub skewed: bool,
    pub inspecting: NodeId,
    pub started_ms: u64,
    pub active: bool,
}

/// All nodes plus the event kernel and bus the protocol runs on.
pub struct Cluster {
    pub nodes: Vec<NodeState>,
    pub faults: FaultModel,
    pub config: ProtocolConfig,
    pub(crate) kernel: Kernel<Event>,
    pub(crate) bus: Bus,
    pub(crate) accident_rng: Vec<Stream>,
    pub(crate) delay_rng: Vec<Stream>,
    pub(crate) contact_rng: Vec<Stream>,
    pub(crate) isolation_rng: Stream,
    /// Source of run-unique wrong results for every execution in the run.
    pub mint: TokenMint,
    pub(crate) agents: Vec<Agent>,
    pub(crate) monitors: Vec<HeartbeatMonitor>,
    pub leaders: Option<Leaders>,
    pub(crate) runtime: LeaderRuntime,
    pub(crate) reelection: Option<BTreeSet<NodeId>>,
    election_base: u64,
    pub counters: ProtocolCounters,
    pub audit: ElectionAudit,
    pub hooks: Vec<InjectionHook>,
    /// Set to true to record every delivered message in `transcript`.
    pub verbose: bool,
    pub transcript: Vec<String>,
}

impl Cluster {
    pub fn new(
        nodes: Vec<NodeState>,
        faults: FaultModel,
        config: ProtocolConfig,
        seed: u64,
        keep_log: bool,
    ) -> Result<Self, ProtocolError> {
        let n = nodes.len();
        if n < 3 {
            return Err(ProtocolError::TooFewNodes(n));
        }
        let streams = Streams::new(seed);
        let per_node = |kind| {
            (0..n as u64)
                .map(|i| streams.stream(kind, i))
                .collect::<Vec<_>>()
        };
        Ok(Cluster {
            accident_rng: per_node(StreamKind::Accidents),
            delay_rng: per_node(StreamKind::Delays),
            contact_rng: per_node(StreamKind::Contact),
            isolation_rng: streams.stream(StreamKind::Isolation, 0),
            mint: TokenMint::default(),
            agents: (0..n).map(Agent::new).collect(),
            monitors: (0..n).map(|_| HeartbeatMonitor::default()).collect(),
            bus: Bus::new(config.latency_ms),
            kernel: Kernel::new(keep_log),
            nodes,
            faults,
            config,
            leaders: None,
            runtime: LeaderRuntime::default(),
            reelection: None,
            election_base: 0,
            counters: ProtocolCounters::default(),
            audit: ElectionAudit::default(),
            hooks: Vec::new(),
            verbose: false,
            transcript: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn agent(&self, node: NodeId) -> &Agent {
        &self.agents[node]
    }

    pub fn kernel(&self) -> &Kernel<Event> {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel<Event> {
        &mut self.kernel
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    /// Highest term any node has entered.
    pub fn term(&self) -> u64 {
        self.agents.iter().map(|a| a.term).max().unwrap_or(0)
    }

    /// Honest stability score of a node from its first enabled core's
    /// counters.
    pub fn node_ss(&self, node: NodeId) -> f64 {
        let ns = &self.nodes[node];
        let core = ns.enabled_cores().first().copied().unwrap_or(0);
        let (s, d) = ns.counters_seen_by(core);
        compute_ss(s, d, 0.0, 0.0)
    }

    /// Nodes ordered by descending SS, lower id first on ties.
    pub fn ranking(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = (0..self.n()).collect();
        ids.sort_by(|&a, &b| self.node_ss(b).total_cmp(&self.node_ss(a)).then(a.cmp(&b)));
        ids
    }

    pub(crate) fn apply_roles(&mut self) {
        for ns in &mut self.nodes {
            ns.role = Role::Follower;
            ns.group.clear();
        }
        if let Some(l) = &self.leaders {
            self.nodes[l.primary].role = Role::PrimaryLeader;
            self.nodes[l.primary].group = l.group.clone();
            self.nodes[l.secondary].role = Role::SecondaryLeader;
            self.nodes[l.secondary].group = l.group.clone();
        }
    }

    pub(crate) fn log(&mut self, line: impl FnOnce() -> String) {
        if self.verbose {
            let at = self.kernel.now();
            self.transcript.push(format!("{at} {}", line()));
        }
    }
}

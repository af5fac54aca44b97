use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::stability::StabilityReport;
use super::Leaders;
use crate::node::{CoreAddr, NodeId};
use crate::sim::{Routed, TraceRecord, Traced};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderKind {
    Primary,
    Secondary,
}

impl LeaderKind {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SsReport(StabilityReport),
    Vote {
        kind: LeaderKind,
        candidate: NodeId,
    },
    LeaderClaim {
        kind: LeaderKind,
    },
    Ack {
        kind: LeaderKind,
        claimant: NodeId,
    },
    SecondaryStart {
        group: BTreeSet<NodeId>,
    },
    LeadersConfirmed(Leaders),
    RestartRequest,
    Heartbeat {
        sender: LeaderKind,
        tick: u64,
        inspecting: NodeId,
    },
    ReelectProposal,
    ElectionStart {
        banned: BTreeSet<NodeId>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::SsReport(_) => "ss_report",
            Payload::Vote { .. } => "vote",
            Payload::LeaderClaim { .. } => "leader_claim",
            Payload::Ack { .. } => "ack",
            Payload::SecondaryStart { .. } => "secondary_start",
            Payload::LeadersConfirmed(_) => "leaders_confirmed",
            Payload::RestartRequest => "restart_request",
            Payload::Heartbeat { .. } => "heartbeat",
            Payload::ReelectProposal => "reelect_proposal",
            Payload::ElectionStart { .. } => "election_start",
        }
    }
}

/// Node-to-node protocol message. The receiving node handles it on its
/// contact core.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: CoreAddr,
    pub dst: NodeId,
    pub term: u64,
    /// Cleared by a corrupt-payload accident; receivers drop such messages.
    pub intact: bool,
    pub seq: u64,
    pub body: Payload,
}

impl Message {
    pub fn new(src: CoreAddr, dst: NodeId, term: u64, body: Payload) -> Self {
        Message {
            src,
            dst,
            term,
            intact: true,
            seq: 0,
            body,
        }
    }
}

impl Routed for Message {
    fn channel(&self) -> (u64, u64) {
        (
            ((self.src.node as u64) << 16) | self.src.core as u64,
            self.dst as u64,
        )
    }
    fn seq(&self) -> u64 {
        self.seq
    }
    fn set_seq(&mut self, seq: u64) {
        self.seq = seq;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timer {
    /// Random start delay elapsed: choose a contact core and report SS.
    Contact,
    /// Stability exchange over: vote for the heap top.
    SsPhaseEnd,
    /// No leaders by now: restart with the next term.
    TermDeadline,
    /// End of the primary's ack phase: the group is fixed.
    GroupClose,
    Restart {
        next_term: u64,
    },
    /// Heartbeat emission by a leader.
    HeartbeatTick(LeaderKind),
    MonitorCheck,
    Reelect,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Deliver(Message),
    Timer {
        node: NodeId,
        term: u64,
        timer: Timer,
    },
}

impl From<Message> for Event {
    fn from(m: Message) -> Self {
        Event::Deliver(m)
    }
}

impl Traced for Event {
    fn trace(&self) -> TraceRecord {
        match self {
            Event::Deliver(m) => TraceRecord {
                kind: m.body.kind(),
                src: m.src.to_string(),
                dst: format!("N{}", m.dst),
                term: m.term,
            },
            Event::Timer { node, term, timer } => TraceRecord {
                kind: match timer {
                    Timer::Contact => "t_contact",
                    Timer::SsPhaseEnd => "t_ss_end",
                    Timer::TermDeadline => "t_deadline",
                    Timer::GroupClose => "t_group_close",
                    Timer::Restart { .. } => "t_restart",
                    Timer::HeartbeatTick(_) => "t_heartbeat",
                    Timer::MonitorCheck => "t_monitor",
                    Timer::Reelect => "t_reelect",
                },
                src: format!("N{node}"),
                dst: String::new(),
                term: *term,
            },
        }
    }
}

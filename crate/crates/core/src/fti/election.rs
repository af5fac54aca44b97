use std::collections::BTreeSet;

use rand::Rng;

use super::message::{Event, LeaderKind, Message, Payload, Timer};
use super::stability::{validate_report, CandidateHeap, StabilityReport};
use super::{Cluster, Leaders, ProtocolError};
use crate::fault::{Accident, AccidentContext};
use crate::node::{CoreAddr, NodeId, NodeState};
use crate::sim::random_delay;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SsExchange,
    PrimaryVote,
    SecondaryVote,
    Done,
}

/// Per-node election state for the current term.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub node: NodeId,
    pub term: u64,
    pub phase: Phase,
    /// Crash accident: silent until the next term.
    pub crashed: bool,
    pub heap: CandidateHeap,
    pub banned: BTreeSet<NodeId>,
    pub intended: [Option<NodeId>; 2],
    pub votes: [BTreeSet<NodeId>; 2],
    pub acks: [BTreeSet<NodeId>; 2],
    pub claimed: [bool; 2],
    pub acked: [bool; 2],
    pub confirmed: [bool; 2],
    /// Primary and group as learned from a secondary-start message.
    pub primary: Option<NodeId>,
    pub group: BTreeSet<NodeId>,
    pub leaders: Option<Leaders>,
}

impl Agent {
    pub fn new(node: NodeId) -> Self {
        Agent {
            node,
            term: 0,
            phase: Phase::Idle,
            crashed: false,
            heap: CandidateHeap::default(),
            banned: BTreeSet::new(),
            intended: [None; 2],
            votes: Default::default(),
            acks: Default::default(),
            claimed: [false; 2],
            acked: [false; 2],
            confirmed: [false; 2],
            primary: None,
            group: BTreeSet::new(),
            leaders: None,
        }
    }

    fn reset(&mut self, term: u64) {
        let banned = std::mem::take(&mut self.banned);
        *self = Agent {
            term,
            phase: Phase::SsExchange,
            banned,
            ..Agent::new(self.node)
        };
    }
}

/// Uniform choice among the node's enabled cores; `None` leaves the node
/// silent for the term.
pub fn select_contact_core<R: Rng>(node: &NodeState, rng: &mut R) -> Option<usize> {
    let enabled = node.enabled_cores();
    if enabled.is_empty() {
        None
    } else {
        Some(enabled[rng.gen_range(0..enabled.len())])
    }
}

impl Cluster {
    /// Runs a full election (new term) until the event queue drains, then
    /// installs the newest confirmed leader pair cluster-wide.
    pub fn run_election(&mut self, banned: &BTreeSet<NodeId>) -> Result<Leaders, ProtocolError> {
        self.kernel.clear();
        self.runtime = Default::default();
        self.leaders = None;
        self.counters.elections += 1;
        let start = self.term() + 1;
        self.election_base = start;
        for i in 0..self.n() {
            self.agents[i].banned = banned.clone();
            self.agents[i].leaders = None;
            self.begin_term(i, start);
        }
        while let Some((_, ev)) = self.kernel.pop() {
            self.handle(ev);
        }
        let best = self
            .agents
            .iter()
            .filter_map(|a| a.leaders.clone())
            .max_by_key(|l| l.term);
        let Some(leaders) = best else {
            self.apply_roles();
            return Err(ProtocolError::NoLeaders {
                terms: self.term() + 1 - start,
            });
        };
        for a in &mut self.agents {
            a.term = leaders.term;
            a.leaders = Some(leaders.clone());
            a.phase = Phase::Done;
        }
        self.log(|| {
            format!(
                "leaders p=N{} v=N{} term={}",
                leaders.primary, leaders.secondary, leaders.term
            )
        });
        self.leaders = Some(leaders.clone());
        self.apply_roles();
        Ok(leaders)
    }

    pub(crate) fn begin_term(&mut self, node: NodeId, term: u64) {
        self.counters.terms_started += 1;
        self.agents[node].reset(term);
        self.nodes[node].contact_core = None;
        for c in &mut self.nodes[node].cores {
            c.current_term = term;
        }
        let cfg = &self.config;
        let delay = random_delay(
            &mut self.delay_rng[node],
            cfg.delay_min_ms,
            cfg.delay_max_ms,
        );
        let ss_end = cfg.delay_max_ms + cfg.ss_exchange_ms;
        let deadline = cfg.term_timeout_ms();
        self.kernel.schedule_in(
            delay,
            Event::Timer {
                node,
                term,
                timer: Timer::Contact,
            },
        );
        self.kernel.schedule_in(
            ss_end,
            Event::Timer {
                node,
                term,
                timer: Timer::SsPhaseEnd,
            },
        );
        self.kernel.schedule_in(
            deadline,
            Event::Timer {
                node,
                term,
                timer: Timer::TermDeadline,
            },
        );
    }

    /// One protocol interaction by `node`'s contact core: samples an
    /// accident and sends `body` to every destination. Returns false when
    /// nothing was sent.
    pub(crate) fn send_from(&mut self, node: NodeId, dsts: &[NodeId], body: Payload) -> bool {
        let term = self.agents[node].term;
        self.send_with_term(node, dsts, term, body)
    }

    pub(crate) fn send_with_term(
        &mut self,
        node: NodeId,
        dsts: &[NodeId],
        mut term: u64,
        mut body: Payload,
    ) -> bool {
        if self.agents[node].crashed {
            return false;
        }
        let Some(contact) = self.nodes[node].contact_core else {
            return false;
        };
        let accident = self.faults.sample_accident(
            &self.nodes[node].cores[contact],
            AccidentContext::Election,
            &mut self.accident_rng[node],
        );
        let mut intact = true;
        let mut dsts = dsts.to_vec();
        match accident {
            Accident::None => {}
            Accident::Crash => {
                self.agents[node].crashed = true;
                self.log(|| format!("N{node} crash"));
                return false;
            }
            Accident::Timeout => return false,
            Accident::StaleTerm => term = term.saturating_sub(1),
            Accident::CorruptPayload => match &mut body {
                Payload::SsReport(r) => r.ss += 0.5,
                Payload::Heartbeat {
                    sender, inspecting, ..
                } => {
                    // the leader's inspection pointer stays wrong from now on
                    self.runtime.pointer_corrupt[sender.index()] = true;
                    *inspecting = (*inspecting + 1) % self.nodes.len();
                }
                Payload::Vote { kind, .. } => {
                    // turns into a leadership claim the sender is not entitled to
                    let kind = *kind;
                    body = Payload::LeaderClaim { kind };
                    dsts = match kind {
                        LeaderKind::Primary => (0..self.n()).collect(),
                        LeaderKind::Secondary => self.agents[node].group.iter().copied().collect(),
                    };
                }
                _ => intact = false,
            },
        }
        let src = CoreAddr {
            node,
            core: contact,
        };
        for dst in dsts {
            let mut msg = Message::new(src, dst, term, body.clone());
            msg.intact = intact;
            self.bus.send(&mut self.kernel, msg);
        }
        true
    }

    pub(crate) fn handle(&mut self, ev: Event) {
        match ev {
            Event::Timer { node, term, timer } => self.on_timer(node, term, timer),
            Event::Deliver(msg) => {
                self.bus.on_deliver(&msg);
                if !msg.intact {
                    self.counters.messages_dropped += 1;
                    return;
                }
                self.log(|| {
                    format!(
                        "{} -> N{} {} t{}",
                        msg.src,
                        msg.dst,
                        msg.body.kind(),
                        msg.term
                    )
                });
                self.on_message(msg);
            }
        }
    }

    fn on_timer(&mut self, node: NodeId, term: u64, timer: Timer) {
        match timer {
            Timer::HeartbeatTick(kind) => return self.on_heartbeat_tick(kind, term),
            Timer::MonitorCheck => return self.on_monitor_check(node, term),
            Timer::Reelect => return self.on_reelect_timer(node, term),
            _ => {}
        }
        let a = &self.agents[node];
        if a.term != term || a.leaders.is_some() {
            return;
        }
        match timer {
            Timer::Contact => {
                self.nodes[node].contact_core =
                    select_contact_core(&self.nodes[node], &mut self.contact_rng[node]);
                let Some(contact) = self.nodes[node].contact_core else {
                    return;
                };
                let (s, d) = self.nodes[node].counters_seen_by(contact);
                let report = StabilityReport::honest(node, term, s, d);
                let all: Vec<NodeId> = (0..self.n()).collect();
                self.send_from(node, &all, Payload::SsReport(report));
            }
            Timer::SsPhaseEnd => {
                self.agents[node].phase = Phase::PrimaryVote;
                let a = &self.agents[node];
                let Some(top) = a.heap.top_where(|c| !a.banned.contains(&c)) else {
                    return;
                };
                self.cast_vote(node, LeaderKind::Primary, top.node_id);
            }
            Timer::TermDeadline => {
                let next = term + 1;
                let delay = random_delay(
                    &mut self.delay_rng[node],
                    self.config.delay_min_ms,
                    self.config.delay_max_ms,
                );
                self.kernel.schedule_in(
                    delay,
                    Event::Timer {
                        node,
                        term,
                        timer: Timer::Restart { next_term: next },
                    },
                );
            }
            Timer::GroupClose => {
                // the group is every node that acknowledged within the ack phase
                if !self.agents[node].confirmed[0] {
                    return;
                }
                let group = self.agents[node].acks[0].clone();
                let views = group
                    .iter()
                    .map(|&g| (g, self.agents[g].heap.clone()))
                    .collect();
                self.audit.acker_views.insert((term, node), views);
                let members: Vec<NodeId> = group.iter().copied().collect();
                self.send_from(node, &members, Payload::SecondaryStart { group });
            }
            Timer::Restart { next_term } => {
                if next_term >= self.election_base + self.config.max_terms {
                    return;
                }
                self.begin_term(node, next_term);
                // the term's contact core is only chosen after the start
                // delay; the request goes out through any enabled core
                self.nodes[node].contact_core =
                    select_contact_core(&self.nodes[node], &mut self.contact_rng[node]);
                let others: Vec<NodeId> = (0..self.n()).filter(|&i| i != node).collect();
                self.send_from(node, &others, Payload::RestartRequest);
            }
            _ => {}
        }
    }

    fn cast_vote(&mut self, node: NodeId, kind: LeaderKind, candidate: NodeId) {
        let a = &mut self.agents[node];
        a.intended[kind.index()] = Some(candidate);
        *self.audit.votes.entry((a.term, node, kind)).or_insert(0) += 1;
        self.counters.votes_cast += 1;
        self.send_from(node, &[candidate], Payload::Vote { kind, candidate });
    }

    fn on_message(&mut self, msg: Message) {
        let r = msg.dst;
        let sender = msg.src.node;
        if let Payload::Heartbeat { .. }
        | Payload::ReelectProposal
        | Payload::ElectionStart { .. } = msg.body
        {
            return self.on_sweep_message(msg);
        }
        if let Payload::LeadersConfirmed(l) = &msg.body {
            let a = &mut self.agents[r];
            let newer = a.leaders.as_ref().is_none_or(|cur| cur.term < l.term);
            if msg.term == l.term && newer {
                a.leaders = Some(l.clone());
                a.term = l.term;
                a.phase = Phase::Done;
            }
            return;
        }
        if let Payload::RestartRequest = msg.body {
            if let Some(l) = self.agents[r].leaders.clone() {
                self.send_with_term(r, &[sender], l.term, Payload::LeadersConfirmed(l));
                return;
            }
        }
        // a node without leaders follows a higher term
        if msg.term > self.agents[r].term && self.agents[r].leaders.is_none() {
            self.begin_term(r, msg.term);
        }
        if msg.term != self.agents[r].term || self.agents[r].leaders.is_some() {
            return;
        }
        match msg.body {
            Payload::SsReport(report) => {
                let entry = validate_report(&report, self.agents[r].term);
                let entry = if report.node_id == sender {
                    entry
                } else {
                    super::CandidateEntry {
                        ss_key: -1.0,
                        ..entry
                    }
                };
                self.agents[r].heap.insert(entry);
            }
            Payload::Vote { kind, candidate } => self.on_vote(r, sender, kind, candidate),
            Payload::LeaderClaim { kind } => self.on_claim(r, sender, kind),
            Payload::Ack { kind, claimant } => self.on_ack(r, sender, kind, claimant),
            Payload::SecondaryStart { group } => {
                let a = &mut self.agents[r];
                if a.intended[0] != Some(sender) || a.primary.is_some() {
                    return;
                }
                a.primary = Some(sender);
                a.group = group;
                a.phase = Phase::SecondaryVote;
                let a = &self.agents[r];
                let pick = a
                    .heap
                    .top_where(|c| c != sender && a.group.contains(&c) && !a.banned.contains(&c));
                if let Some(top) = pick {
                    self.cast_vote(r, LeaderKind::Secondary, top.node_id);
                }
            }
            _ => {}
        }
    }

    fn threshold(&self, node: NodeId, kind: LeaderKind) -> usize {
        match kind {
            LeaderKind::Primary => self.n() / 2,
            LeaderKind::Secondary => self.agents[node].group.len() / 2,
        }
    }

    fn on_vote(&mut self, r: NodeId, voter: NodeId, kind: LeaderKind, candidate: NodeId) {
        let k = kind.index();
        let a = &self.agents[r];
        if candidate != r || a.heap.is_rejected(voter) || a.claimed[k] {
            return;
        }
        if kind == LeaderKind::Secondary && !a.group.contains(&voter) {
            return;
        }
        self.agents[r].votes[k].insert(voter);
        if self.agents[r].votes[k].len() > self.threshold(r, kind) {
            self.agents[r].claimed[k] = true;
            let dsts: Vec<NodeId> = match kind {
                LeaderKind::Primary => (0..self.n()).collect(),
                LeaderKind::Secondary => self.agents[r].group.iter().copied().collect(),
            };
            if self.send_from(r, &dsts, Payload::LeaderClaim { kind })
                && kind == LeaderKind::Primary
            {
                let term = self.agents[r].term;
                self.kernel.schedule_in(
                    self.config.vote_phase_ms,
                    Event::Timer {
                        node: r,
                        term,
                        timer: Timer::GroupClose,
                    },
                );
            }
        }
    }

    fn on_claim(&mut self, r: NodeId, claimant: NodeId, kind: LeaderKind) {
        let k = kind.index();
        let a = &self.agents[r];
        if a.intended[k] != Some(claimant) || a.acked[k] || a.heap.is_rejected(claimant) {
            return;
        }
        self.agents[r].acked[k] = true;
        self.send_from(r, &[claimant], Payload::Ack { kind, claimant });
    }

    fn on_ack(&mut self, r: NodeId, from: NodeId, kind: LeaderKind, claimant: NodeId) {
        let k = kind.index();
        let a = &self.agents[r];
        if claimant != r || !a.claimed[k] {
            return;
        }
        if kind == LeaderKind::Secondary && !a.group.contains(&from) {
            return;
        }
        self.agents[r].acks[k].insert(from);
        if self.agents[r].confirmed[k] || self.agents[r].acks[k].len() <= self.threshold(r, kind) {
            return;
        }
        self.agents[r].confirmed[k] = true;
        let term = self.agents[r].term;
        match kind {
            LeaderKind::Primary => {
                self.audit
                    .confirmed_primaries
                    .entry(term)
                    .or_default()
                    .insert(r);
                self.log(|| format!("N{r} primary confirmed term {term}"));
            }
            LeaderKind::Secondary => {
                let a = &self.agents[r];
                let Some(primary) = a.primary else { return };
                let leaders = Leaders {
                    primary,
                    secondary: r,
                    group: a.group.clone(),
                    term,
                };
                let all: Vec<NodeId> = (0..self.n()).collect();
                self.send_from(r, &all, Payload::LeadersConfirmed(leaders));
            }
        }
    }
}

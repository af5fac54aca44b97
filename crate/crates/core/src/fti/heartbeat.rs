use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::message::{Event, LeaderKind, Message, Payload, Timer};
use super::Cluster;
use crate::node::NodeId;
use crate::sim::{random_delay, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anomaly {
    MissingHeartbeat(LeaderKind),
    TermMismatch(LeaderKind),
    /// The two leaders named different nodes under inspection on two
    /// consecutive ticks.
    PointerMismatch {
        primary: NodeId,
        secondary: NodeId,
    },
}

/// One node's view of the leaders' heartbeats.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeartbeatMonitor {
    last_seen: [SimTime; 2],
    pointers: BTreeMap<u64, [Option<NodeId>; 2]>,
    last_mismatch_tick: Option<u64>,
    pub anomaly: Option<Anomaly>,
    pub proposals: BTreeSet<NodeId>,
    pub(crate) proposed: bool,
}

impl HeartbeatMonitor {
    pub fn reset(&mut self, now: SimTime) {
        *self = HeartbeatMonitor {
            last_seen: [now; 2],
            ..Default::default()
        };
    }

    pub fn observe(
        &mut self,
        kind: LeaderKind,
        term: u64,
        tick: u64,
        inspecting: NodeId,
        now: SimTime,
        local_term: u64,
    ) -> Option<Anomaly> {
        let k = kind.index();
        self.last_seen[k] = now;
        if term != local_term {
            return self.raise(Anomaly::TermMismatch(kind));
        }
        let slot = self.pointers.entry(tick).or_default();
        slot[k] = Some(inspecting);
        if let [Some(p), Some(v)] = *slot {
            self.pointers.retain(|&t, _| t + 2 > tick);
            if p != v {
                let consecutive = self.last_mismatch_tick == Some(tick.wrapping_sub(1));
                self.last_mismatch_tick = Some(tick);
                if consecutive {
                    return self.raise(Anomaly::PointerMismatch {
                        primary: p,
                        secondary: v,
                    });
                }
            } else {
                self.last_mismatch_tick = None;
            }
        }
        None
    }

    /// `own` is the leader kind this node itself holds, if any; it does not
    /// hear its own heartbeats.
    pub fn check_gap(
        &mut self,
        now: SimTime,
        timeout_ms: u64,
        own: Option<LeaderKind>,
    ) -> Option<Anomaly> {
        for kind in [LeaderKind::Primary, LeaderKind::Secondary] {
            if own == Some(kind) {
                continue;
            }
            if now.ms().saturating_sub(self.last_seen[kind.index()].ms()) > timeout_ms {
                return self.raise(Anomaly::MissingHeartbeat(kind));
            }
        }
        None
    }

    // only the first anomaly is reported
    fn raise(&mut self, a: Anomaly) -> Option<Anomaly> {
        if self.anomaly.is_some() {
            return None;
        }
        self.anomaly = Some(a);
        Some(a)
    }
}

impl Cluster {
    /// Starts leader heartbeats and per-node monitoring for a sweep.
    pub(crate) fn start_heartbeats(&mut self) {
        let Some(l) = self.leaders.clone() else {
            return;
        };
        let now = self.kernel.now();
        self.runtime = super::LeaderRuntime {
            active: true,
            started_ms: now.ms(),
            ..Default::default()
        };
        self.reelection = None;
        for m in &mut self.monitors {
            m.reset(now);
        }
        let interval = self.config.heartbeat_interval_ms;
        for (kind, node) in [
            (LeaderKind::Primary, l.primary),
            (LeaderKind::Secondary, l.secondary),
        ] {
            self.kernel.schedule_in(
                0,
                Event::Timer {
                    node,
                    term: l.term,
                    timer: Timer::HeartbeatTick(kind),
                },
            );
        }
        for node in 0..self.n() {
            self.kernel.schedule_in(
                interval,
                Event::Timer {
                    node,
                    term: l.term,
                    timer: Timer::MonitorCheck,
                },
            );
        }
    }

    pub(crate) fn stop_heartbeats(&mut self) {
        self.runtime.active = false;
        self.kernel.clear();
    }

    /// Processes every event up to `until`, then moves the clock there.
    /// Returns true once a re-election has been agreed.
    pub(crate) fn pump_until(&mut self, until: SimTime) -> bool {
        while let Some(at) = self.kernel.peek_time() {
            if at > until {
                break;
            }
            let (_, ev) = self.kernel.pop().expect("peeked");
            self.handle(ev);
        }
        if until > self.kernel.now() {
            self.kernel
                .advance_to(until, "isolation_step")
                .expect("forward");
        }
        self.reelection.is_some()
    }

    pub(crate) fn leader_node(&self, kind: LeaderKind) -> Option<NodeId> {
        self.leaders.as_ref().map(|l| match kind {
            LeaderKind::Primary => l.primary,
            LeaderKind::Secondary => l.secondary,
        })
    }

    pub(crate) fn leader_silent(&self, kind: LeaderKind) -> bool {
        self.runtime.crashed[kind.index()]
            || self
                .leader_node(kind)
                .is_some_and(|n| self.agents[n].crashed)
    }

    pub(super) fn on_heartbeat_tick(&mut self, kind: LeaderKind, term: u64) {
        if !self.runtime.active
            || self.leaders.as_ref().is_none_or(|l| l.term != term)
            || self.leader_silent(kind)
        {
            return;
        }
        let node = self.leader_node(kind).expect("leaders set");
        let n = self.n();
        let interval = self.config.heartbeat_interval_ms;
        let tick = (self.kernel.now().ms() - self.runtime.started_ms) / interval;
        let k = kind.index();
        let mut inspecting = self.runtime.inspecting;
        if kind == LeaderKind::Secondary && self.runtime.skewed {
            inspecting = (inspecting + 1) % n;
        }
        if self.runtime.pointer_corrupt[k] {
            inspecting = (inspecting + 1) % n;
        }
        let others: Vec<NodeId> = (0..n).filter(|&i| i != node).collect();
        self.send_with_term(
            node,
            &others,
            term,
            Payload::Heartbeat {
                sender: kind,
                tick,
                inspecting,
            },
        );
        self.kernel.schedule_in(
            interval,
            Event::Timer {
                node,
                term,
                timer: Timer::HeartbeatTick(kind),
            },
        );
    }

    pub(super) fn on_monitor_check(&mut self, node: NodeId, term: u64) {
        if !self.runtime.active {
            return;
        }
        let now = self.kernel.now();
        let own = [LeaderKind::Primary, LeaderKind::Secondary]
            .into_iter()
            .find(|&k| self.leader_node(k) == Some(node));
        if let Some(a) = self.monitors[node].check_gap(now, self.config.heartbeat_timeout_ms, own) {
            self.anomaly_seen(node, a);
        }
        self.kernel.schedule_in(
            self.config.heartbeat_interval_ms,
            Event::Timer {
                node,
                term,
                timer: Timer::MonitorCheck,
            },
        );
    }

    fn anomaly_seen(&mut self, node: NodeId, a: Anomaly) {
        self.log(|| format!("N{node} anomaly {a:?}"));
        let delay = random_delay(
            &mut self.delay_rng[node],
            self.config.delay_min_ms,
            self.config.delay_max_ms,
        );
        let term = self.agents[node].term;
        self.kernel.schedule_in(
            delay,
            Event::Timer {
                node,
                term,
                timer: Timer::Reelect,
            },
        );
    }

    pub(super) fn on_reelect_timer(&mut self, node: NodeId, _term: u64) {
        if !self.runtime.active {
            return;
        }
        self.monitors[node].proposed = true;
        let all: Vec<NodeId> = (0..self.n()).collect();
        self.send_from(node, &all, Payload::ReelectProposal);
    }

    pub(super) fn on_sweep_message(&mut self, msg: Message) {
        let r = msg.dst;
        if !self.runtime.active {
            return;
        }
        match msg.body {
            Payload::Heartbeat {
                sender,
                tick,
                inspecting,
            } => {
                let local = self.agents[r].term;
                let now = self.kernel.now();
                if let Some(a) =
                    self.monitors[r].observe(sender, msg.term, tick, inspecting, now, local)
                {
                    self.anomaly_seen(r, a);
                }
            }
            Payload::ReelectProposal => {
                let m = &mut self.monitors[r];
                m.proposals.insert(msg.src.node);
                if m.proposed && m.proposals.len() > self.n() / 2 && self.reelection.is_none() {
                    let l = self.leaders.as_ref().expect("sweep has leaders");
                    let banned: BTreeSet<NodeId> = [l.primary, l.secondary].into_iter().collect();
                    let all: Vec<NodeId> = (0..self.n()).collect();
                    self.send_from(r, &all, Payload::ElectionStart { banned });
                }
            }
            Payload::ElectionStart { banned }
                if self.reelection.is_none() && msg.term == self.agents[r].term =>
            {
                self.counters.reelections += 1;
                self.reelection = Some(banned);
            }
            _ => {}
        }
    }
}

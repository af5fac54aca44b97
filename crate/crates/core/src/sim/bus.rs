use std::collections::BTreeMap;

use super::kernel::{Kernel, Traced};

/// Implemented by bus messages: a (sender, receiver) channel key and a
/// per-channel sequence number stamped at send time.
pub trait Routed {
    fn channel(&self) -> (u64, u64);
    fn seq(&self) -> u64;
    fn set_seq(&mut self, seq: u64);
}

/// Counts delivered messages and channel-order violations.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DeliveryAudit {
    pub sent: u64,
    pub delivered: u64,
    pub violations: u64,
}

/// Reliable point-to-point channels with a fixed latency.
///
/// Loss exists only at the sender (a crashed core never calls `send`), so
/// every stamped message is delivered exactly once and in channel order.
#[derive(Debug)]
pub struct Bus {
    latency_ms: u64,
    next_seq: BTreeMap<(u64, u64), u64>,
    expected: BTreeMap<(u64, u64), u64>,
    audit: DeliveryAudit,
}

impl Bus {
    pub fn new(latency_ms: u64) -> Self {
        Bus {
            latency_ms,
            next_seq: BTreeMap::new(),
            expected: BTreeMap::new(),
            audit: DeliveryAudit::default(),
        }
    }

    pub fn latency_ms(&self) -> u64 {
        self.latency_ms
    }

    pub fn send<M, E>(&mut self, kernel: &mut Kernel<E>, mut msg: M)
    where
        M: Routed,
        E: Traced + From<M>,
    {
        let slot = self.next_seq.entry(msg.channel()).or_insert(0);
        msg.set_seq(*slot);
        *slot += 1;
        self.audit.sent += 1;
        kernel.schedule_in(self.latency_ms, E::from(msg));
    }

    /// Called by the receiver for every delivered message.
    pub fn on_deliver<M: Routed>(&mut self, msg: &M) {
        let slot = self.expected.entry(msg.channel()).or_insert(0);
        if msg.seq() != *slot {
            self.audit.violations += 1;
        }
        *slot = msg.seq() + 1;
        self.audit.delivered += 1;
    }

    pub fn audit(&self) -> &DeliveryAudit {
        &self.audit
    }
}

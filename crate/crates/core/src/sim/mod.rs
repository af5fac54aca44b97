//! Deterministic discrete-event kernel.
//!
//! Simulated time is kept in whole milliseconds. Events scheduled for the
//! same instant are processed in insertion order, and every processed event
//! is folded into a running FNV-1a trace hash so that two runs can be
//! compared cheaply.

mod bus;
mod kernel;
mod rng;

pub use bus::{Bus, DeliveryAudit, Routed};
pub use kernel::{Kernel, SimError, SimTime, TraceRecord, Traced};
pub use rng::{random_delay, Stream, StreamKind, Streams};

/// 64-bit FNV-1a, used for trace hashes and DTList integrity checksums.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Fnv64;

/// Simulated milliseconds since the start of the run.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn after(self, delay_ms: u64) -> SimTime {
        SimTime(self.0 + delay_ms)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at {at}, current time is {now}")]
    InPast { at: SimTime, now: SimTime },
}

/// The fields that go into the event trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub kind: &'static str,
    pub src: String,
    pub dst: String,
    pub term: u64,
}

pub trait Traced {
    fn trace(&self) -> TraceRecord;
}

struct Pending<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<E> Eq for Pending<E> {}
impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Pending<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct Kernel<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Pending<E>>>,
    trace_hash: Fnv64,
    processed: u64,
    log: Option<Vec<String>>,
}

impl<E: Traced> Default for Kernel<E> {
    fn default() -> Self {
        Self::new(false)
    }
}

impl<E: Traced> Kernel<E> {
    pub fn new(keep_log: bool) -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace_hash: Fnv64::default(),
            processed: 0,
            log: keep_log.then(Vec::new),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Returns the event's sequence number, which doubles as its id.
    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<u64, SimError> {
        if at < self.now {
            return Err(SimError::InPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Pending { at, seq, event }));
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay_ms: u64, event: E) -> u64 {
        let at = self.now.after(delay_ms);
        self.schedule(at, event)
            .expect("relative schedule is never in the past")
    }

    /// Pops the next event, advancing the clock and folding it into the trace.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(p) = self.queue.pop()?;
        debug_assert!(p.at >= self.now);
        self.now = p.at;
        let rec = p.event.trace();
        self.record(&rec);
        Some((p.at, p.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(p)| p.at)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Drops all pending events without processing them.
    pub fn clear(&mut self) {
        self.queue.clear();
    }

    /// Moves the clock forward without an event (e.g. across a round of
    /// application execution) and records the step in the trace.
    pub fn advance_to(&mut self, at: SimTime, label: &'static str) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::InPast { at, now: self.now });
        }
        self.now = at;
        self.record(&TraceRecord {
            kind: label,
            src: String::new(),
            dst: String::new(),
            term: 0,
        });
        Ok(())
    }

    /// Adds an out-of-band record to the trace (local executions and the like).
    pub fn note(&mut self, rec: TraceRecord) {
        self.record(&rec);
    }

    fn record(&mut self, rec: &TraceRecord) {
        self.processed += 1;
        let h = &mut self.trace_hash;
        h.write_u64(self.now.0);
        h.write(rec.kind.as_bytes());
        h.write(&[0]);
        h.write(rec.src.as_bytes());
        h.write(&[0]);
        h.write(rec.dst.as_bytes());
        h.write(&[0]);
        h.write_u64(rec.term);
        if let Some(log) = self.log.as_mut() {
            log.push(format!(
                "{} {} {} {} {}",
                self.now.0, rec.kind, rec.src, rec.dst, rec.term
            ));
        }
    }

    pub fn trace_hash(&self) -> u64 {
        self.trace_hash.finish()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn log(&self) -> Option<&[String]> {
        self.log.as_deref()
    }
}

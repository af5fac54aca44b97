use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named consumers of randomness. Each gets its own stream so that changing
/// how much one consumer draws never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamKind {
    /// Copy outcomes during normal application execution, one per node.
    Execution,
    /// Placement of permanent faults onto cores.
    FaultPlacement,
    /// Accidental actions of faulty cores.
    Accidents,
    /// Random 150–300 ms election and re-election delays.
    Delays,
    /// Contact-core choice.
    Contact,
    /// Re-executions and reference executions during isolation.
    Isolation,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Execution => 0x45_58_45_43,
            StreamKind::FaultPlacement => 0x50_4c_41_43,
            StreamKind::Accidents => 0x41_43_43_49,
            StreamKind::Delays => 0x44_45_4c_59,
            StreamKind::Contact => 0x43_4f_4e_54,
            StreamKind::Isolation => 0x49_53_4f_4c,
        }
    }
}

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives independent sub-streams from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, kind: StreamKind, index: u64) -> Stream {
        let seed =
            splitmix64(splitmix64(self.master ^ kind.tag()) ^ splitmix64(index.wrapping_add(1)));
        ChaCha8Rng::seed_from_u64(seed)
    }
}

/// Uniform delay in the closed interval `[lo, hi]` milliseconds.
pub fn random_delay(stream: &mut Stream, lo: u64, hi: u64) -> u64 {
    stream.gen_range(lo..=hi)
}

use serde::{Deserialize, Serialize};

pub const DEFAULT_LOSS_THRESHOLD: u32 = 3;

/// Cores the detector wants logically disabled; the caller migrates their
/// work by rebuilding the schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorOrder {
    pub disable: Vec<usize>,
}

/// History-based detector: a core that ends up on the losing side of `k`
/// consecutive majority votes is disabled. Votes without a majority are
/// ignored.
///
/// In `broken` mode the detector misfires once by disabling the winning
/// cores instead, then stops reacting for the rest of the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtmrDetector {
    threshold: u32,
    losses: Vec<u32>,
    broken: bool,
    frozen: bool,
}

impl RtmrDetector {
    pub fn new(cores: usize, threshold: u32) -> Self {
        RtmrDetector {
            threshold: threshold.max(1),
            losses: vec![0; cores],
            broken: false,
            frozen: false,
        }
    }

    pub fn broken(cores: usize, threshold: u32) -> Self {
        RtmrDetector {
            broken: true,
            ..Self::new(cores, threshold)
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn losses(&self, core: usize) -> u32 {
        self.losses[core]
    }

    pub fn observe(
        &mut self,
        winners: &[usize],
        losers: &[usize],
        enabled: &[usize],
    ) -> Option<DetectorOrder> {
        if self.frozen || winners.is_empty() {
            return None;
        }
        for &w in winners {
            self.losses[w] = 0;
        }
        let mut fired = Vec::new();
        for &l in losers {
            if winners.contains(&l) || fired.contains(&l) {
                continue;
            }
            self.losses[l] += 1;
            if self.losses[l] >= self.threshold {
                fired.push(l);
            }
        }
        if fired.is_empty() {
            return None;
        }
        let mut targets: Vec<usize> = if self.broken {
            self.frozen = true;
            winners.to_vec()
        } else {
            fired
        };
        targets.sort_unstable();
        targets.dedup();
        targets.retain(|c| enabled.contains(c));
        // never leave the node without an enabled core
        while !targets.is_empty() && targets.len() >= enabled.len() {
            targets.pop();
        }
        for &t in &targets {
            self.losses[t] = 0;
        }
        (!targets.is_empty()).then_some(DetectorOrder { disable: targets })
    }
}

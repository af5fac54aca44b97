//! TMR execution policies: replica placement, two-phase voting, dispute
//! recording and the reactive history-based core detector.

mod dtlist;
mod rtmr;
mod schedule;
mod vote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dtlist::{record_dispute, DisputedEntry, DtList};
pub use rtmr::{DetectorOrder, RtmrDetector, DEFAULT_LOSS_THRESHOLD};
pub use schedule::{build_schedule, Assignment, Schedule, ScheduleError};
pub use vote::{majority, run_task_tmr, FinalValue, TaskRun, VoteOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    CTmr,
    TpTmr,
    TpTmrPlus,
    RTmr,
    FtiTmr,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::CTmr,
        PolicyKind::TpTmr,
        PolicyKind::TpTmrPlus,
        PolicyKind::RTmr,
        PolicyKind::FtiTmr,
    ];

    /// Two mandatory copies plus an on-demand third.
    pub fn is_two_phase(self) -> bool {
        !matches!(self, PolicyKind::CTmr)
    }

    /// Replicas of one task go to pairwise distinct cores when possible.
    pub fn distinct_cores(self) -> bool {
        matches!(
            self,
            PolicyKind::TpTmrPlus | PolicyKind::RTmr | PolicyKind::FtiTmr
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::CTmr => "C-TMR",
            PolicyKind::TpTmr => "TP-TMR",
            PolicyKind::TpTmrPlus => "TP-TMR+",
            PolicyKind::RTmr => "R-TMR",
            PolicyKind::FtiTmr => "FTI-TMR",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            PolicyKind::CTmr => "c_tmr",
            PolicyKind::TpTmr => "tp_tmr",
            PolicyKind::TpTmrPlus => "tp_tmr_plus",
            PolicyKind::RTmr => "r_tmr",
            PolicyKind::FtiTmr => "fti_tmr",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s
            .to_ascii_lowercase()
            .replace(['-', ' '], "_")
            .replace('+', "_plus");
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.key() == norm)
            .ok_or_else(|| format!("unknown policy `{s}` (expected one of c_tmr, tp_tmr, tp_tmr_plus, r_tmr, fti_tmr)"))
    }
}

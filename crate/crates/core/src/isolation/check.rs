use serde::{Deserialize, Serialize};

use crate::fault::Token;
use crate::tmr::DisputedEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreVerdict {
    FaultFree,
    Faulty,
    Unresponsive,
    /// Every entry is inside its backoff window; the core keeps whatever
    /// status it had.
    Unchanged,
}

/// Supplies reference results and triple re-executions to `check_core`.
/// Either call may abandon the check (for instance when leader arbitration
/// needs a re-election).
pub trait CheckEnv {
    type Abort;
    fn reference(&mut self, entry: &DisputedEntry) -> Result<Token, Self::Abort>;
    /// Three results from the core under test, or `None` if it stayed silent.
    fn execute_thrice(&mut self, entry: &DisputedEntry) -> Result<Option<[Token; 3]>, Self::Abort>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreCheck {
    pub verdict: CoreVerdict,
    /// Indices into the partition of entries that passed.
    pub passed: Vec<usize>,
    /// Index of the entry whose re-execution mismatched.
    pub failed: Option<usize>,
}

/// Walks a core's DTList partition in order, skipping entries under
/// backoff. All three re-executions of an entry must match the reference;
/// the first mismatch condemns the core and ends its check.
pub fn check_core<E: CheckEnv>(
    partition: &[DisputedEntry],
    sweep: u32,
    env: &mut E,
) -> Result<CoreCheck, E::Abort> {
    let mut check = CoreCheck {
        verdict: CoreVerdict::FaultFree,
        passed: Vec::new(),
        failed: None,
    };
    if partition.is_empty() {
        return Ok(check);
    }
    let due: Vec<usize> = (0..partition.len())
        .filter(|&i| !partition[i].under_backoff(sweep))
        .collect();
    if due.is_empty() {
        check.verdict = CoreVerdict::Unchanged;
        return Ok(check);
    }
    for i in due {
        let entry = &partition[i];
        let reference = env.reference(entry)?;
        match env.execute_thrice(entry)? {
            None => {
                check.verdict = CoreVerdict::Unresponsive;
                return Ok(check);
            }
            Some(results) if results.iter().all(|&t| t == reference) => check.passed.push(i),
            Some(_) => {
                check.verdict = CoreVerdict::Faulty;
                check.failed = Some(i);
                return Ok(check);
            }
        }
    }
    Ok(check)
}

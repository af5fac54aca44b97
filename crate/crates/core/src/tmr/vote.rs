use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PolicyKind;
use crate::fault::{CopyOutcome, FaultModel, InputToken, Token, TokenMint};
use crate::node::CoreState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalValue {
    Value(Token),
    /// No two copies agreed.
    SystemFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteOutcome {
    pub final_value: FinalValue,
    /// Any inconsistency among the executed copies, including a system failure.
    pub disputed: bool,
    pub copies_executed: u8,
    pub failed_copies: u8,
}

impl VoteOutcome {
    pub fn is_correct_for(&self, input: InputToken) -> bool {
        self.final_value == FinalValue::Value(Token::correct_for(input))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRun {
    pub outcome: VoteOutcome,
    /// (core index, result) for each executed copy in execution order.
    pub copies: Vec<(usize, CopyOutcome)>,
}

impl TaskRun {
    /// Cores whose copy matched the majority value and those whose copy did
    /// not. Both are empty when the vote had no majority.
    pub fn winners_and_losers(&self) -> (Vec<usize>, Vec<usize>) {
        match self.outcome.final_value {
            FinalValue::SystemFailure => (Vec::new(), Vec::new()),
            FinalValue::Value(v) => {
                let (w, l): (Vec<_>, Vec<_>) =
                    self.copies.iter().partition(|(_, o)| o.token() == v);
                (
                    w.into_iter().map(|(c, _)| c).collect(),
                    l.into_iter().map(|(c, _)| c).collect(),
                )
            }
        }
    }

    pub fn participants(&self) -> Vec<usize> {
        self.copies.iter().map(|&(c, _)| c).collect()
    }
}

/// A token held by at least two of the given copies.
pub fn majority(tokens: &[Token]) -> Option<Token> {
    tokens
        .iter()
        .enumerate()
        .find(|(i, t)| tokens[i + 1..].contains(t))
        .map(|(_, &t)| t)
}

/// Runs one task under a TMR policy. `replicas` are the scheduled cores for
/// copies 0, 1 and 2; two-phase policies only run the third on a mismatch.
#[allow(clippy::too_many_arguments)]
pub fn run_task_tmr<R: Rng>(
    input: InputToken,
    duration: f64,
    policy: PolicyKind,
    replicas: [usize; 3],
    cores: &[CoreState],
    faults: &FaultModel,
    rng: &mut R,
    mint: &mut TokenMint,
) -> TaskRun {
    let mut exec = |core: usize| {
        (
            core,
            faults.sample_copy_outcome(&cores[core], input, duration, rng, mint),
        )
    };
    let mut copies = vec![exec(replicas[0]), exec(replicas[1])];
    let run_third = !policy.is_two_phase() || copies[0].1.token() != copies[1].1.token();
    if run_third {
        copies.push(exec(replicas[2]));
    }
    let tokens: Vec<Token> = copies.iter().map(|(_, o)| o.token()).collect();
    let final_value = majority(&tokens).map_or(FinalValue::SystemFailure, FinalValue::Value);
    let disputed = tokens.iter().any(|&t| t != tokens[0]);
    let failed_copies = copies.iter().filter(|(_, o)| !o.is_correct()).count() as u8;
    TaskRun {
        outcome: VoteOutcome {
            final_value,
            disputed,
            copies_executed: copies.len() as u8,
            failed_copies,
        },
        copies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{PermanentFaultConfig, TransientFaultConfig};
    use crate::node::{CoreAddr, Health};
    use crate::sim::{StreamKind, Streams};

    fn cores(faulty: [bool; 3]) -> Vec<CoreState> {
        faulty
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let mut c = CoreState::new(CoreAddr { node: 0, core: i }, 3);
                if f {
                    c.health = Health::PermanentFault;
                }
                c
            })
            .collect()
    }

    fn no_transients() -> FaultModel {
        let t = TransientFaultConfig {
            lambda0: 0.0,
            ..Default::default()
        };
        FaultModel::new(t, PermanentFaultConfig::default()).unwrap()
    }

    #[test]
    fn majority_cases() {
        let (a, b, c) = (Token(1), Token(2), Token(3));
        assert_eq!(majority(&[a, a]), Some(a));
        assert_eq!(majority(&[a, b]), None);
        assert_eq!(majority(&[a, b, b]), Some(b));
        assert_eq!(majority(&[a, b, a]), Some(a));
        assert_eq!(majority(&[a, b, c]), None);
    }

    // Exhaustive over which of the three potential copies are on faulty
    // cores (epsilon = 0, no transients), compared against a direct count.
    #[test]
    fn all_correctness_patterns_match_oracle() {
        let faults = no_transients();
        let input = InputToken::new(7, 1);
        let mut rng = Streams::new(1).stream(StreamKind::Execution, 0);
        for policy in PolicyKind::ALL {
            for mask in 0u8..8 {
                let faulty = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
                let cs = cores(faulty);
                let mut mint = TokenMint::default();
                let run = run_task_tmr(
                    input,
                    1.0,
                    policy,
                    [0, 1, 2],
                    &cs,
                    &faults,
                    &mut rng,
                    &mut mint,
                );
                let correct_potential = faulty.iter().filter(|&&f| !f).count();
                assert_eq!(
                    run.outcome.is_correct_for(input),
                    correct_potential >= 2,
                    "{policy} {mask:03b}"
                );
                let mandatory_ok = !faulty[0] && !faulty[1];
                if policy.is_two_phase() {
                    assert_eq!(
                        run.outcome.copies_executed == 2,
                        mandatory_ok,
                        "{policy} {mask:03b}"
                    );
                } else {
                    assert_eq!(run.outcome.copies_executed, 3);
                }
                let executed_faulty = faulty[..run.outcome.copies_executed as usize]
                    .iter()
                    .filter(|&&f| f)
                    .count();
                assert_eq!(run.outcome.failed_copies as usize, executed_faulty);
                assert_eq!(run.outcome.disputed, executed_faulty > 0);
                if run.outcome.final_value == FinalValue::SystemFailure {
                    assert!(run.outcome.disputed);
                }
            }
        }
    }

    #[test]
    fn winners_and_losers_split() {
        let faults = no_transients();
        let cs = cores([false, true, false]);
        let mut rng = Streams::new(1).stream(StreamKind::Execution, 0);
        let mut mint = TokenMint::default();
        let run = run_task_tmr(
            InputToken::new(1, 0),
            1.0,
            PolicyKind::RTmr,
            [0, 1, 2],
            &cs,
            &faults,
            &mut rng,
            &mut mint,
        );
        assert_eq!(run.winners_and_losers(), (vec![0, 2], vec![1]));
        let cs = cores([true, true, false]);
        let run = run_task_tmr(
            InputToken::new(1, 0),
            1.0,
            PolicyKind::RTmr,
            [0, 1, 2],
            &cs,
            &faults,
            &mut rng,
            &mut mint,
        );
        assert_eq!(run.outcome.final_value, FinalValue::SystemFailure);
        assert_eq!(run.winners_and_losers(), (vec![], vec![]));
    }
}

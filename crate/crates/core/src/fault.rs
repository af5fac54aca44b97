//! Fault model: transient faults from a voltage-scaled Poisson rate, and
//! permanently faulty cores that compute wrong results and take accidental
//! actions during protocol interactions.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{CoreState, NodeId};
use crate::workload::TaskId;

#[derive(Debug, Error, PartialEq)]
pub enum FaultConfigError {
    #[error(
        "s_min must lie in (0, 1) and not exceed s_level (got s_min={s_min}, s_level={s_level})"
    )]
    Levels { s_min: f64, s_level: f64 },
    #[error("s_level must lie in (0, 1], got {0}")]
    Level(f64),
    #[error("{name} must be non-negative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be a probability in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransientFaultConfig {
    /// Fault rate at the maximum level, per second.
    pub lambda0: f64,
    /// Technology constant.
    pub d: f64,
    pub s_level: f64,
    pub s_min: f64,
}

impl Default for TransientFaultConfig {
    fn default() -> Self {
        TransientFaultConfig {
            lambda0: 1e-6,
            d: 3.0,
            s_level: 1.45 / 1.55,
            s_min: 0.85 / 1.55,
        }
    }
}

impl TransientFaultConfig {
    pub fn validate(&self) -> Result<(), FaultConfigError> {
        for (name, value) in [("lambda0", self.lambda0), ("d", self.d)] {
            if !value.is_finite() || value < 0.0 {
                return Err(FaultConfigError::Negative { name, value });
            }
        }
        if !(self.s_level > 0.0 && self.s_level <= 1.0) {
            return Err(FaultConfigError::Level(self.s_level));
        }
        if !(self.s_min > 0.0 && self.s_min < 1.0 && self.s_min <= self.s_level) {
            return Err(FaultConfigError::Levels {
                s_min: self.s_min,
                s_level: self.s_level,
            });
        }
        Ok(())
    }
}

/// `λ = λ₀ · 10^(d·(1−S)/(1−S_min))`, faults per second.
pub fn transient_rate(cfg: &TransientFaultConfig) -> Result<f64, FaultConfigError> {
    cfg.validate()?;
    Ok(rate_unchecked(cfg))
}

fn rate_unchecked(cfg: &TransientFaultConfig) -> f64 {
    cfg.lambda0 * 10f64.powf(cfg.d * (1.0 - cfg.s_level) / (1.0 - cfg.s_min))
}

/// `F = 1 − e^(−λ·T)`: probability that a task of `duration` seconds hits at
/// least one transient fault.
pub fn transient_fault_prob(lambda: f64, duration: f64) -> f64 {
    -(-lambda * duration).exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermanentFaultConfig {
    pub faulty_cores: BTreeMap<NodeId, BTreeSet<usize>>,
    /// Probability that a permanently faulty core still returns a correct result.
    pub correct_result_prob: f64,
    /// Probability of an accidental action per protocol interaction.
    pub accident_prob: f64,
}

impl Default for PermanentFaultConfig {
    fn default() -> Self {
        PermanentFaultConfig {
            faulty_cores: BTreeMap::new(),
            correct_result_prob: 0.0,
            accident_prob: 0.5,
        }
    }
}

impl PermanentFaultConfig {
    pub fn validate(&self) -> Result<(), FaultConfigError> {
        for (name, value) in [
            ("correct_result_prob", self.correct_result_prob),
            ("accident_prob", self.accident_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FaultConfigError::Probability { name, value });
            }
        }
        Ok(())
    }
}

/// Task input data: the task id and the execution round, packed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InputToken(pub u64);

impl InputToken {
    pub fn new(task: TaskId, round: u32) -> Self {
        InputToken((u64::from(round) << 32) | u64::from(task))
    }

    pub fn task(self) -> TaskId {
        self.0 as u32
    }

    pub fn round(self) -> u32 {
        (self.0 >> 32) as u32
    }
}

/// A task output. Correct outputs are a pure function of the input and have
/// the top bit clear; wrong outputs come from a [`TokenMint`] and are unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token(pub u64);

const WRONG_BIT: u64 = 1 << 63;

impl Token {
    pub fn correct_for(input: InputToken) -> Token {
        let mut z = input.0 ^ 0x5851_f42d_4c95_7f2d;
        z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
        z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
        Token((z ^ (z >> 33)) & !WRONG_BIT)
    }

    pub fn is_wrong(self) -> bool {
        self.0 & WRONG_BIT != 0
    }
}

/// Hands out run-unique wrong results.
#[derive(Debug, Default, Clone)]
pub struct TokenMint {
    issued: u64,
}

impl TokenMint {
    pub fn wrong(&mut self) -> Token {
        self.issued += 1;
        Token(WRONG_BIT | self.issued)
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyOutcome {
    Correct(Token),
    Corrupted(Token),
}

impl CopyOutcome {
    pub fn token(self) -> Token {
        match self {
            CopyOutcome::Correct(t) | CopyOutcome::Corrupted(t) => t,
        }
    }

    pub fn is_correct(self) -> bool {
        matches!(self, CopyOutcome::Correct(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccidentContext {
    Election,
    Isolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accident {
    None,
    /// Silent until the current protocol phase times out.
    Crash,
    /// This one interaction gets no response.
    Timeout,
    /// Attached term is one behind.
    StaleTerm,
    /// Payload damaged; detectable by the receiver.
    CorruptPayload,
}

pub const ACCIDENT_KINDS: [Accident; 4] = [
    Accident::Crash,
    Accident::Timeout,
    Accident::StaleTerm,
    Accident::CorruptPayload,
];

/// Validated transient and permanent fault configuration with the derived
/// transient rate cached.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultModel {
    pub transient: TransientFaultConfig,
    pub permanent: PermanentFaultConfig,
    lambda: f64,
}

impl FaultModel {
    pub fn new(
        transient: TransientFaultConfig,
        permanent: PermanentFaultConfig,
    ) -> Result<Self, FaultConfigError> {
        let lambda = transient_rate(&transient)?;
        permanent.validate()?;
        Ok(FaultModel {
            transient,
            permanent,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn task_fault_prob(&self, duration: f64) -> f64 {
        transient_fault_prob(self.lambda, duration)
    }

    /// Executes one copy of a task with the given input on `core`.
    pub fn sample_copy_outcome<R: Rng>(
        &self,
        core: &CoreState,
        input: InputToken,
        duration: f64,
        rng: &mut R,
        mint: &mut TokenMint,
    ) -> CopyOutcome {
        let correct = if core.is_faulty() {
            let eps = self.permanent.correct_result_prob;
            eps > 0.0 && rng.gen_bool(eps)
        } else {
            let f = self.task_fault_prob(duration);
            !(f > 0.0 && rng.gen_bool(f.min(1.0)))
        };
        if correct {
            CopyOutcome::Correct(Token::correct_for(input))
        } else {
            CopyOutcome::Corrupted(mint.wrong())
        }
    }

    /// Healthy cores never take accidents; faulty ones do with `accident_prob`,
    /// the kind drawn uniformly.
    pub fn sample_accident<R: Rng>(
        &self,
        core: &CoreState,
        _context: AccidentContext,
        rng: &mut R,
    ) -> Accident {
        if !core.is_faulty() {
            return Accident::None;
        }
        let p = self.permanent.accident_prob;
        if p <= 0.0 || !rng.gen_bool(p) {
            return Accident::None;
        }
        ACCIDENT_KINDS[rng.gen_range(0..ACCIDENT_KINDS.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{CoreAddr, Health};
    use crate::sim::{StreamKind, Streams};

    fn core(health: Health) -> CoreState {
        let mut c = CoreState::new(CoreAddr { node: 0, core: 0 }, 4);
        c.health = health;
        c
    }

    #[test]
    fn default_rate() {
        // exponent is exactly 3/7
        let expected = 1e-6 * 10f64.powf(3.0 / 7.0);
        let lambda = transient_rate(&TransientFaultConfig::default()).unwrap();
        assert!((lambda - expected).abs() < 1e-18);
        assert!((lambda - 2.6827e-6).abs() < 1e-10);
    }

    #[test]
    fn rate_edge_cases() {
        let top = TransientFaultConfig {
            s_level: 1.0,
            ..Default::default()
        };
        assert_eq!(transient_rate(&top).unwrap(), 1e-6);
        let flat = TransientFaultConfig {
            d: 0.0,
            s_level: 0.6,
            ..Default::default()
        };
        assert_eq!(transient_rate(&flat).unwrap(), 1e-6);
        let bad = TransientFaultConfig {
            s_min: 1.0,
            s_level: 1.0,
            ..Default::default()
        };
        assert!(transient_rate(&bad).is_err());
        let inverted = TransientFaultConfig {
            s_min: 0.9,
            s_level: 0.8,
            ..Default::default()
        };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn fault_prob_values() {
        assert_eq!(transient_fault_prob(2.6827e-6, 0.0), 0.0);
        let x: f64 = 2.6827e-6 * 100.0;
        let series = x - x * x / 2.0;
        assert!((transient_fault_prob(2.6827e-6, 100.0) - series).abs() < 1e-10);
        assert!((transient_fault_prob(2.6827e-6, 100.0) - 2.6823e-4).abs() < 1e-8);
        assert_eq!(transient_fault_prob(f64::INFINITY, 1.0), 1.0);
        assert!(transient_fault_prob(1e6, 1.0) > 0.999_999);
    }

    #[test]
    fn faulty_core_never_correct_with_zero_eps() {
        let model = FaultModel::new(Default::default(), Default::default()).unwrap();
        let mut rng = Streams::new(1).stream(StreamKind::Execution, 0);
        let mut mint = TokenMint::default();
        let c = core(Health::PermanentFault);
        for r in 0..1000 {
            let out =
                model.sample_copy_outcome(&c, InputToken::new(1, r), 5.0, &mut rng, &mut mint);
            assert!(!out.is_correct());
        }
    }

    #[test]
    fn healthy_core_without_exposure_always_correct() {
        let t = TransientFaultConfig {
            lambda0: 0.0,
            ..Default::default()
        };
        let model = FaultModel::new(t, Default::default()).unwrap();
        let mut rng = Streams::new(1).stream(StreamKind::Execution, 0);
        let mut mint = TokenMint::default();
        let c = core(Health::Healthy);
        let input = InputToken::new(4, 2);
        for _ in 0..1000 {
            assert_eq!(
                model.sample_copy_outcome(&c, input, 50.0, &mut rng, &mut mint),
                CopyOutcome::Correct(Token::correct_for(input))
            );
        }
    }

    #[test]
    fn forced_half_corruption_rate() {
        // λ·T = ln 2 gives F = 0.5
        let t = TransientFaultConfig {
            lambda0: std::f64::consts::LN_2,
            s_level: 1.0,
            ..Default::default()
        };
        let model = FaultModel::new(t, Default::default()).unwrap();
        assert!((model.task_fault_prob(1.0) - 0.5).abs() < 1e-12);
        let mut rng = Streams::new(5).stream(StreamKind::Execution, 0);
        let mut mint = TokenMint::default();
        let c = core(Health::Healthy);
        let bad = (0..10_000)
            .filter(|&r| {
                !model
                    .sample_copy_outcome(&c, InputToken::new(0, r), 1.0, &mut rng, &mut mint)
                    .is_correct()
            })
            .count();
        assert!((bad as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn accident_distribution() {
        let mut rng = Streams::new(11).stream(StreamKind::Accidents, 0);
        let healthy_model = FaultModel::new(
            Default::default(),
            PermanentFaultConfig {
                accident_prob: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((0..1000).all(|_| healthy_model.sample_accident(
            &core(Health::Healthy),
            AccidentContext::Election,
            &mut rng
        ) == Accident::None));
        let faulty = core(Health::PermanentFault);
        assert!((0..1000).all(|_| healthy_model.sample_accident(
            &faulty,
            AccidentContext::Isolation,
            &mut rng
        ) != Accident::None));

        let model = FaultModel::new(Default::default(), Default::default()).unwrap();
        let mut counts = BTreeMap::new();
        for _ in 0..10_000 {
            *counts
                .entry(model.sample_accident(&faulty, AccidentContext::Election, &mut rng))
                .or_insert(0u32) += 1;
        }
        let none = counts.get(&Accident::None).copied().unwrap_or(0) as f64;
        let fired = 10_000.0 - none;
        assert!((fired / 10_000.0 - 0.5).abs() < 0.02);
        for kind in ACCIDENT_KINDS {
            let share = counts[&kind] as f64 / fired;
            assert!((share - 0.25).abs() < 0.03, "{kind:?} share {share}");
        }
    }

    #[test]
    fn wrong_tokens_are_unique_and_distinct_from_correct() {
        let mut mint = TokenMint::default();
        let wrong: BTreeSet<Token> = (0..1000).map(|_| mint.wrong()).collect();
        assert_eq!(wrong.len(), 1000);
        assert!(wrong.iter().all(|t| t.is_wrong()));
        assert!((0..1000).all(|r| !Token::correct_for(InputToken::new(3, r)).is_wrong()));
        let input = InputToken::new(17, 9);
        assert_eq!((input.task(), input.round()), (17, 9));
    }
}

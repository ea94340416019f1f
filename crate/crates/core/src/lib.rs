//! Online tampering attacks on Boolean functions over product distributions.
//!
//! The attacker sees the blocks of a random input one at a time and may
//! replace a block with another value from the same block's support. Using
//! exact or Monte-Carlo estimates of conditional means it pushes the expected
//! output of a Boolean function towards one. The same machinery drives an
//! evasion harness (tampering test instances) and a clean-label poisoning
//! harness (tampering training examples without changing their labels).

pub mod attack;
pub mod bounds;
pub mod error;
pub mod estimator;
pub mod evasion;
pub mod experiment;
pub mod objective;
pub mod oracle;
pub mod poisoning;
pub mod rng;
pub mod space;
pub mod stats;

pub use attack::{
    measure, run_attack, schedule_params, AttackParams, AttackReport, AttackTrace, Attacker,
    EventKind, OracleMode, Schedule, StepEvent,
};
pub use error::{Error, Result};
pub use estimator::{estimate_gain, estimate_max_gain, EstimatorParams, MonteCarloOracle, Sampling};
pub use objective::{BooleanFn, Builtin, CountForm, ExactOracle, Objective};
pub use oracle::GainOracle;
pub use space::{hamming, BlockDomain, ProductSpace, Support, Value};

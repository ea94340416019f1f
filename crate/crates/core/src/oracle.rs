//! The interface the tampering rule uses to query gains.

use crate::error::Result;
use crate::rng::StreamRng;
use crate::space::Value;

/// Gain queries for a fixed objective over a fixed space.
///
/// The gain of a prefix `v_1..v_i` is `a(v_1..v_i) - a(v_1..v_{i-1})`, where
/// `a` is the conditional mean of the objective over a fresh completion.
pub trait GainOracle: Send + Sync {
    /// Largest gain over the next block's support and a value attaining it.
    fn max_gain(&self, prefix: &[Value], rng: &mut StreamRng) -> Result<(f64, Value)>;

    /// Gain of the last block of a non-empty prefix.
    fn gain(&self, prefix: &[Value], rng: &mut StreamRng) -> Result<f64>;

    /// Objective evaluations one `max_gain` call is charged for.
    fn max_gain_cost(&self) -> u64;

    /// Objective evaluations one `gain` call is charged for.
    fn gain_cost(&self) -> u64;
}

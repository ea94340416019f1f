//! Exact distribution of the tampered output by dynamic programming over
//! reachable tampered prefixes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::space::Value;

use super::exact::{best_candidate, ExactOracle};

#[derive(Clone, Debug, Serialize)]
pub struct ExactAttackSummary {
    /// Untampered mean of the objective.
    pub mu: f64,
    /// Mean of the objective on the tampered input.
    pub bias: f64,
    /// Expected number of tampering events.
    pub expected_tamperings: f64,
    /// Expected Hamming distance between original and tampered input.
    pub expected_hamming: f64,
    /// Smallest value, over reachable prefixes, of the expected gain of the
    /// next block restricted to the untouched branch.
    pub min_untouched_drift: f64,
    /// Number of distinct reachable tampered prefixes.
    pub reachable_prefixes: u64,
}

/// Runs the exact tampering rule with threshold `tau` over every original
/// input at once. Fails if the space has more than `cap` tuples.
pub fn enumerate_attack(oracle: &ExactOracle, tau: f64, cap: u128) -> Result<ExactAttackSummary> {
    let space = oracle.space();
    let n = space.n();
    match space.support_size() {
        Some(size) if size <= cap => {}
        size => {
            return Err(Error::CapExceeded { size: size.map_or("more than 2^128".into(), |s| s.to_string()), cap })
        }
    }
    let mu = oracle.mean(&[])?;
    if n == 0 {
        return Ok(ExactAttackSummary {
            mu,
            bias: mu,
            expected_tamperings: 0.0,
            expected_hamming: 0.0,
            min_untouched_drift: 0.0,
            reachable_prefixes: 1,
        });
    }

    let mut level: BTreeMap<Vec<Value>, f64> = BTreeMap::new();
    level.insert(Vec::new(), 1.0);
    let mut bias = 0.0;
    let mut tamperings = 0.0;
    let mut hamming = 0.0;
    let mut min_drift = f64::INFINITY;
    let mut reachable = 1u64;

    for i in 0..n {
        let last = i + 1 == n;
        let mut next: BTreeMap<Vec<Value>, f64> = BTreeMap::new();
        for (v, &mass) in &level {
            let (base, cands) = oracle.candidates(v)?;
            let (g_star, w) = best_candidate(base, &cands);
            let proactive = g_star >= tau;
            let w_mean = cands.iter().find(|c| c.value == w).expect("argmax is a candidate").mean;
            let mut drift = 0.0;
            for c in &cands {
                let q = mass * c.weight;
                let g = c.mean - base;
                let (vi, mean, tampered) = if proactive || g <= -tau {
                    (w, w_mean, true)
                } else {
                    drift += c.weight * g;
                    (c.value, c.mean, false)
                };
                if tampered {
                    tamperings += q;
                }
                if vi != c.value {
                    hamming += q;
                }
                if last {
                    bias += q * mean;
                } else {
                    let mut key = Vec::with_capacity(i + 1);
                    key.extend_from_slice(v);
                    key.push(vi);
                    *next.entry(key).or_insert(0.0) += q;
                }
            }
            min_drift = min_drift.min(drift);
        }
        reachable += next.len() as u64;
        level = next;
    }

    Ok(ExactAttackSummary {
        mu,
        bias,
        expected_tamperings: tamperings,
        expected_hamming: hamming,
        min_untouched_drift: min_drift,
        reachable_prefixes: reachable,
    })
}

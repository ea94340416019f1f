//! Monte-Carlo gain and max-gain estimates with fixed sample counts.
//!
//! `gain` compares two empirical means over fresh, independent completions;
//! `max_gain` draws `k_max` candidates for the next block from its own
//! distribution and keeps the first one with the largest estimated gain.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{ExactOracle, Objective};
use crate::oracle::GainOracle;
use crate::rng::StreamRng;
use crate::space::{ProductSpace, Value};

/// How the successes of `k` continuations are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Sample every completion and evaluate the objective.
    #[default]
    Literal,
    /// Draw the success count from `Binomial(k, a(prefix))` using the exact
    /// conditional mean. Same distribution as `Literal`, far cheaper.
    Binomial,
}

/// Continuations per empirical mean for accuracy `gamma`.
pub fn k_gain(gamma: f64) -> Result<u64> {
    check_gamma(gamma)?;
    let half = (gamma / 2.0).ln();
    let k = -12.0 * (half + (1.0 + gamma).ln().ln() - (-half).ln()) / (gamma * gamma);
    Ok((k.ceil() as u64).max(1))
}

/// Candidates per max-gain estimate for accuracy `gamma`.
pub fn k_max(gamma: f64) -> Result<u64> {
    check_gamma(gamma)?;
    let k = -(gamma / 2.0).ln() / (1.0 + gamma).ln();
    Ok((k.ceil() as u64).max(1))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("gamma", format!("must lie in (0, 1), got {gamma}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimatorParams {
    pub gamma: f64,
    pub k_gain: u64,
    pub k_max: u64,
    pub sampling: Sampling,
}

impl EstimatorParams {
    pub fn new(gamma: f64) -> Result<Self> {
        Ok(EstimatorParams { gamma, k_gain: k_gain(gamma)?, k_max: k_max(gamma)?, sampling: Sampling::Literal })
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    /// Evaluations charged for one gain estimate.
    pub fn gain_cost(&self) -> u64 {
        2 * self.k_gain
    }

    /// Evaluations charged for one max-gain estimate.
    pub fn max_gain_cost(&self) -> u64 {
        2 * self.k_gain * self.k_max
    }
}

enum Continuations {
    Generic,
    /// Literal draws of the set-count for count-form objectives over 0/1 blocks.
    Counting { exact: Arc<ExactOracle>, fair: bool },
    Binomial(Arc<ExactOracle>),
}

pub struct MonteCarloOracle {
    space: Arc<ProductSpace>,
    objective: Objective,
    params: EstimatorParams,
    continuations: Continuations,
}

impl MonteCarloOracle {
    pub fn new(space: Arc<ProductSpace>, objective: Objective, params: EstimatorParams) -> Result<Self> {
        let continuations = match params.sampling {
            Sampling::Binomial => Continuations::Binomial(Arc::new(ExactOracle::new(space.clone(), objective.clone())?)),
            Sampling::Literal => match ExactOracle::new(space.clone(), objective.clone()) {
                Ok(exact) if exact.uses_counting() => {
                    let fair = exact.count_table().expect("counting backend").ps.iter().all(|&p| p == 0.5);
                    Continuations::Counting { exact: Arc::new(exact), fair }
                }
                _ => Continuations::Generic,
            },
        };
        Ok(MonteCarloOracle { space, objective, params, continuations })
    }

    /// An estimator over the space and objective of an already built exact
    /// oracle, reusing it for binomial or counting draws.
    pub fn from_exact(exact: Arc<ExactOracle>, params: EstimatorParams) -> Self {
        let (space, objective) = (exact.space().clone(), exact.objective().clone());
        let continuations = match params.sampling {
            Sampling::Binomial => Continuations::Binomial(exact),
            Sampling::Literal if exact.uses_counting() => {
                let fair = exact.count_table().expect("counting backend").ps.iter().all(|&p| p == 0.5);
                Continuations::Counting { exact, fair }
            }
            Sampling::Literal => Continuations::Generic,
        };
        MonteCarloOracle { space, objective, params, continuations }
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    /// Number of objective successes over `k` fresh completions of `prefix`.
    pub fn successes(&self, prefix: &[Value], k: u64, rng: &mut StreamRng) -> u64 {
        match &self.continuations {
            Continuations::Generic => {
                let n = self.space.n();
                let mut buf = Vec::with_capacity(n);
                buf.extend_from_slice(prefix);
                buf.resize(n, 0);
                let mut hits = 0;
                for _ in 0..k {
                    self.space.fill_suffix(&mut buf, prefix.len(), rng);
                    hits += self.objective.eval(&buf) as u64;
                }
                hits
            }
            Continuations::Counting { exact, fair } => {
                self.objective.charge(k);
                let table = exact.count_table().expect("counting backend");
                let (i, c) = table.position(prefix);
                let accept = &table.form.accept;
                let rest = table.form.len - i;
                let mut hits = 0;
                if *fair {
                    let words = rest / 64;
                    let tail = rest % 64;
                    let mask = if tail == 0 { 0 } else { u64::MAX >> (64 - tail) };
                    for _ in 0..k {
                        let mut ones = c;
                        for _ in 0..words {
                            ones += rng.random::<u64>().count_ones() as usize;
                        }
                        if tail > 0 {
                            ones += (rng.random::<u64>() & mask).count_ones() as usize;
                        }
                        hits += accept[ones] as u64;
                    }
                } else {
                    let ps = &table.ps[i..];
                    for _ in 0..k {
                        let ones = c + ps.iter().filter(|&&p| rng.random::<f64>() < p).count();
                        hits += accept[ones] as u64;
                    }
                }
                hits
            }
            Continuations::Binomial(exact) => {
                self.objective.charge(k);
                let a = exact.mean_unchecked(prefix).clamp(0.0, 1.0);
                Binomial::new(k, a).expect("mean lies in [0, 1]").sample(rng)
            }
        }
    }

    fn gain_unchecked(&self, prefix: &[Value], rng: &mut StreamRng) -> f64 {
        let k = self.params.k_gain;
        let with = self.successes(prefix, k, rng);
        let without = self.successes(&prefix[..prefix.len() - 1], k, rng);
        (with as f64 - without as f64) / k as f64
    }
}

impl GainOracle for MonteCarloOracle {
    fn max_gain(&self, prefix: &[Value], rng: &mut StreamRng) -> Result<(f64, Value)> {
        let n = self.space.n();
        if prefix.len() >= n {
            return Err(Error::FullPrefix(n));
        }
        self.space.check_prefix(prefix)?;
        let block = &self.space.blocks()[prefix.len()];
        let mut buf = Vec::with_capacity(prefix.len() + 1);
        buf.extend_from_slice(prefix);
        buf.push(0);
        let mut best: Option<(f64, Value)> = None;
        for _ in 0..self.params.k_max {
            let x = block.sample(rng);
            *buf.last_mut().expect("non-empty") = x;
            let g = self.gain_unchecked(&buf, rng);
            if best.is_none_or(|(b, _)| g > b) {
                best = Some((g, x));
            }
        }
        Ok(best.expect("k_max >= 1"))
    }

    fn gain(&self, prefix: &[Value], rng: &mut StreamRng) -> Result<f64> {
        if prefix.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        self.space.check_prefix(prefix)?;
        Ok(self.gain_unchecked(prefix, rng))
    }

    fn max_gain_cost(&self) -> u64 {
        self.params.max_gain_cost()
    }

    fn gain_cost(&self) -> u64 {
        self.params.gain_cost()
    }
}

/// One gain estimate for `prefix` (which must be non-empty).
pub fn estimate_gain(
    space: Arc<ProductSpace>,
    objective: Objective,
    prefix: &[Value],
    params: EstimatorParams,
    rng: &mut StreamRng,
) -> Result<f64> {
    MonteCarloOracle::new(space, objective, params)?.gain(prefix, rng)
}

/// One max-gain estimate for the block after `prefix`.
pub fn estimate_max_gain(
    space: Arc<ProductSpace>,
    objective: Objective,
    prefix: &[Value],
    params: EstimatorParams,
    rng: &mut StreamRng,
) -> Result<(f64, Value)> {
    MonteCarloOracle::new(space, objective, params)?.max_gain(prefix, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Builtin;
    use crate::rng::{stream, Purpose};

    #[test]
    fn sample_counts_match_reference_values() {
        // Reference values computed independently from the closed forms.
        for (gamma, kg, km) in [(0.5, 126, 4), (0.3, 517, 8), (0.2, 1452, 13), (0.1, 7733, 32)] {
            assert_eq!(k_gain(gamma).unwrap(), kg, "k_gain({gamma})");
            assert_eq!(k_max(gamma).unwrap(), km, "k_max({gamma})");
        }
        assert_eq!(k_max(0.05).unwrap(), 76);
        assert!(k_gain(0.0).is_err());
        assert!(k_gain(1.0).is_err());
    }

    #[test]
    fn costs_are_charged() {
        let space = Arc::new(ProductSpace::uniform_bits(4));
        for f in [Objective::new(Builtin::Majority), Objective::from_fn("maj", |x| x.iter().sum::<u64>() > 2)] {
            let params = EstimatorParams::new(0.5).unwrap();
            let oracle = MonteCarloOracle::new(space.clone(), f.clone(), params).unwrap();
            let mut rng = stream(1, Purpose::Oracle, 0, 0);
            oracle.max_gain(&[1], &mut rng).unwrap();
            assert_eq!(f.calls(), params.max_gain_cost());
            oracle.gain(&[1, 0], &mut rng).unwrap();
            assert_eq!(f.calls(), params.max_gain_cost() + params.gain_cost());
        }
    }

    #[test]
    fn estimates_are_reproducible() {
        let space = Arc::new(ProductSpace::uniform_bits(6));
        let f = Objective::new(Builtin::Majority);
        let params = EstimatorParams::new(0.3).unwrap();
        let a = estimate_max_gain(space.clone(), f.clone(), &[1, 0], params, &mut stream(9, Purpose::Oracle, 0, 2));
        let b = estimate_max_gain(space, f, &[1, 0], params, &mut stream(9, Purpose::Oracle, 0, 2));
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn fused_and_generic_paths_agree_in_distribution() {
        // Same estimator, two implementations: compare the mean gain estimate.
        let space = Arc::new(ProductSpace::bernoulli(&[0.3, 0.6, 0.5, 0.8, 0.2]).unwrap());
        let fused = Objective::new(Builtin::Majority);
        let plain = Objective::from_fn("maj", |x| 2 * x.iter().filter(|&&v| v != 0).count() > x.len());
        let exact = ExactOracle::new(space.clone(), fused.clone()).unwrap();
        let truth = exact.gain(&[1, 0]).unwrap();
        let params = EstimatorParams::new(0.3).unwrap();
        let reps = 400;
        for (f, sampling) in [(fused.clone(), Sampling::Literal), (plain, Sampling::Literal), (fused, Sampling::Binomial)] {
            let oracle = MonteCarloOracle::new(space.clone(), f, params.with_sampling(sampling)).unwrap();
            let mut rng = stream(3, Purpose::Synthetic, 0, 0);
            let mean: f64 = (0..reps).map(|_| oracle.gain(&[1, 0], &mut rng).unwrap()).sum::<f64>() / reps as f64;
            // each estimate has sd <= 1/sqrt(2 k_gain)
            let sd = (0.5 / params.k_gain as f64).sqrt() / (reps as f64).sqrt();
            assert!((mean - truth).abs() < 5.0 * sd, "{sampling:?}: {mean} vs {truth}");
        }
    }

    #[test]
    fn prefix_errors() {
        let space = Arc::new(ProductSpace::uniform_bits(2));
        let oracle =
            MonteCarloOracle::new(space, Objective::new(Builtin::Xor(2)), EstimatorParams::new(0.5).unwrap()).unwrap();
        let mut rng = stream(0, Purpose::Oracle, 0, 0);
        assert!(matches!(oracle.gain(&[], &mut rng), Err(Error::EmptyPrefix)));
        assert!(matches!(oracle.max_gain(&[0, 0], &mut rng), Err(Error::FullPrefix(2))));
    }
}

//! Built-in verification suites: exact enumeration of the ideal attack,
//! empirical estimator tails, and empirical tails of approximately bounded
//! martingale-like sums.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{azuma_approx_bound, ideal_bias_bound, ideal_budget_bound};
use crate::error::Result;
use crate::estimator::{EstimatorParams, MonteCarloOracle};
use crate::objective::{enumerate_attack, BooleanFn, Builtin, ExactOracle, Objective};
use crate::oracle::GainOracle;
use crate::rng::{stream, Purpose};
use crate::space::{ProductSpace, Value, DEFAULT_ENUMERATION_CAP};
use crate::stats::proportion_sigma;

use std::sync::Arc;

/// Float slack for comparisons of exact enumeration results with bounds.
pub const EXACT_SLACK: f64 = 1e-9;
/// Slack on the drift of untouched steps.
pub const DRIFT_SLACK: f64 = 1e-12;

/// The Boolean functions of the exact suite for dimension `n`.
pub fn suite_functions(n: usize) -> Vec<Builtin> {
    let half = n.div_ceil(2);
    let weights: Vec<f64> = (1..=n).map(|w| w as f64).collect();
    let t = weights.iter().sum::<f64>() / 2.0;
    vec![
        Builtin::And(half),
        Builtin::Or(half),
        Builtin::Xor(n),
        Builtin::Majority,
        Builtin::Dictator(0),
        Builtin::Threshold { weights, t },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub n_min: usize,
    pub n_max: usize,
    pub taus: Vec<f64>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings { n_min: 3, n_max: 12, taus: vec![0.05, 0.1, 0.2, 0.3, 0.4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactCase {
    pub function: String,
    pub n: usize,
    pub tau: f64,
    pub mu: f64,
    pub bias: f64,
    pub bias_bound: f64,
    pub expected_tamperings: f64,
    pub budget_bound: f64,
    pub expected_hamming: f64,
    pub min_untouched_drift: f64,
    pub reachable_prefixes: u64,
    pub pass: bool,
}

/// Enumerates the exact attack for every function, dimension and threshold
/// of the settings over uniform bits.
pub fn verify_exact_suite(settings: &VerifySettings) -> Result<Vec<ExactCase>> {
    let jobs: Vec<(usize, Builtin)> =
        (settings.n_min..=settings.n_max).flat_map(|n| suite_functions(n).into_iter().map(move |f| (n, f))).collect();
    let nested = jobs
        .into_par_iter()
        .map(|(n, f)| {
            let space = Arc::new(ProductSpace::uniform_bits(n));
            let name = f.describe();
            let oracle = ExactOracle::new(space, Objective::new(f))?;
            settings.taus.iter().map(|&tau| exact_case(&oracle, &name, tau)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn exact_case(oracle: &ExactOracle, function: &str, tau: f64) -> Result<ExactCase> {
    let n = oracle.space().n();
    let s = enumerate_attack(oracle, tau, DEFAULT_ENUMERATION_CAP)?;
    let bias_bound = ideal_bias_bound(n, s.mu, tau);
    let budget_bound = ideal_budget_bound(n, s.mu, tau)?;
    let pass = s.bias >= bias_bound - EXACT_SLACK
        && s.expected_tamperings <= budget_bound + EXACT_SLACK
        && s.min_untouched_drift >= -DRIFT_SLACK;
    Ok(ExactCase {
        function: function.to_string(),
        n,
        tau,
        mu: s.mu,
        bias: s.bias,
        bias_bound,
        expected_tamperings: s.expected_tamperings,
        budget_bound,
        expected_hamming: s.expected_hamming,
        min_untouched_drift: s.min_untouched_drift,
        reachable_prefixes: s.reachable_prefixes,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSettings {
    pub cases: u64,
    pub calls: u64,
    pub gammas: Vec<f64>,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for TailSettings {
    fn default() -> Self {
        TailSettings { cases: 20, calls: 10_000, gammas: vec![0.1, 0.2, 0.3], n_min: 4, n_max: 12 }
    }
}

/// One empirical tail: `hits` of `calls` draws fell in the tail whose
/// probability should be at most `bound`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tail {
    pub hits: u64,
    pub rate: f64,
    pub bound: f64,
    /// Three binomial standard deviations at the bound.
    pub slack: f64,
    pub pass: bool,
}

impl Tail {
    pub fn new(hits: u64, calls: u64, bound: f64) -> Self {
        let rate = hits as f64 / calls as f64;
        let slack = 3.0 * proportion_sigma(bound, calls);
        Tail { hits, rate, bound, slack, pass: rate <= bound + slack }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailCase {
    pub case: u64,
    pub function: String,
    pub n: usize,
    /// Prefix of the max-gain query; the gain query appends `next`.
    pub prefix: Vec<Value>,
    pub next: Value,
    pub gamma: f64,
    pub k_gain: u64,
    pub k_max: u64,
    pub gain: f64,
    /// Largest `lambda` with `Pr[g(prefix, u) >= lambda] >= gamma`.
    pub lambda: f64,
    /// `|g~ - g| >= gamma`, at most `gamma / 2`.
    pub gain_tail: Tail,
    /// `g~* <= lambda - gamma`, at most `gamma`.
    pub lambda_tail: Tail,
    /// `g~* <= -2 gamma`, at most `gamma`.
    pub max_tail: Tail,
    pub pass: bool,
}

fn tail_functions(n: usize) -> Vec<Builtin> {
    let half = n.div_ceil(2);
    vec![
        Builtin::And(half),
        Builtin::Or(half),
        Builtin::Xor(n),
        Builtin::Majority,
        Builtin::Dictator(0),
        Builtin::Threshold { weights: vec![1.0; n], t: (n / 3) as f64 },
    ]
}

/// Random `(function, prefix, gamma)` cases over uniform bits, each queried
/// `calls` times with fresh randomness.
pub fn estimator_tails(settings: &TailSettings, seed: u64) -> Result<Vec<TailCase>> {
    (0..settings.cases).map(|case| tail_case(settings, seed, case)).collect()
}

pub fn tail_case(settings: &TailSettings, seed: u64, case: u64) -> Result<TailCase> {
    let mut rng = stream(seed, Purpose::Synthetic, case, 0);
    let n = rng.random_range(settings.n_min..=settings.n_max);
    let mut functions = tail_functions(n);
    let f = functions.swap_remove(rng.random_range(0..functions.len()));
    let gamma = settings.gammas[rng.random_range(0..settings.gammas.len())];
    let len = rng.random_range(0..n);
    let prefix: Vec<Value> = (0..len).map(|_| rng.random_range(0..2)).collect();
    let next = rng.random_range(0..2);

    let space = Arc::new(ProductSpace::uniform_bits(n));
    let function = f.describe();
    let exact = Arc::new(ExactOracle::new(space, Objective::new(f))?);
    let mut extended = prefix.clone();
    extended.push(next);
    let gain = exact.gain(&extended)?;
    let (base, cands) = exact.candidates(&prefix)?;
    let mut gains: Vec<(f64, f64)> = cands.iter().map(|c| (c.mean - base, c.weight)).collect();
    gains.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut mass = 0.0;
    let mut lambda = gains[0].0;
    for (g, w) in gains {
        lambda = g;
        mass += w;
        if mass >= gamma {
            break;
        }
    }

    let params = EstimatorParams::new(gamma)?;
    let estimator = MonteCarloOracle::from_exact(exact, params);
    let counts = (0..settings.calls)
        .into_par_iter()
        .map(|call| {
            let mut rng = stream(seed, Purpose::Synthetic, case, call + 1);
            let g = estimator.gain(&extended, &mut rng)?;
            let (g_star, _) = estimator.max_gain(&prefix, &mut rng)?;
            Ok([
                ((g - gain).abs() >= gamma) as u64,
                (g_star <= lambda - gamma) as u64,
                (g_star <= -2.0 * gamma) as u64,
            ])
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold([0u64; 3], |acc, x| [acc[0] + x[0], acc[1] + x[1], acc[2] + x[2]]);
    let gain_tail = Tail::new(counts[0], settings.calls, gamma / 2.0);
    let lambda_tail = Tail::new(counts[1], settings.calls, gamma);
    let max_tail = Tail::new(counts[2], settings.calls, gamma);
    Ok(TailCase {
        case,
        function,
        n,
        prefix,
        next,
        gamma,
        k_gain: params.k_gain,
        k_max: params.k_max,
        gain,
        lambda,
        pass: gain_tail.pass && lambda_tail.pass && max_tail.pass,
        gain_tail,
        lambda_tail,
        max_tail,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AzumaCase {
    pub n: usize,
    pub tau: f64,
    pub gamma: f64,
    pub s: f64,
    pub sequences: u64,
    pub tail: Tail,
}

/// Empirical `Pr[sum t_i <= -s]` for sequences whose steps are fair `+-tau`
/// coin flips, except that with probability `gamma` a step is replaced by a
/// drop of `-1`. Each step then exceeds `tau` in magnitude with probability
/// `gamma` and has conditional mean `-gamma`.
pub fn azuma_case(n: usize, tau: f64, gamma: f64, s: f64, sequences: u64, seed: u64, index: u64) -> AzumaCase {
    // outlier when the top 53 bits fall below gamma
    let cutoff = (gamma * (1u64 << 53) as f64) as u64;
    let hits: u64 = (0..sequences)
        .into_par_iter()
        .map(|seq| {
            let mut rng = stream(seed, Purpose::Synthetic, index, seq);
            let mut sum = 0.0;
            for _ in 0..n {
                let r: u64 = rng.random();
                sum += if (r >> 11) < cutoff {
                    -1.0
                } else if r & 1 == 1 {
                    tau
                } else {
                    -tau
                };
            }
            (sum <= -s) as u64
        })
        .sum();
    AzumaCase { n, tau, gamma, s, sequences, tail: Tail::new(hits, sequences, azuma_approx_bound(n, tau, gamma, s)) }
}

/// The default grid: `s = c tau sqrt(n) + n gamma` so that every bound is
/// non-trivial.
pub fn azuma_grid(sequences: u64, seed: u64) -> Vec<AzumaCase> {
    let mut out = Vec::new();
    for n in [10usize, 50, 200] {
        for tau in [0.05, 0.2] {
            for gamma in [0.0, 0.001, 0.01] {
                for c in [0.5, 1.0, 2.0] {
                    let s = c * tau * (n as f64).sqrt() + n as f64 * gamma;
                    out.push(azuma_case(n, tau, gamma, s, sequences, seed, out.len() as u64));
                }
            }
        }
    }
    out
}

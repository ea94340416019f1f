//! The online tampering adversary.
//!
//! At step `i` the attacker sees the tampered prefix `v_1..v_{i-1}` and the
//! original block `u_i`. It asks the oracle for the largest gain `g*` and a
//! block `w` attaining it; if `g* >= tau` it outputs `w`. Otherwise it asks
//! for the gain of keeping `u_i` and outputs `w` if that gain is `<= -tau`,
//! else keeps `u_i`.

mod report;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorParams, MonteCarloOracle, Sampling};
use crate::objective::{ExactOracle, Objective};
use crate::oracle::GainOracle;
use crate::rng::{stream, Purpose, StreamRng, TrialStreams};
use crate::space::{ProductSpace, Value};
use crate::stats::{wilson, Interval, Z95};

pub use report::{attack_comparators, AttackReport, Check, MuSource, TrialOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AttackParams {
    pub tau: f64,
    /// Estimator accuracy; zero in exact mode.
    pub gamma: f64,
    pub mode: OracleMode,
    pub sampling: Sampling,
    /// Initial mean, if known in advance.
    pub mu: Option<f64>,
    /// Target mean, used for comparators.
    pub rho: Option<f64>,
}

impl AttackParams {
    pub fn exact(tau: f64) -> Self {
        AttackParams { tau, gamma: 0.0, mode: OracleMode::Exact, sampling: Sampling::Literal, mu: None, rho: None }
    }

    pub fn monte_carlo(tau: f64, gamma: f64) -> Self {
        AttackParams { tau, gamma, mode: OracleMode::MonteCarlo, sampling: Sampling::Literal, mu: None, rho: None }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid("tau", format!("must lie in (0, 1), got {}", self.tau)));
        }
        match self.mode {
            OracleMode::Exact if self.gamma != 0.0 => {
                return Err(Error::invalid("gamma", "exact mode uses gamma = 0"));
            }
            OracleMode::MonteCarlo if !(self.gamma > 0.0 && self.gamma < 1.0) => {
                return Err(Error::invalid("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
            }
            _ => {}
        }
        if let Some(mu) = self.mu {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::invalid("mu", format!("must lie in [0, 1], got {mu}")));
            }
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::invalid("rho", format!("must lie in (0, 1], got {rho}")));
            }
        }
        Ok(())
    }

    pub fn estimator(&self) -> Result<Option<EstimatorParams>> {
        match self.mode {
            OracleMode::Exact => Ok(None),
            OracleMode::MonteCarlo => Ok(Some(EstimatorParams::new(self.gamma)?.with_sampling(self.sampling))),
        }
    }
}

/// Threshold and accuracy that provably move mean `mu` to `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub n: usize,
    pub mu: f64,
    pub rho: f64,
    /// `ln(2/(1-rho))`.
    pub k: f64,
    /// `mu / (1.9 sqrt(k n))`.
    pub tau: f64,
    /// Minimum of `gamma_terms`.
    pub gamma: f64,
    /// `mu/(20n)`, `mu/(80 sqrt(kn))`, `(1-rho)/(8n)`, `sqrt(k)/(3 n sqrt(n))`.
    pub gamma_terms: [f64; 4],
}

impl Schedule {
    pub fn params(&self) -> AttackParams {
        AttackParams::monte_carlo(self.tau, self.gamma).with_mu(self.mu).with_rho(self.rho)
    }
}

pub fn schedule_params(n: usize, mu: f64, rho: f64) -> Result<Schedule> {
    if !(mu > 0.0 && mu < rho && rho < 1.0) {
        return Err(Error::invalid("mu, rho", format!("need 0 < mu < rho < 1, got mu={mu}, rho={rho}")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    let nf = n as f64;
    let k = (2.0 / (1.0 - rho)).ln();
    let tau = mu / (1.9 * (k * nf).sqrt());
    let gamma_terms = [
        mu / (20.0 * nf),
        mu / (80.0 * (k * nf).sqrt()),
        (1.0 - rho) / (8.0 * nf),
        k.sqrt() / (3.0 * nf * nf.sqrt()),
    ];
    let gamma = gamma_terms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Schedule { n, mu, rho, k, tau, gamma, gamma_terms })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The estimated max gain reached `tau`; the argmax block was written.
    Proactive,
    /// The original block looked harmful; the argmax block was written.
    Reactive,
    /// The original block was kept.
    Kept,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StepEvent {
    pub kind: EventKind,
    pub original: Value,
    pub output: Value,
}

impl StepEvent {
    pub fn tampered(&self) -> bool {
        self.kind != EventKind::Kept
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackTrace {
    pub steps: Vec<StepEvent>,
    /// Steps with a proactive or reactive event.
    pub tamperings: usize,
    /// Hamming distance between original and tampered input.
    pub hamming: usize,
    pub objective_value: bool,
    /// Objective evaluations charged to the gain oracle. Zero in exact mode,
    /// where evaluations are shared through the prefix memo.
    pub oracle_calls: u64,
}

/// Decides block `i = prefix.len()` given the original block `u_i`.
pub fn tamper_step(
    prefix: &[Value],
    u_i: Value,
    tau: f64,
    oracle: &dyn GainOracle,
    rng: &mut StreamRng,
) -> Result<StepEvent> {
    let mut buf = prefix.to_vec();
    step_in_place(&mut buf, u_i, tau, oracle, rng)
}

/// Like [`tamper_step`] on a prefix buffer that is left unchanged.
fn step_in_place(
    buf: &mut Vec<Value>,
    u_i: Value,
    tau: f64,
    oracle: &dyn GainOracle,
    rng: &mut StreamRng,
) -> Result<StepEvent> {
    let (g_star, w) = oracle.max_gain(buf, rng)?;
    if g_star >= tau {
        return Ok(StepEvent { kind: EventKind::Proactive, original: u_i, output: w });
    }
    buf.push(u_i);
    let g = oracle.gain(buf, rng);
    buf.pop();
    if g? <= -tau {
        Ok(StepEvent { kind: EventKind::Reactive, original: u_i, output: w })
    } else {
        Ok(StepEvent { kind: EventKind::Kept, original: u_i, output: u_i })
    }
}

/// An attacker bound to a space, an objective and parameters.
pub struct Attacker {
    space: Arc<ProductSpace>,
    objective: Objective,
    params: AttackParams,
    oracle: Arc<dyn GainOracle>,
    exact: Option<Arc<ExactOracle>>,
}

impl Attacker {
    pub fn new(space: Arc<ProductSpace>, objective: Objective, params: AttackParams) -> Result<Self> {
        params.validate()?;
        let (oracle, exact): (Arc<dyn GainOracle>, _) = match params.mode {
            OracleMode::Exact => {
                let exact = Arc::new(ExactOracle::new(space.clone(), objective.clone())?);
                (exact.clone(), Some(exact))
            }
            OracleMode::MonteCarlo => {
                let est = params.estimator()?.expect("monte carlo mode");
                (Arc::new(MonteCarloOracle::new(space.clone(), objective.clone(), est)?), None)
            }
        };
        Ok(Attacker { space, objective, params, oracle, exact })
    }

    /// An exact-mode attacker sharing an already built oracle.
    pub fn with_exact(oracle: Arc<ExactOracle>, tau: f64) -> Result<Self> {
        let params = AttackParams::exact(tau);
        params.validate()?;
        Ok(Attacker {
            space: oracle.space().clone(),
            objective: oracle.objective().clone(),
            params,
            oracle: oracle.clone(),
            exact: Some(oracle),
        })
    }

    /// A Monte-Carlo attacker whose estimator reuses an exact oracle, e.g.
    /// one built with a raised enumeration cap.
    pub fn monte_carlo_with_exact(oracle: Arc<ExactOracle>, params: AttackParams) -> Result<Self> {
        params.validate()?;
        let est = params.estimator()?.ok_or_else(|| Error::invalid("mode", "expected monte_carlo"))?;
        Ok(Attacker {
            space: oracle.space().clone(),
            objective: oracle.objective().clone(),
            params,
            oracle: Arc::new(MonteCarloOracle::from_exact(oracle.clone(), est)),
            exact: Some(oracle),
        })
    }

    /// An attacker of either mode over a shared exact oracle.
    pub fn over_exact(oracle: Arc<ExactOracle>, params: AttackParams) -> Result<Self> {
        match params.mode {
            OracleMode::Exact => {
                params.validate()?;
                Ok(Attacker {
                    space: oracle.space().clone(),
                    objective: oracle.objective().clone(),
                    params,
                    oracle: oracle.clone(),
                    exact: Some(oracle),
                })
            }
            OracleMode::MonteCarlo => Attacker::monte_carlo_with_exact(oracle, params),
        }
    }

    pub fn space(&self) -> &Arc<ProductSpace> {
        &self.space
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn params(&self) -> &AttackParams {
        &self.params
    }

    pub fn exact(&self) -> Option<&Arc<ExactOracle>> {
        self.exact.as_ref()
    }

    /// Tampers a given original input using the step streams of `streams`.
    pub fn attack(&self, u: &[Value], streams: &TrialStreams) -> Result<(Vec<Value>, AttackTrace)> {
        let n = self.space.n();
        if u.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: u.len() });
        }
        self.space.check_prefix(u)?;
        let mut v = Vec::with_capacity(n + 1);
        let mut steps = Vec::with_capacity(n);
        let mut calls = 0;
        for (i, &u_i) in u.iter().enumerate() {
            let mut rng = streams.step(i);
            let event = step_in_place(&mut v, u_i, self.params.tau, self.oracle.as_ref(), &mut rng)?;
            calls += self.oracle.max_gain_cost();
            if event.kind != EventKind::Proactive {
                calls += self.oracle.gain_cost();
            }
            if !self.space.blocks()[i].contains(event.output) {
                return Err(Error::Internal(format!("block {i} left its support")));
            }
            v.push(event.output);
            steps.push(event);
        }
        let tamperings = steps.iter().filter(|s| s.tampered()).count();
        let hamming = steps.iter().filter(|s| s.original != s.output).count();
        let objective_value = self.objective.eval(&v);
        Ok((v, AttackTrace { steps, tamperings, hamming, objective_value, oracle_calls: calls }))
    }

    /// Samples an original input from the trial's sample stream and attacks it.
    pub fn run(&self, streams: &TrialStreams) -> Result<(Vec<Value>, AttackTrace)> {
        let u = self.space.sample_full(&mut streams.sample());
        self.attack(&u, streams)
    }

    /// Initial mean: given, exact when an exact oracle is available, or
    /// estimated from fresh samples.
    pub fn initial_mean(&self, seed: u64) -> Result<MeanEstimate> {
        if let Some(mu) = self.params.mu {
            return Ok(MeanEstimate::given(mu));
        }
        resolve_mean(&self.space, &self.objective, self.exact.as_deref(), seed)
    }
}

/// Mean from an exact oracle when one can be built, else a sampled estimate.
pub fn resolve_mean(
    space: &Arc<ProductSpace>,
    objective: &Objective,
    exact: Option<&ExactOracle>,
    seed: u64,
) -> Result<MeanEstimate> {
    if let Some(exact) = exact {
        return Ok(MeanEstimate::exact(exact.mean(&[])?));
    }
    if let Ok(exact) = ExactOracle::new(space.clone(), objective.clone()) {
        return Ok(MeanEstimate::exact(exact.mean(&[])?));
    }
    let mut rng = stream(seed, Purpose::Mean, 0, 0);
    Ok(estimate_mu(space, objective, default_mu_samples(), &mut rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub value: f64,
    pub ci: Interval,
    pub samples: u64,
    pub source: MuSource,
}

impl MeanEstimate {
    pub fn given(value: f64) -> Self {
        MeanEstimate { value, ci: Interval { low: value, high: value }, samples: 0, source: MuSource::Given }
    }

    pub fn exact(value: f64) -> Self {
        MeanEstimate { value, ci: Interval { low: value, high: value }, samples: 0, source: MuSource::Exact }
    }
}

/// Samples for additive error 0.05 with failure probability 0.01:
/// `ceil(3 ln(2/delta) / eps^2)`.
pub fn default_mu_samples() -> u64 {
    mu_samples(0.05, 0.01)
}

pub fn mu_samples(eps: f64, delta: f64) -> u64 {
    (3.0 * (2.0 / delta).ln() / (eps * eps)).ceil() as u64
}

/// Empirical mean of the objective over fresh tuples with a 95% Wilson interval.
pub fn estimate_mu(space: &ProductSpace, objective: &Objective, samples: u64, rng: &mut StreamRng) -> MeanEstimate {
    let mut buf = vec![0; space.n()];
    let mut hits = 0;
    for _ in 0..samples {
        space.fill_suffix(&mut buf, 0, rng);
        hits += objective.eval(&buf) as u64;
    }
    let value = if samples == 0 { 0.0 } else { hits as f64 / samples as f64 };
    MeanEstimate { value, ci: wilson(hits, samples, Z95), samples, source: MuSource::Estimated }
}

/// Runs one trial: samples the original input from the trial's stream and
/// tampers it.
pub fn run_attack(
    space: Arc<ProductSpace>,
    objective: Objective,
    params: AttackParams,
    seed: u64,
    trial: u64,
) -> Result<(Vec<Value>, AttackTrace)> {
    Attacker::new(space, objective, params)?.run(&TrialStreams::new(seed, trial))
}

/// Runs `trials` independent trials on the current rayon pool and aggregates
/// them. Results do not depend on the number of workers.
pub fn measure(
    space: Arc<ProductSpace>,
    objective: Objective,
    params: AttackParams,
    trials: u64,
    seed: u64,
) -> Result<AttackReport> {
    let attacker = Attacker::new(space, objective, params)?;
    measure_with(&attacker, trials, seed)
}

pub fn measure_with(attacker: &Attacker, trials: u64, seed: u64) -> Result<AttackReport> {
    let mu = attacker.initial_mean(seed)?;
    measure_with_mean(attacker, trials, seed, mu)
}

/// Like [`measure_with`] with the initial mean already resolved.
pub fn measure_with_mean(attacker: &Attacker, trials: u64, seed: u64, mu: MeanEstimate) -> Result<AttackReport> {
    let outcomes = run_trials(attacker, trials, seed)?;
    AttackReport::assemble(attacker, seed, mu, outcomes)
}

/// Runs trials `0..trials` in parallel, in trial order.
pub fn run_trials(attacker: &Attacker, trials: u64, seed: u64) -> Result<Vec<TrialOutcome>> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let (_, trace) = attacker.run(&TrialStreams::new(seed, t))?;
            Ok(TrialOutcome::from_trace(t, &trace))
        })
        .collect()
}

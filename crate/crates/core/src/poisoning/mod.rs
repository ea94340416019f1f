//! Clean-label online poisoning of a training stream.
//!
//! The attacked space has one block per training example. Blocks carry the
//! instance code; labels are always recomputed from the concept, so the
//! attacker can only replace examples with other correctly labelled ones.

pub mod learners;

use std::cell::RefCell;
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

pub use learners::{
    make_toy_learner, Centroids, Cut, ExternalLearner, Hypothesis, Learner, MajorityLabel, NearestCentroid,
    Threshold1d, TrainingSet,
};

use crate::attack::{AttackParams, AttackReport, AttackTrace, Attacker, Check, EventKind, MeanEstimate, StepEvent, TrialOutcome};
use crate::bounds::{confidence_budget, theorem_budget, Comparator, Direction, Formula};
use crate::error::{Error, Result};
use crate::evasion::{Classifier, Label, DEFAULT_RHO};
use crate::objective::{BooleanFn, ExactOracle, Objective};
use crate::rng::{splitmix64, stream, stream_seed, Purpose, StreamRng, TrialStreams};
use crate::space::{ProductSpace, Value};
use crate::stats::Interval;

/// Probes used to spot-check that a learner is deterministic.
pub const DETERMINISM_PROBES: usize = 1000;

/// Empirical risk estimator for the confidence goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Fresh labelled test examples per estimate.
    pub n_risk: u64,
}

impl RiskParams {
    /// Smallest sample count that separates risk `>= eps` from risk
    /// `< 99 eps / 100` with failure probability `delta`:
    /// `ceil(3 ln(2/delta) / (eps/100)^2)`.
    pub fn min_samples(epsilon: f64, delta: f64) -> u64 {
        (3.0 * (2.0 / delta).ln() / (epsilon / 100.0).powi(2)).ceil() as u64
    }

    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        Ok(RiskParams { epsilon, delta, n_risk: RiskParams::min_samples(epsilon, delta) })
    }

    /// Uses `n_risk` test examples; it may not go below the minimum.
    pub fn with_samples(mut self, n_risk: u64) -> Result<Self> {
        let min = RiskParams::min_samples(self.epsilon, self.delta);
        if n_risk < min {
            return Err(Error::invalid("n_risk", format!("needs at least {min}")));
        }
        self.n_risk = n_risk;
        Ok(self)
    }

    /// The estimate flags a hypothesis when its empirical risk reaches this.
    pub fn threshold(&self) -> f64 {
        199.0 * self.epsilon / 200.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Make the learned hypothesis mislabel `target`.
    ChosenInstance { target: Vec<Value> },
    /// Make the learned hypothesis have risk at least `epsilon`.
    Confidence(RiskParams),
}

pub struct PoisoningProblem {
    pub instance_space: Arc<ProductSpace>,
    pub concept: Arc<dyn Classifier>,
    pub learner: Arc<dyn Learner>,
    pub m: usize,
    pub goal: Goal,
}

impl PoisoningProblem {
    /// Checks `m >= 1`, the target and that the learner answers identically
    /// when retrained on the same sample.
    pub fn new(
        instance_space: Arc<ProductSpace>,
        concept: Arc<dyn Classifier>,
        learner: Arc<dyn Learner>,
        m: usize,
        goal: Goal,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m", "must be at least 1"));
        }
        if let Goal::ChosenInstance { target } = &goal {
            if !instance_space.contains(target) {
                return Err(Error::invalid("target", "not in the instance space"));
            }
        }
        let problem = PoisoningProblem { instance_space, concept, learner, m, goal };
        problem.check_determinism()?;
        Ok(problem)
    }

    fn check_determinism(&self) -> Result<()> {
        let space = &self.instance_space;
        let mut rng = stream(0, Purpose::Probe, 0, 0);
        let mut data = TrainingSet::new(space.n());
        for _ in 0..self.m {
            let x = space.sample_full(&mut rng);
            data.push(&x, self.concept.classify(&x));
        }
        let probes: Vec<Value> = (0..DETERMINISM_PROBES).flat_map(|_| space.sample_full(&mut rng)).collect();
        let first = self.learner.fit_predict(&data, &probes)?;
        let second = self.learner.fit_predict(&data, &probes)?;
        if first != second {
            return Err(Error::invalid("learner", "retraining on the same sample changed its predictions"));
        }
        Ok(())
    }

    /// The product of `m` copies of the instance distribution.
    pub fn attacked_space(&self) -> Result<Arc<ProductSpace>> {
        Ok(Arc::new(ProductSpace::repeated_instances(self.instance_space.clone(), self.m)?))
    }

    /// The bad-event indicator of the goal. `seed` keys the test examples
    /// drawn by the confidence goal.
    pub fn objective(&self, seed: u64) -> Objective {
        let base = Stream {
            instance_space: self.instance_space.clone(),
            concept: self.concept.clone(),
            learner: self.learner.clone(),
        };
        match &self.goal {
            Goal::ChosenInstance { target } => chosen_instance_objective(base, target.clone()),
            Goal::Confidence(risk) => confidence_objective(base, *risk, seed),
        }
    }

    /// Correctly labelled examples for a vector of instance codes.
    pub fn label_stream(&self, codes: &[Value]) -> Vec<LabeledExample> {
        codes
            .iter()
            .map(|&c| {
                let instance = self.instance_space.decode(c);
                let label = self.concept.classify(&instance);
                LabeledExample { instance, label }
            })
            .collect()
    }

    fn comparator(&self, mu: f64, rho: f64) -> Option<Comparator> {
        let (formula, bound) = match self.goal {
            Goal::ChosenInstance { .. } => (Formula::TheoremBudget, theorem_budget(self.m, mu, rho).ok()?),
            // confidence falls from 1 - mu to below 1 - rho
            Goal::Confidence(_) => (Formula::ConfidenceBudget, confidence_budget(self.m, 1.0 - rho, 1.0 - mu).ok()?),
        };
        Some(Comparator::new(formula.name(), formula.expression(), "hamming", Direction::AtMost, bound))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabeledExample {
    pub instance: Vec<Value>,
    pub label: Label,
}

struct Stream {
    instance_space: Arc<ProductSpace>,
    concept: Arc<dyn Classifier>,
    learner: Arc<dyn Learner>,
}

thread_local! {
    static SCRATCH: RefCell<(TrainingSet, Vec<Value>)> = RefCell::new((TrainingSet::new(0), Vec::new()));
}

impl Stream {
    /// Runs `f` on the labelled training set for `codes`.
    fn with_training<R>(&self, codes: &[Value], f: impl FnOnce(&TrainingSet) -> R) -> R {
        SCRATCH.with(|cell| {
            let (data, buf) = &mut *cell.borrow_mut();
            let dim = self.instance_space.n();
            data.clear(dim);
            buf.resize(dim, 0);
            for &c in codes {
                self.instance_space.decode_into(c, buf);
                data.push(buf, self.concept.classify(buf));
            }
            f(data)
        })
    }
}

struct ChosenInstance {
    stream: Stream,
    target: Vec<Value>,
    target_label: Label,
}

impl BooleanFn for ChosenInstance {
    fn eval(&self, codes: &[Value]) -> bool {
        let predicted = self
            .stream
            .with_training(codes, |data| self.stream.learner.fit_predict_one(data, &self.target))
            .unwrap_or_else(|e| panic!("learner failed: {e}"));
        predicted != self.target_label
    }

    fn describe(&self) -> String {
        format!("mislabel({:?}) by {}", self.target, self.stream.learner.describe())
    }
}

fn chosen_instance_objective(stream: Stream, target: Vec<Value>) -> Objective {
    let target_label = stream.concept.classify(&target);
    Objective::new(ChosenInstance { stream, target, target_label })
}

struct HighRisk {
    stream: Stream,
    risk: RiskParams,
    seed: u64,
}

impl HighRisk {
    /// Test examples depend only on the seed and the training codes, so the
    /// indicator is a fixed function of its input.
    fn test_rng(&self, codes: &[Value]) -> StreamRng {
        let h = codes
            .iter()
            .fold(stream_seed(self.seed, Purpose::Risk, codes.len() as u64, 0), |h, &c| splitmix64(h ^ c));
        StreamRng::seed_from_u64(h)
    }
}

impl BooleanFn for HighRisk {
    fn eval(&self, codes: &[Value]) -> bool {
        if self.risk.epsilon > 1.0 {
            return false;
        }
        let n = self.risk.n_risk;
        let need = (self.risk.threshold() * n as f64).ceil() as u64;
        if need == 0 {
            return true;
        }
        let h = self
            .stream
            .with_training(codes, |data| self.stream.learner.train(data))
            .unwrap_or_else(|e| panic!("learner failed: {e}"));
        let space = &self.stream.instance_space;
        let mut rng = self.test_rng(codes);
        let mut x = vec![0; space.n()];
        let mut errors = 0;
        for drawn in 0..n {
            if errors + (n - drawn) < need {
                return false;
            }
            space.fill_suffix(&mut x, 0, &mut rng);
            if h.predict(&x) != self.stream.concept.classify(&x) {
                errors += 1;
                if errors >= need {
                    return true;
                }
            }
        }
        false
    }

    fn describe(&self) -> String {
        format!("risk >= {} of {}", self.risk.threshold(), self.stream.learner.describe())
    }
}

fn confidence_objective(stream: Stream, risk: RiskParams, seed: u64) -> Objective {
    Objective::new(HighRisk { stream, risk, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoisonOutcome {
    pub original: Vec<LabeledExample>,
    pub poisoned: Vec<LabeledExample>,
    pub trace: AttackTrace,
    /// Emitted pairs whose label differs from the concept. Always zero.
    pub label_violations: usize,
    /// The initial bad-event probability was zero, so nothing was attacked.
    pub degenerate: bool,
}

/// Runs the tampering attack over training streams of one problem.
pub struct Poisoner {
    problem: Arc<PoisoningProblem>,
    attacker: Attacker,
    mu: MeanEstimate,
    seed: u64,
}

impl Poisoner {
    pub fn new(problem: Arc<PoisoningProblem>, params: AttackParams, seed: u64) -> Result<Self> {
        let attacker = Attacker::new(problem.attacked_space()?, problem.objective(seed), params)?;
        Poisoner::from_attacker(problem, attacker, seed)
    }

    /// An exact-mode poisoner whose oracle may enumerate up to `cap` streams.
    pub fn exact_with_cap(problem: Arc<PoisoningProblem>, tau: f64, cap: u128, seed: u64) -> Result<Self> {
        let oracle = ExactOracle::with_cap(problem.attacked_space()?, problem.objective(seed), cap)?;
        let attacker = Attacker::with_exact(Arc::new(oracle), tau)?;
        Poisoner::from_attacker(problem, attacker, seed)
    }

    pub fn from_attacker(problem: Arc<PoisoningProblem>, attacker: Attacker, seed: u64) -> Result<Self> {
        let mu = attacker.initial_mean(seed)?;
        Ok(Poisoner { problem, attacker, mu, seed })
    }

    pub fn problem(&self) -> &Arc<PoisoningProblem> {
        &self.problem
    }

    pub fn attacker(&self) -> &Attacker {
        &self.attacker
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mu(&self) -> MeanEstimate {
        self.mu
    }

    pub fn degenerate(&self) -> bool {
        self.mu.value <= 0.0
    }

    /// Poisons the stream of the given trial.
    pub fn poison(&self, trial: u64) -> Result<PoisonOutcome> {
        let streams = TrialStreams::new(self.seed, trial);
        let u = self.attacker.space().sample_full(&mut streams.sample());
        self.poison_stream(&u, &streams)
    }

    /// Poisons a given stream of instance codes.
    pub fn poison_stream(&self, u: &[Value], streams: &TrialStreams) -> Result<PoisonOutcome> {
        let degenerate = self.degenerate();
        let (v, trace) = if degenerate {
            let steps: Vec<StepEvent> =
                u.iter().map(|&x| StepEvent { kind: EventKind::Kept, original: x, output: x }).collect();
            let objective_value = self.attacker.objective().eval(u);
            (u.to_vec(), AttackTrace { steps, tamperings: 0, hamming: 0, objective_value, oracle_calls: 0 })
        } else {
            self.attacker.attack(u, streams)?
        };
        let original = self.problem.label_stream(u);
        let poisoned = self.problem.label_stream(&v);
        let label_violations = poisoned.iter().filter(|e| self.problem.concept.classify(&e.instance) != e.label).count();
        assert_eq!(label_violations, 0, "poisoned stream carries a wrong label");
        Ok(PoisonOutcome { original, poisoned, trace, label_violations, degenerate })
    }
}

/// Draws and poisons the training stream of one trial.
pub fn poison_training_stream(
    problem: Arc<PoisoningProblem>,
    params: AttackParams,
    seed: u64,
    trial: u64,
) -> Result<PoisonOutcome> {
    Poisoner::new(problem, params, seed)?.poison(trial)
}

#[derive(Clone, Debug, Serialize)]
pub struct PoisoningReport {
    pub goal: Goal,
    pub m: usize,
    pub mu: MeanEstimate,
    pub degenerate: bool,
    /// Error on the target, or one minus confidence, after poisoning.
    pub bad_event_rate: f64,
    pub bad_event_ci: Interval,
    pub t_mean: f64,
    pub hamming_mean: f64,
    pub label_violations: usize,
    pub comparator: Option<Check>,
    pub attack: Option<AttackReport>,
}

/// Poisons `trials` streams and aggregates. A zero initial bad-event
/// probability is reported as degenerate without attacking.
pub fn evaluate_poisoning(poisoner: &Poisoner, trials: u64) -> Result<PoisoningReport> {
    let problem = poisoner.problem();
    let mu = poisoner.mu();
    let params = *poisoner.attacker().params();
    if poisoner.degenerate() {
        return Ok(PoisoningReport::degenerate(problem, mu));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let results: Vec<(TrialOutcome, usize)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let out = poisoner.poison(t)?;
            Ok((TrialOutcome::from_trace(t, &out.trace), out.label_violations))
        })
        .collect::<Result<_>>()?;
    let label_violations = results.iter().map(|r| r.1).sum();
    let outcomes = results.into_iter().map(|r| r.0).collect();
    let attack = AttackReport::from_outcomes(problem.m, poisoner.seed, params, params.estimator()?, mu, outcomes)?;
    Ok(PoisoningReport::from_attack(problem, attack, label_violations))
}

impl PoisoningReport {
    /// Attaches the budget comparator of the problem's goal.
    pub fn from_attack(problem: &PoisoningProblem, attack: AttackReport, label_violations: usize) -> Self {
        let rho = attack.params.rho.unwrap_or(DEFAULT_RHO);
        let comparator =
            problem.comparator(attack.mu.value, rho).map(|c| Check::new(c, attack.hamming_mean, attack.hamming_ci));
        PoisoningReport {
            goal: problem.goal.clone(),
            m: problem.m,
            mu: attack.mu,
            degenerate: false,
            bad_event_rate: attack.bias_hat,
            bad_event_ci: attack.bias_ci,
            t_mean: attack.t_mean,
            hamming_mean: attack.hamming_mean,
            label_violations,
            comparator,
            attack: Some(attack),
        }
    }

    /// The report of a problem whose bad event never happens.
    pub fn degenerate(problem: &PoisoningProblem, mu: MeanEstimate) -> Self {
        PoisoningReport {
            goal: problem.goal.clone(),
            m: problem.m,
            mu,
            degenerate: true,
            bad_event_rate: 0.0,
            bad_event_ci: Interval { low: 0.0, high: 0.0 },
            t_mean: 0.0,
            hamming_mean: 0.0,
            label_violations: 0,
            comparator: None,
            attack: None,
        }
    }
}

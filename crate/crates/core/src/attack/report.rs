use serde::Serialize;

use crate::bounds::{
    bias_lower_bound, budget_upper_bound, ideal_bias_bound, ideal_budget_bound, theorem_budget, Comparator,
    Direction, Formula,
};
use crate::error::Result;
use crate::estimator::EstimatorParams;
use crate::stats::{wilson, Interval, Summary, Z95};

use super::{AttackParams, AttackTrace, Attacker, MeanEstimate, OracleMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSource {
    Given,
    Exact,
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub objective_value: bool,
    pub tamperings: usize,
    pub hamming: usize,
    pub oracle_calls: u64,
}

impl TrialOutcome {
    pub fn from_trace(trial: u64, trace: &AttackTrace) -> Self {
        TrialOutcome {
            trial,
            objective_value: trace.objective_value,
            tamperings: trace.tamperings,
            hamming: trace.hamming,
            oracle_calls: trace.oracle_calls,
        }
    }
}

/// A comparator applied to a measured mean. `pass` holds when the 95%
/// interval of the measurement reaches the permitted side of the bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub comparator: Comparator,
    pub measured: f64,
    pub measured_ci: Interval,
    pub pass: bool,
}

impl Check {
    pub fn new(comparator: Comparator, measured: f64, ci: Interval) -> Self {
        let pass = match comparator.direction {
            Direction::AtLeast => ci.high >= comparator.bound,
            Direction::AtMost => ci.low <= comparator.bound,
        };
        Check { comparator, measured, measured_ci: ci, pass }
    }
}

/// Comparators for an attack with the given parameters and initial mean.
pub fn attack_comparators(n: usize, mu: f64, params: &AttackParams) -> Vec<Comparator> {
    let mut out = Vec::new();
    let (tau, gamma) = (params.tau, params.gamma);
    match params.mode {
        OracleMode::Exact => {
            out.push(Comparator::new(
                Formula::IdealBias.name(),
                Formula::IdealBias.expression(),
                "bias",
                Direction::AtLeast,
                ideal_bias_bound(n, mu, tau),
            ));
            if let Ok(b) = ideal_budget_bound(n, mu, tau) {
                out.push(Comparator::new(
                    Formula::IdealBudget.name(),
                    Formula::IdealBudget.expression(),
                    "tamperings",
                    Direction::AtMost,
                    b,
                ));
            }
        }
        OracleMode::MonteCarlo => {
            out.push(Comparator::new(
                Formula::BiasLower.name(),
                Formula::BiasLower.expression(),
                "bias",
                Direction::AtLeast,
                bias_lower_bound(n, mu, tau, gamma),
            ));
            if let Ok(b) = budget_upper_bound(n, mu, tau, gamma) {
                out.push(Comparator::new(
                    Formula::BudgetUpper.name(),
                    Formula::BudgetUpper.expression(),
                    "tamperings",
                    Direction::AtMost,
                    b,
                ));
            }
        }
    }
    if let Some(rho) = params.rho {
        if let Ok(b) = theorem_budget(n, mu, rho) {
            out.push(Comparator::new(
                Formula::TheoremBudget.name(),
                Formula::TheoremBudget.expression(),
                "hamming",
                Direction::AtMost,
                b,
            ));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    pub n: usize,
    pub trials: u64,
    pub seed: u64,
    pub params: AttackParams,
    pub estimator: Option<EstimatorParams>,
    pub mu: MeanEstimate,
    pub bias_hat: f64,
    pub bias_ci: Interval,
    pub t_mean: f64,
    pub t_ci: Interval,
    pub hamming_mean: f64,
    pub hamming_ci: Interval,
    pub calls_total: u64,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub outcomes: Vec<TrialOutcome>,
}

impl AttackReport {
    pub(super) fn assemble(
        attacker: &Attacker,
        seed: u64,
        mu: MeanEstimate,
        outcomes: Vec<TrialOutcome>,
    ) -> Result<Self> {
        let n = attacker.space().n();
        let params = *attacker.params();
        AttackReport::from_outcomes(n, seed, params, params.estimator()?, mu, outcomes)
    }

    pub fn from_outcomes(
        n: usize,
        seed: u64,
        params: AttackParams,
        estimator: Option<EstimatorParams>,
        mu: MeanEstimate,
        outcomes: Vec<TrialOutcome>,
    ) -> Result<Self> {
        let trials = outcomes.len() as u64;
        let hits = outcomes.iter().filter(|o| o.objective_value).count() as u64;
        let bias_hat = hits as f64 / trials as f64;
        let bias_ci = wilson(hits, trials, Z95);
        let t = Summary::of(outcomes.iter().map(|o| o.tamperings as f64));
        let h = Summary::of(outcomes.iter().map(|o| o.hamming as f64));
        let calls_total = outcomes.iter().map(|o| o.oracle_calls).sum();
        let checks = attack_comparators(n, mu.value, &params)
            .into_iter()
            .map(|c| match c.quantity.as_str() {
                "bias" => Check::new(c, bias_hat, bias_ci),
                "tamperings" => Check::new(c, t.mean, t.ci95()),
                _ => Check::new(c, h.mean, h.ci95()),
            })
            .collect();
        Ok(AttackReport {
            n,
            trials,
            seed,
            params,
            estimator,
            mu,
            bias_hat,
            bias_ci,
            t_mean: t.mean,
            t_ci: t.ci95(),
            hamming_mean: h.mean,
            hamming_ci: h.ci95(),
            calls_total,
            checks,
            outcomes,
        })
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

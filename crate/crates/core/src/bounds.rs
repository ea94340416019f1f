//! Closed-form bounds on bias, tampering budget and martingale tails.
//!
//! Probability bounds are clamped to `[0, 1]`; per-step budget bounds to
//! `[0, n]`. The dimension-level budgets (`theorem_budget` and the poisoning
//! budgets) are returned as evaluated, since they are meant to be compared
//! with the formula itself.

use serde::Serialize;

use crate::error::{Error, Result};

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Tail bound for sums of approximately bounded, approximately
/// non-negative-drift steps:
/// `Pr[sum t_i <= -s] <= exp(-(s - n gamma)^2 / (2 n (tau + gamma)^2)) + n gamma`.
/// Returns 1 when `s <= n gamma`.
pub fn azuma_approx_bound(n: usize, tau: f64, gamma: f64, s: f64) -> f64 {
    let n = n as f64;
    if s <= n * gamma {
        return 1.0;
    }
    let d = s - n * gamma;
    clamp01((-(d * d) / (2.0 * n * (tau + gamma).powi(2))).exp() + n * gamma)
}

/// Lower bound on the tampered mean of the estimated-oracle attack, with the
/// `(mu - 3 n gamma)` numerator: `1 - exp(-(mu-3n gamma)^2 / (2n(tau+4gamma)^2)) - 4n gamma`.
pub fn bias_lower_bound(n: usize, mu: f64, tau: f64, gamma: f64) -> f64 {
    bias_bound_with(n, mu, tau, gamma, 3.0)
}

/// Same as [`bias_lower_bound`] with the tighter `(mu - 2 n gamma)` numerator.
pub fn bias_lower_bound_tight(n: usize, mu: f64, tau: f64, gamma: f64) -> f64 {
    bias_bound_with(n, mu, tau, gamma, 2.0)
}

fn bias_bound_with(n: usize, mu: f64, tau: f64, gamma: f64, c: f64) -> f64 {
    let nf = n as f64;
    let lead = mu - c * nf * gamma;
    if lead <= 0.0 || n == 0 {
        return 0.0;
    }
    let tail = (-(lead * lead) / (2.0 * nf * (tau + 4.0 * gamma).powi(2))).exp();
    clamp01(1.0 - tail - 4.0 * nf * gamma)
}

/// Upper bound on the expected number of tamperings:
/// `(1 - mu + n gamma) / (tau - 2 gamma) + 3 n^2 gamma`, clamped to `[0, n]`.
pub fn budget_upper_bound(n: usize, mu: f64, tau: f64, gamma: f64) -> Result<f64> {
    if tau <= 2.0 * gamma {
        return Err(Error::invalid("tau", format!("needs tau > 2 gamma, got tau={tau}, gamma={gamma}")));
    }
    let nf = n as f64;
    let b = (1.0 - mu + nf * gamma) / (tau - 2.0 * gamma) + 3.0 * nf * nf * gamma;
    Ok(b.clamp(0.0, nf))
}

/// Bias bound of the exact-oracle attack: `1 - exp(-mu^2 / (2 n tau^2))`.
pub fn ideal_bias_bound(n: usize, mu: f64, tau: f64) -> f64 {
    bias_lower_bound(n, mu, tau, 0.0)
}

/// Budget bound of the exact-oracle attack: `(1 - mu) / tau`, clamped to `[0, n]`.
pub fn ideal_budget_bound(n: usize, mu: f64, tau: f64) -> Result<f64> {
    budget_upper_bound(n, mu, tau, 0.0)
}

fn check_mu_rho(mu: f64, rho: f64) -> Result<()> {
    if !(mu > 0.0 && mu < rho && rho < 1.0) {
        return Err(Error::invalid("mu, rho", format!("need 0 < mu < rho < 1, got mu={mu}, rho={rho}")));
    }
    Ok(())
}

/// Average Hamming budget that moves mean `mu` to `rho`:
/// `(2/mu) sqrt(n ln(2/(1-rho)))`. Also the evasion and chosen-instance
/// poisoning budget with `n` read as the dimension or the sample size.
pub fn theorem_budget(n: usize, mu: f64, rho: f64) -> Result<f64> {
    check_mu_rho(mu, rho)?;
    Ok(2.0 / mu * (n as f64 * (2.0 / (1.0 - rho)).ln()).sqrt())
}

/// Budget for driving confidence below `1 - rho`, given initial failure
/// probability `mu`: `(2/(1-rho)) sqrt(m ln(2/mu))`.
pub fn confidence_budget(m: usize, mu: f64, rho: f64) -> Result<f64> {
    check_mu_rho(mu, rho)?;
    Ok(2.0 / (1.0 - rho) * (m as f64 * (2.0 / mu).ln()).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The measured value should be at least the comparator.
    AtLeast,
    /// The measured value should be at most the comparator.
    AtMost,
}

/// A measured quantity checked against a formula.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparator {
    pub name: String,
    pub formula: String,
    pub quantity: String,
    pub direction: Direction,
    pub bound: f64,
}

impl Comparator {
    pub fn new(name: &str, formula: &str, quantity: &str, direction: Direction, bound: f64) -> Self {
        Comparator {
            name: name.into(),
            formula: formula.into(),
            quantity: quantity.into(),
            direction,
            bound,
        }
    }

    pub fn holds(&self, measured: f64) -> bool {
        match self.direction {
            Direction::AtLeast => measured >= self.bound,
            Direction::AtMost => measured <= self.bound,
        }
    }
}

/// Named formulas, as exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formula {
    Azuma,
    BiasLower,
    BiasLowerTight,
    BudgetUpper,
    IdealBias,
    IdealBudget,
    TheoremBudget,
    ConfidenceBudget,
}

impl Formula {
    pub const ALL: [Formula; 8] = [
        Formula::Azuma,
        Formula::BiasLower,
        Formula::BiasLowerTight,
        Formula::BudgetUpper,
        Formula::IdealBias,
        Formula::IdealBudget,
        Formula::TheoremBudget,
        Formula::ConfidenceBudget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formula::Azuma => "azuma",
            Formula::BiasLower => "bias_lower",
            Formula::BiasLowerTight => "bias_lower_tight",
            Formula::BudgetUpper => "budget_upper",
            Formula::IdealBias => "ideal_bias",
            Formula::IdealBudget => "ideal_budget",
            Formula::TheoremBudget => "theorem_budget",
            Formula::ConfidenceBudget => "confidence_budget",
        }
    }

    pub fn expression(self) -> &'static str {
        match self {
            Formula::Azuma => "exp(-(s-n*gamma)^2/(2n(tau+gamma)^2)) + n*gamma",
            Formula::BiasLower => "1 - exp(-(mu-3n*gamma)^2/(2n(tau+4gamma)^2)) - 4n*gamma",
            Formula::BiasLowerTight => "1 - exp(-(mu-2n*gamma)^2/(2n(tau+4gamma)^2)) - 4n*gamma",
            Formula::BudgetUpper => "(1-mu+n*gamma)/(tau-2gamma) + 3n^2*gamma",
            Formula::IdealBias => "1 - exp(-mu^2/(2n*tau^2))",
            Formula::IdealBudget => "(1-mu)/tau",
            Formula::TheoremBudget => "(2/mu)*sqrt(n*ln(2/(1-rho)))",
            Formula::ConfidenceBudget => "(2/(1-rho))*sqrt(m*ln(2/mu))",
        }
    }

    /// Parameters the formula reads.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Formula::Azuma => &["n", "tau", "gamma", "s"],
            Formula::BiasLower | Formula::BiasLowerTight | Formula::BudgetUpper => &["n", "mu", "tau", "gamma"],
            Formula::IdealBias | Formula::IdealBudget => &["n", "mu", "tau"],
            Formula::TheoremBudget | Formula::ConfidenceBudget => &["n", "mu", "rho"],
        }
    }

    pub fn parse(s: &str) -> Option<Formula> {
        let key = s.trim().replace('-', "_").to_ascii_lowercase();
        Formula::ALL.into_iter().find(|f| f.name() == key)
    }

    pub fn evaluate(self, a: &FormulaArgs) -> Result<f64> {
        let need = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::invalid(name, "required by this formula"));
        let n = a.n.ok_or_else(|| Error::invalid("n", "required by this formula"))?;
        match self {
            Formula::Azuma => Ok(azuma_approx_bound(n, need("tau", a.tau)?, need("gamma", a.gamma)?, need("s", a.s)?)),
            Formula::BiasLower => Ok(bias_lower_bound(n, need("mu", a.mu)?, need("tau", a.tau)?, need("gamma", a.gamma)?)),
            Formula::BiasLowerTight => {
                Ok(bias_lower_bound_tight(n, need("mu", a.mu)?, need("tau", a.tau)?, need("gamma", a.gamma)?))
            }
            Formula::BudgetUpper => budget_upper_bound(n, need("mu", a.mu)?, need("tau", a.tau)?, need("gamma", a.gamma)?),
            Formula::IdealBias => Ok(ideal_bias_bound(n, need("mu", a.mu)?, need("tau", a.tau)?)),
            Formula::IdealBudget => ideal_budget_bound(n, need("mu", a.mu)?, need("tau", a.tau)?),
            Formula::TheoremBudget => theorem_budget(n, need("mu", a.mu)?, need("rho", a.rho)?),
            Formula::ConfidenceBudget => confidence_budget(n, need("mu", a.mu)?, need("rho", a.rho)?),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FormulaArgs {
    pub n: Option<usize>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub s: Option<f64>,
}

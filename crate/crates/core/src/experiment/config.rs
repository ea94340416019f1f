//! Experiment configuration files (TOML) and their validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attack::AttackParams;
use crate::bounds::{Formula, FormulaArgs};
use crate::error::{Error, Result};
use crate::estimator::Sampling;
use crate::evasion::EvasionProblem;
use crate::objective::{ExactOracle, Objective};
use crate::poisoning::{Goal, PoisoningProblem, RiskParams};
use crate::space::{ProductSpace, DEFAULT_ENUMERATION_CAP};

use super::expr::{is_external, parse_classifier, parse_learner, parse_objective, parse_space};
use super::suites::{TailSettings, VerifySettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Bias,
    Evasion,
    Poisoning,
    VerifyExact,
    EstimatorTails,
    Bounds,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Bias => "bias",
            Kind::Evasion => "evasion",
            Kind::Poisoning => "poisoning",
            Kind::VerifyExact => "verify_exact",
            Kind::EstimatorTails => "estimator_tails",
            Kind::Bounds => "bounds",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    MonteCarlo,
    /// Monte Carlo with `tau` and `gamma` derived from `n`, `mu` and `rho`.
    PaperSchedule,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub mode: Option<Mode>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub sampling: Option<Sampling>,
    pub record_wallclock: bool,
    /// Largest support the exact oracle may enumerate.
    pub cap: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvasionConfig {
    pub hypothesis: String,
    pub concept: String,
    pub hypothesis_command: Option<Vec<String>>,
    pub concept_command: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    ChosenInstance,
    Confidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisoningConfig {
    pub instance_space: String,
    pub concept: String,
    pub learner: String,
    pub m: usize,
    pub goal: GoalKind,
    pub target: Option<Vec<u64>>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub n_risk: Option<u64>,
    pub concept_command: Option<Vec<String>>,
    pub learner_command: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub formula: String,
    pub n: Option<usize>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub s: Option<f64>,
}

impl BoundsConfig {
    pub fn args(&self) -> FormulaArgs {
        FormulaArgs { n: self.n, mu: self.mu, rho: self.rho, tau: self.tau, gamma: self.gamma, s: self.s }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    pub space: Option<String>,
    pub objective: Option<String>,
    /// Command of an `external` objective.
    pub command: Option<Vec<String>>,
    /// Output directory for `trials.csv` and `summary.json`.
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub params: ParamsConfig,
    pub evasion: Option<EvasionConfig>,
    pub poisoning: Option<PoisoningConfig>,
    pub bounds: Option<BoundsConfig>,
    pub verify: Option<VerifySettings>,
    pub tails: Option<TailSettings>,
}

/// Rho used when the config does not set one.
pub const DEFAULT_RHO: f64 = crate::evasion::DEFAULT_RHO;
pub const DEFAULT_TRIALS: u64 = 100;
pub const DEFAULT_DELTA: f64 = 0.05;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn trials(&self) -> u64 {
        self.params.trials.unwrap_or(DEFAULT_TRIALS)
    }

    pub fn rho(&self) -> f64 {
        self.params.rho.unwrap_or(DEFAULT_RHO)
    }

    pub fn cap(&self) -> u128 {
        self.params.cap.map_or(DEFAULT_ENUMERATION_CAP, u128::from)
    }

    pub fn mode(&self) -> Mode {
        self.params.mode.unwrap_or(Mode::Exact)
    }

    pub fn seed(&self) -> Result<u64> {
        self.params.seed.ok_or_else(|| Error::Config("params.seed required".into()))
    }

    /// Attack parameters for an explicit mode. `PaperSchedule` needs the
    /// dimension and initial mean and is resolved by the runner.
    pub fn attack_params(&self) -> Result<AttackParams> {
        let p = &self.params;
        let tau = || p.tau.ok_or_else(|| Error::Config("params.tau required".into()));
        let params = match self.mode() {
            Mode::Exact => AttackParams::exact(tau()?),
            Mode::MonteCarlo => {
                let gamma = p.gamma.ok_or_else(|| Error::Config("params.gamma required".into()))?;
                AttackParams::monte_carlo(tau()?, gamma).with_sampling(p.sampling.unwrap_or_default())
            }
            Mode::PaperSchedule => return Err(Error::Internal("schedule parameters depend on mu".into())),
        };
        let params = params.with_rho(self.rho());
        Ok(match p.mu {
            Some(mu) => params.with_mu(mu),
            None => params,
        })
    }

    pub fn evasion_problem(&self) -> Result<EvasionProblem> {
        let e = self.evasion.as_ref().ok_or_else(|| Error::Config("[evasion] section required".into()))?;
        let space = Arc::new(parse_space(self.space.as_deref().ok_or_else(|| Error::Config("space required".into()))?)?);
        let h = parse_classifier(&e.hypothesis, e.hypothesis_command.as_deref())?;
        let c = parse_classifier(&e.concept, e.concept_command.as_deref())?;
        let mut problem = EvasionProblem::new(space, h, c);
        problem.mu = self.params.mu;
        Ok(problem)
    }

    pub fn poisoning_problem(&self) -> Result<PoisoningProblem> {
        let p = self.poisoning.as_ref().ok_or_else(|| Error::Config("[poisoning] section required".into()))?;
        let space = Arc::new(parse_space(&p.instance_space)?);
        let concept = parse_classifier(&p.concept, p.concept_command.as_deref())?;
        let learner = parse_learner(&p.learner, p.learner_command.as_deref())?;
        let goal = match p.goal {
            GoalKind::ChosenInstance => Goal::ChosenInstance {
                target: p.target.clone().ok_or_else(|| Error::Config("poisoning.target required".into()))?,
            },
            GoalKind::Confidence => {
                let eps = p.epsilon.ok_or_else(|| Error::Config("poisoning.epsilon required".into()))?;
                let risk = RiskParams::new(eps, p.delta.unwrap_or(DEFAULT_DELTA))?;
                Goal::Confidence(match p.n_risk {
                    Some(n) => risk.with_samples(n)?,
                    None => risk,
                })
            }
        };
        PoisoningProblem::new(space, concept, learner, p.m, goal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic { severity: Severity::Error, field: field.into(), message: message.into() });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic { severity: Severity::Warning, field: field.into(), message: message.into() });
    }

    fn check<T>(&mut self, field: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.error(field, format!("{field}: {e}"));
                None
            }
        }
    }
}

/// Whether any diagnostic blocks a run.
pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Everything that would keep the config from running, plus warnings.
/// External processes are not spawned.
pub fn validate_config(config: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut d = Diagnostics(Vec::new());
    let Some(kind) = config.kind else {
        d.error("kind", "kind required");
        return d.0;
    };
    if config.params.seed.is_none() && !matches!(kind, Kind::VerifyExact | Kind::Bounds) {
        d.error("params.seed", "params.seed required");
    }
    if config.params.trials == Some(0) {
        d.error("params.trials", "params.trials must be at least 1");
    }
    if config.workers == Some(0) {
        d.error("workers", "workers must be at least 1");
    }
    if let Some(rho) = config.params.rho {
        if !(rho > 0.0 && rho < 1.0) {
            d.error("params.rho", "params.rho must lie in (0, 1)");
        }
    }
    match kind {
        Kind::Bias => {
            let space = match &config.space {
                Some(s) => d.check("space", parse_space(s)),
                None => {
                    d.error("space", "space required");
                    None
                }
            };
            let objective = match &config.objective {
                Some(o) if is_external(o) => {
                    if config.command.as_ref().is_none_or(|c| c.is_empty()) {
                        d.error("command", "external objective needs command");
                    }
                    None
                }
                Some(o) => d.check("objective", parse_objective(o, None)),
                None => {
                    d.error("objective", "objective required");
                    None
                }
            };
            if let Some(space) = space {
                check_mode(&mut d, config, &Arc::new(space), objective);
            }
        }
        Kind::Evasion => match &config.evasion {
            None => d.error("evasion", "[evasion] section required"),
            Some(e) => {
                let external = is_external(&e.hypothesis) || is_external(&e.concept);
                let problem = if external {
                    None
                } else {
                    d.check("evasion", config.evasion_problem())
                };
                let space = config.space.as_deref().map(parse_space);
                match space {
                    None => d.error("space", "space required"),
                    Some(Err(e)) => d.error("space", format!("space: {e}")),
                    Some(Ok(space)) => check_mode(&mut d, config, &Arc::new(space), problem.map(|p| p.error_region_objective())),
                }
            }
        },
        Kind::Poisoning => match &config.poisoning {
            None => d.error("poisoning", "[poisoning] section required"),
            Some(p) => {
                if p.m == 0 {
                    d.error("poisoning.m", "poisoning.m must be at least 1");
                }
                let external = is_external(&p.concept) || is_external(&p.learner);
                if !external {
                    if let Some(problem) = d.check("poisoning", config.poisoning_problem()) {
                        if let Some(space) = d.check("poisoning", problem.attacked_space()) {
                            let seed = config.params.seed.unwrap_or(0);
                            check_mode(&mut d, config, &space, Some(problem.objective(seed)));
                        }
                    }
                }
            }
        },
        Kind::Bounds => match &config.bounds {
            None => d.error("bounds", "[bounds] section required"),
            Some(b) => match Formula::parse(&b.formula) {
                None => d.error("bounds.formula", format!("unknown formula `{}`", b.formula)),
                Some(f) => {
                    d.check("bounds", f.evaluate(&b.args()));
                }
            },
        },
        Kind::VerifyExact => {
            if let Some(v) = &config.verify {
                if v.n_min == 0 || v.n_min > v.n_max || v.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
                    d.error("verify", "verify needs 1 <= n_min <= n_max and taus in (0, 1)");
                }
            }
        }
        Kind::EstimatorTails => {
            if let Some(t) = &config.tails {
                if t.calls == 0 || t.gammas.is_empty() || t.n_min < 1 || t.n_min > t.n_max {
                    d.error("tails", "tails needs calls >= 1, some gammas and 1 <= n_min <= n_max");
                }
                if t.gammas.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
                    d.error("tails.gammas", "gammas must lie in (0, 1)");
                }
            }
        }
    }
    d.0
}

fn check_mode(d: &mut Diagnostics, config: &ExperimentConfig, space: &Arc<ProductSpace>, objective: Option<Objective>) {
    let p = &config.params;
    let mode = config.mode();
    let needs_exact = mode == Mode::Exact || p.sampling == Some(Sampling::Binomial);
    if needs_exact {
        let cap = config.cap();
        let why = match &objective {
            Some(f) => ExactOracle::with_cap(space.clone(), f.clone(), cap).err(),
            None => match space.support_size() {
                Some(s) if s <= cap => None,
                _ => Some(Error::CapExceeded { size: format!("{:?}", space.support_size()), cap }),
            },
        };
        if let Some(e) = why {
            d.error("params.mode", format!("exact mode needs enumerable space ({e})"));
        }
    }
    match mode {
        Mode::Exact => match p.tau {
            None => d.error("params.tau", "params.tau required"),
            Some(t) if !(t > 0.0 && t < 1.0) => d.error("params.tau", "params.tau must lie in (0, 1)"),
            _ => {}
        },
        Mode::MonteCarlo => {
            match p.tau {
                None => d.error("params.tau", "params.tau required"),
                Some(t) if !(t > 0.0 && t < 1.0) => d.error("params.tau", "params.tau must lie in (0, 1)"),
                _ => {}
            }
            match p.gamma {
                None => d.error("params.gamma", "params.gamma required"),
                Some(g) if !(g > 0.0 && g < 1.0) => d.error("params.gamma", "params.gamma must lie in (0, 1)"),
                _ => {}
            }
            if let (Some(t), Some(g)) = (p.tau, p.gamma) {
                if t <= 2.0 * g {
                    d.warn(
                        "params.tau",
                        "tau <= 2*gamma: the expected-tampering bound needs tau > 2*gamma and is not reported",
                    );
                }
            }
        }
        Mode::PaperSchedule => {
            if p.tau.is_some() || p.gamma.is_some() {
                d.warn("params.tau", "paper_schedule derives tau and gamma; the given values are ignored");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    fn messages(c: &ExperimentConfig) -> Vec<String> {
        validate_config(c).into_iter().map(|d| d.message).collect()
    }

    #[test]
    fn missing_seed() {
        let c = parse("kind = \"bias\"\nspace = \"uniform_bits(3)\"\nobjective = \"majority\"\n[params]\ntau = 0.1\n");
        assert_eq!(messages(&c), vec!["params.seed required".to_string()]);
    }

    #[test]
    fn exact_mode_needs_enumerable_space() {
        let c = parse(
            "kind = \"bias\"\nspace = \"uniform_ints(40, 3)\"\nobjective = \"threshold([1, 2], 3)\"\n[params]\nseed = 1\ntau = 0.1\n",
        );
        let diags = validate_config(&c);
        assert!(has_errors(&diags));
        assert!(diags[0].message.starts_with("exact mode needs enumerable space"), "{diags:?}");

        // counting backends do not need enumeration
        let c = parse("kind = \"bias\"\nspace = \"uniform_bits(500)\"\nobjective = \"majority\"\n[params]\nseed = 1\ntau = 0.1\n");
        assert!(validate_config(&c).is_empty());
    }

    #[test]
    fn small_tau_warns() {
        let c = parse(
            "kind = \"bias\"\nspace = \"uniform_bits(5)\"\nobjective = \"majority\"\n[params]\nseed = 1\nmode = \"monte_carlo\"\ntau = 0.1\ngamma = 0.05\n",
        );
        let diags = validate_config(&c);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(!has_errors(&diags));
    }

    #[test]
    fn unknown_keys_and_sections() {
        assert!(ExperimentConfig::from_toml("kind = \"bias\"\nspaec = \"x\"\n").is_err());
        let c = parse("kind = \"evasion\"\n[params]\nseed = 1\n");
        assert_eq!(messages(&c), vec!["[evasion] section required".to_string()]);
        let c = parse("kind = \"bounds\"\n[params]\nseed = 1\n[bounds]\nformula = \"theorem_budget\"\nn = 100\nmu = 0.5\n");
        assert!(has_errors(&validate_config(&c)));
    }

    #[test]
    fn poisoning_config() {
        let c = parse(
            r#"kind = "poisoning"
[params]
seed = 3
tau = 0.05
[poisoning]
instance_space = "uniform_bits(1)"
concept = "dictator(0)"
learner = "majority_label"
m = 25
goal = "chosen_instance"
target = [1]
"#,
        );
        let diags = validate_config(&c);
        assert!(has_errors(&diags), "2^25 streams exceed the default cap");
        let mut raised = c.clone();
        raised.params.cap = Some(1 << 25);
        assert!(validate_config(&raised).is_empty());
    }
}

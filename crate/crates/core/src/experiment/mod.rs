//! Config-driven experiments: run a harness, write per-trial rows and a
//! JSON summary.

pub mod config;
pub mod expr;
pub mod suites;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::attack::{resolve_mean, schedule_params, AttackParams, AttackReport, Attacker, MeanEstimate, TrialOutcome};
use crate::bounds::Formula;
use crate::error::{Error, Result};
use crate::estimator::Sampling;
use crate::evasion::EvasionReport;
use crate::objective::{ExactOracle, Objective};
use crate::poisoning::{evaluate_poisoning, Poisoner};
use crate::rng::TrialStreams;
use crate::space::ProductSpace;

pub use config::{has_errors, validate_config, Diagnostic, ExperimentConfig, Kind, Mode, Severity};
pub use expr::{parse_classifier, parse_learner, parse_objective, parse_space};
pub use suites::{
    azuma_grid, estimator_tails, verify_exact_suite, AzumaCase, ExactCase, TailCase, TailSettings, VerifySettings,
};

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CASES_FILE: &str = "cases.csv";
pub const TAILS_FILE: &str = "tails.csv";

/// Result of one experiment, ready to be written out.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub kind: Kind,
    /// Per-trial or per-case CSV and the file name it belongs in.
    pub table: Option<(&'static str, String)>,
    pub summary: serde_json::Value,
    /// Whether every comparator or case held.
    pub pass: bool,
    /// A short human-readable digest.
    pub digest: String,
}

impl RunOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if let Some((name, csv)) = &self.table {
            std::fs::write(dir.join(name), csv)?;
        }
        std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }
}

/// Validates and runs `config` on a pool of `config.workers` threads (the
/// global pool when unset). Output does not depend on the worker count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let diags = validate_config(config);
    if has_errors(&diags) {
        let msgs: Vec<String> = diags.iter().filter(|d| d.severity == Severity::Error).map(|d| d.message.clone()).collect();
        return Err(Error::Config(msgs.join("; ")));
    }
    match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(config))
        }
        None => dispatch(config),
    }
}

fn dispatch(config: &ExperimentConfig) -> Result<RunOutput> {
    match config.kind.expect("validated") {
        Kind::Bias => run_bias(config),
        Kind::Evasion => run_evasion(config),
        Kind::Poisoning => run_poisoning(config),
        Kind::VerifyExact => run_verify(config),
        Kind::EstimatorTails => run_tails(config),
        Kind::Bounds => run_bounds(config),
    }
}

/// Builds the attacker a config asks for over `space` and `objective`.
/// Exact mode and binomial sampling share one oracle built with the
/// configured cap. Returns the attacker and the initial mean.
pub fn build_attacker(
    config: &ExperimentConfig,
    space: Arc<ProductSpace>,
    objective: Objective,
    seed: u64,
) -> Result<(Attacker, MeanEstimate)> {
    let p = &config.params;
    let needs_exact = config.mode() == Mode::Exact || p.sampling == Some(Sampling::Binomial);
    let exact = if needs_exact {
        Some(Arc::new(ExactOracle::with_cap(space.clone(), objective.clone(), config.cap())?))
    } else {
        None
    };
    let mu = match p.mu {
        Some(mu) => MeanEstimate::given(mu),
        None => resolve_mean(&space, &objective, exact.as_deref(), seed)?,
    };
    let params = attack_params_for(config, space.n(), mu.value)?;
    let attacker = match exact {
        Some(oracle) => Attacker::over_exact(oracle, params)?,
        None => Attacker::new(space, objective, params)?,
    };
    Ok((attacker, mu))
}

struct Timed {
    outcome: TrialOutcome,
    wallclock_ms: f64,
}

fn timed_trials(attacker: &Attacker, trials: u64, seed: u64, record_wallclock: bool) -> Result<Vec<Timed>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let start = Instant::now();
            let (_, trace) = attacker.run(&TrialStreams::new(seed, t))?;
            let wallclock_ms = if record_wallclock { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            Ok(Timed { outcome: TrialOutcome::from_trace(t, &trace), wallclock_ms })
        })
        .collect()
}

const TRIAL_COLUMNS: [&str; 14] = [
    "trial",
    "seed",
    "n",
    "mu_hat",
    "rho_target",
    "tau",
    "gamma",
    "k_gain",
    "k_max",
    "objective_value",
    "T",
    "hamming",
    "oracle_calls",
    "wallclock_ms",
];

/// Per-trial rows followed by a `summary` row holding means (and total calls).
fn trials_csv(report: &AttackReport, wallclock: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRIAL_COLUMNS)?;
    let (k_gain, k_max) = report.estimator.map_or((0, 0), |e| (e.k_gain, e.k_max));
    let rho = report.params.rho.map_or(String::new(), |r| r.to_string());
    let fixed = |trial: String| {
        vec![
            trial,
            report.seed.to_string(),
            report.n.to_string(),
            report.mu.value.to_string(),
            rho.clone(),
            report.params.tau.to_string(),
            report.params.gamma.to_string(),
            k_gain.to_string(),
            k_max.to_string(),
        ]
    };
    for (o, ms) in report.outcomes.iter().zip(wallclock) {
        let mut row = fixed(o.trial.to_string());
        row.extend([
            (o.objective_value as u8).to_string(),
            o.tamperings.to_string(),
            o.hamming.to_string(),
            o.oracle_calls.to_string(),
            ms.to_string(),
        ]);
        w.write_record(&row)?;
    }
    let mut row = fixed("summary".into());
    row.extend([
        report.bias_hat.to_string(),
        report.t_mean.to_string(),
        report.hamming_mean.to_string(),
        report.calls_total.to_string(),
        wallclock.iter().sum::<f64>().to_string(),
    ]);
    w.write_record(&row)?;
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

fn table_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

fn attack_run(config: &ExperimentConfig, attacker: &Attacker, mu: MeanEstimate) -> Result<(AttackReport, Vec<f64>)> {
    let seed = config.seed()?;
    let timed = timed_trials(attacker, config.trials(), seed, config.params.record_wallclock)?;
    let wallclock: Vec<f64> = timed.iter().map(|t| t.wallclock_ms).collect();
    let outcomes = timed.into_iter().map(|t| t.outcome).collect();
    let params = *attacker.params();
    let report = AttackReport::from_outcomes(attacker.space().n(), seed, params, params.estimator()?, mu, outcomes)?;
    Ok((report, wallclock))
}

fn attack_digest(report: &AttackReport) -> String {
    let mut s = format!(
        "n={} mu={:.6} tau={} gamma={} trials={}\nbias={:.4} [{:.4}, {:.4}]  E[T]={:.3}  E[hamming]={:.3}",
        report.n,
        report.mu.value,
        report.params.tau,
        report.params.gamma,
        report.trials,
        report.bias_hat,
        report.bias_ci.low,
        report.bias_ci.high,
        report.t_mean,
        report.hamming_mean,
    );
    for c in &report.checks {
        s += &format!(
            "\n{} {}: {} = {:.4} vs {:.4} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.comparator.name,
            c.comparator.quantity,
            c.measured,
            c.comparator.bound,
            c.comparator.formula,
        );
    }
    s
}

fn run_bias(config: &ExperimentConfig) -> Result<RunOutput> {
    let seed = config.seed()?;
    let space = Arc::new(parse_space(config.space.as_deref().expect("validated"))?);
    let objective = parse_objective(config.objective.as_deref().expect("validated"), config.command.as_deref())?;
    let (attacker, mu) = build_attacker(config, space, objective.clone(), seed)?;
    let (report, wallclock) = attack_run(config, &attacker, mu)?;
    let pass = report.all_pass();
    Ok(RunOutput {
        kind: Kind::Bias,
        table: Some((TRIALS_FILE, trials_csv(&report, &wallclock)?)),
        summary: json!({ "kind": "bias", "objective": objective.describe(), "pass": pass, "report": report }),
        pass,
        digest: attack_digest(&report),
    })
}

fn run_evasion(config: &ExperimentConfig) -> Result<RunOutput> {
    let seed = config.seed()?;
    let problem = config.evasion_problem()?;
    let (attacker, mu) = build_attacker(config, problem.space.clone(), problem.error_region_objective(), seed)?;
    if mu.value <= 0.0 {
        return Err(Error::Degenerate("initial risk is zero; no tampering can help".into()));
    }
    let (attack, wallclock) = attack_run(config, &attacker, mu)?;
    let table = trials_csv(&attack, &wallclock)?;
    let digest = attack_digest(&attack);
    let report = EvasionReport::from_attack(problem.space.n(), config.rho(), attack);
    let pass = report.comparator.as_ref().is_none_or(|c| c.pass) && report.attack.all_pass();
    let digest = format!(
        "risk {:.4} -> {:.4}\n{digest}",
        report.untampered_risk, report.adversarial_risk
    );
    Ok(RunOutput {
        kind: Kind::Evasion,
        table: Some((TRIALS_FILE, table)),
        summary: json!({ "kind": "evasion", "pass": pass, "report": report }),
        pass,
        digest,
    })
}

fn run_poisoning(config: &ExperimentConfig) -> Result<RunOutput> {
    let seed = config.seed()?;
    let problem = Arc::new(config.poisoning_problem()?);
    let (attacker, _) = build_attacker(config, problem.attacked_space()?, problem.objective(seed), seed)?;
    let poisoner = Poisoner::from_attacker(problem, attacker, seed)?;
    let report = evaluate_poisoning(&poisoner, config.trials())?;
    let table = match &report.attack {
        Some(a) => Some((TRIALS_FILE, trials_csv(a, &vec![0.0; a.outcomes.len()])?)),
        None => None,
    };
    let pass = report.label_violations == 0 && report.comparator.as_ref().is_none_or(|c| c.pass);
    let mut digest = format!(
        "m={} mu={:.6} degenerate={}\nbad event {:.4} [{:.4}, {:.4}]  E[T]={:.3}  E[hamming]={:.3}  label violations={}",
        report.m,
        report.mu.value,
        report.degenerate,
        report.bad_event_rate,
        report.bad_event_ci.low,
        report.bad_event_ci.high,
        report.t_mean,
        report.hamming_mean,
        report.label_violations,
    );
    if let Some(c) = &report.comparator {
        digest += &format!(
            "\n{} {}: hamming = {:.4} vs {:.4}",
            if c.pass { "PASS" } else { "FAIL" },
            c.comparator.name,
            c.measured,
            c.comparator.bound
        );
    }
    Ok(RunOutput {
        kind: Kind::Poisoning,
        table,
        summary: json!({ "kind": "poisoning", "pass": pass, "report": report }),
        pass,
        digest,
    })
}

#[derive(Serialize)]
struct TailRow<'a> {
    case: u64,
    function: &'a str,
    n: usize,
    prefix: String,
    next: u64,
    gamma: f64,
    k_gain: u64,
    k_max: u64,
    gain: f64,
    lambda: f64,
    gain_tail_rate: f64,
    gain_tail_bound: f64,
    lambda_tail_rate: f64,
    lambda_tail_bound: f64,
    max_tail_rate: f64,
    max_tail_bound: f64,
    pass: bool,
}

impl<'a> From<&'a TailCase> for TailRow<'a> {
    fn from(c: &'a TailCase) -> Self {
        TailRow {
            case: c.case,
            function: &c.function,
            n: c.n,
            prefix: c.prefix.iter().map(|v| v.to_string()).collect(),
            next: c.next,
            gamma: c.gamma,
            k_gain: c.k_gain,
            k_max: c.k_max,
            gain: c.gain,
            lambda: c.lambda,
            gain_tail_rate: c.gain_tail.rate,
            gain_tail_bound: c.gain_tail.bound,
            lambda_tail_rate: c.lambda_tail.rate,
            lambda_tail_bound: c.lambda_tail.bound,
            max_tail_rate: c.max_tail.rate,
            max_tail_bound: c.max_tail.bound,
            pass: c.pass,
        }
    }
}

fn run_verify(config: &ExperimentConfig) -> Result<RunOutput> {
    let settings = config.verify.clone().unwrap_or_default();
    let cases = verify_exact_suite(&settings)?;
    let failed = cases.iter().filter(|c| !c.pass).count();
    let pass = failed == 0;
    Ok(RunOutput {
        kind: Kind::VerifyExact,
        table: Some((CASES_FILE, table_csv(&cases)?)),
        summary: json!({ "kind": "verify_exact", "settings": settings, "cases": cases.len(), "failed": failed, "pass": pass }),
        pass,
        digest: format!("{} cases, {failed} failed", cases.len()),
    })
}

fn run_tails(config: &ExperimentConfig) -> Result<RunOutput> {
    let settings = config.tails.clone().unwrap_or_default();
    let cases = estimator_tails(&settings, config.seed()?)?;
    let failed = cases.iter().filter(|c| !c.pass).count();
    let pass = failed == 0;
    let worst = cases.iter().map(|c| c.gain_tail.rate / c.gain_tail.bound).fold(0.0, f64::max);
    Ok(RunOutput {
        kind: Kind::EstimatorTails,
        table: Some((TAILS_FILE, table_csv(cases.iter().map(TailRow::from))?)),
        summary: json!({ "kind": "estimator_tails", "settings": settings, "cases": cases, "failed": failed, "pass": pass }),
        pass,
        digest: format!("{} cases, {failed} failed, worst gain-tail rate/bound {worst:.3}", cases.len()),
    })
}

fn run_bounds(config: &ExperimentConfig) -> Result<RunOutput> {
    let b = config.bounds.as_ref().expect("validated");
    let formula = Formula::parse(&b.formula).ok_or_else(|| Error::Config(format!("unknown formula `{}`", b.formula)))?;
    let value = formula.evaluate(&b.args())?;
    Ok(RunOutput {
        kind: Kind::Bounds,
        table: None,
        summary: json!({ "kind": "bounds", "formula": formula.name(), "expression": formula.expression(), "value": value, "pass": true }),
        pass: true,
        digest: format!("{} = {value}", formula.name()),
    })
}

/// Attack parameters for a space of dimension `n` with initial mean `mu`.
pub fn attack_params_for(config: &ExperimentConfig, n: usize, mu: f64) -> Result<AttackParams> {
    match config.mode() {
        Mode::PaperSchedule => Ok(schedule_params(n, mu, config.rho())?
            .params()
            .with_sampling(config.params.sampling.unwrap_or_default())),
        _ => Ok(config.attack_params()?.with_mu(mu)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bias_config(workers: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::from_toml(
            "kind = \"bias\"\nspace = \"uniform_bits(9)\"\nobjective = \"majority\"\n[params]\nseed = 11\ntrials = 40\nmode = \"monte_carlo\"\ntau = 0.2\ngamma = 0.05\n",
        )
        .unwrap();
        c.workers = Some(workers);
        c
    }

    #[test]
    fn csv_is_identical_across_worker_counts() {
        let a = run_experiment(&bias_config(1)).unwrap();
        let b = run_experiment(&bias_config(3)).unwrap();
        assert_eq!(a.table, b.table);
        let (_, csv) = a.table.unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 42);
        assert!(lines[0].starts_with("trial,seed,n,mu_hat"));
        assert!(lines[41].starts_with("summary,11,9,0.5,"));
    }

    #[test]
    fn exact_bias_run() {
        let c = ExperimentConfig::from_toml(
            "kind = \"bias\"\nspace = \"uniform_bits(7)\"\nobjective = \"majority\"\n[params]\nseed = 1\ntrials = 30\ntau = 0.1\nrho = 0.9\n",
        )
        .unwrap();
        let out = run_experiment(&c).unwrap();
        assert!(out.pass, "{}", out.digest);
        assert_eq!(out.summary["report"]["mu"]["source"], "exact");
        assert!(out.digest.contains("theorem_budget"));
    }

    #[test]
    fn schedule_mode_derives_parameters() {
        let c = ExperimentConfig::from_toml(
            "kind = \"bias\"\nspace = \"uniform_bits(5)\"\nobjective = \"majority\"\n[params]\nseed = 2\ntrials = 2\nmode = \"paper_schedule\"\nrho = 0.6\nsampling = \"binomial\"\n",
        )
        .unwrap();
        let out = run_experiment(&c).unwrap();
        let s = schedule_params(5, 0.5, 0.6).unwrap();
        assert_eq!(out.summary["report"]["params"]["tau"], s.tau);
        assert_eq!(out.summary["report"]["params"]["gamma"], s.gamma);
        assert_eq!(out.summary["report"]["mu"]["source"], "exact");
    }

    #[test]
    fn invalid_config_is_a_config_error() {
        let mut c = bias_config(1);
        c.params.seed = None;
        assert!(matches!(run_experiment(&c), Err(Error::Config(m)) if m.contains("params.seed required")));
    }

    #[test]
    fn evasion_and_poisoning_runs() {
        let c = ExperimentConfig::from_toml(
            r#"kind = "evasion"
space = "uniform_bits(6)"
[params]
seed = 5
trials = 20
tau = 0.05
[evasion]
hypothesis = "and(3)"
concept = "const(0)"
"#,
        )
        .unwrap();
        let out = run_experiment(&c).unwrap();
        assert!(out.summary["report"]["adversarial_risk"].as_f64().unwrap() >= 0.9);

        let c = ExperimentConfig::from_toml(
            r#"kind = "poisoning"
[params]
seed = 3
trials = 10
tau = 0.05
[poisoning]
instance_space = "uniform_bits(1)"
concept = "dictator(0)"
learner = "majority_label"
m = 5
goal = "chosen_instance"
target = [0]
"#,
        )
        .unwrap();
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.summary["report"]["label_violations"], 0);
        assert!(out.table.is_some());
    }

    #[test]
    fn bounds_and_suites() {
        let c = ExperimentConfig::from_toml(
            "kind = \"bounds\"\n[params]\nseed = 0\n[bounds]\nformula = \"theorem_budget\"\nn = 100\nmu = 0.5\nrho = 0.99\n",
        )
        .unwrap();
        let out = run_experiment(&c).unwrap();
        assert!(out.digest.starts_with("theorem_budget = 92.07"), "{}", out.digest);

        let c = ExperimentConfig::from_toml(
            "kind = \"verify_exact\"\n[params]\nseed = 0\n[verify]\nn_min = 3\nn_max = 4\ntaus = [0.1]\n",
        )
        .unwrap();
        let out = run_experiment(&c).unwrap();
        assert!(out.pass);
        assert_eq!(out.table.unwrap().1.lines().count(), 1 + 2 * 6);
    }
}

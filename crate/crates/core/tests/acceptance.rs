//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion names (`C1`, `C5`, ...) as
//! arguments to run a subset:
//!
//! ```text
//! cargo test -p tamper-core --test acceptance -- C4 C6
//! ```

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use tamper_core::attack::{schedule_params, AttackParams, Attacker, TrialOutcome};
use tamper_core::estimator::Sampling;
use tamper_core::evasion::{evaluate_evasion, BoolClassifier, Classifier, ConstLabel, EvasionProblem};
use tamper_core::experiment::{
    azuma_grid, estimator_tails, run_experiment, verify_exact_suite, ExperimentConfig, TailSettings, VerifySettings,
};
use tamper_core::objective::{enumerate_attack, Builtin, ExactOracle, Objective};
use tamper_core::poisoning::{evaluate_poisoning, Goal, MajorityLabel, Poisoner, PoisoningProblem};
use tamper_core::space::ProductSpace;
use tamper_core::rng::TrialStreams;

const SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean of a suite function over uniform bits, by brute force.
fn brute_mean(name: &str, n: usize) -> f64 {
    let half = n.div_ceil(2);
    let weights: Vec<usize> = (1..=n).collect();
    let t = weights.iter().sum::<usize>() as f64 / 2.0;
    let mut hits = 0u64;
    for x in 0u64..1 << n {
        let bit = |i: usize| (x >> i) & 1 == 1;
        let ones = x.count_ones() as usize;
        let v = match name {
            "and" => (0..half).all(bit),
            "or" => (0..half).any(bit),
            "xor" => ones % 2 == 1,
            "majority" => 2 * ones > n,
            "dictator" => bit(0),
            "threshold" => (0..n).filter(|&i| bit(i)).map(|i| weights[i]).sum::<usize>() as f64 >= t,
            other => panic!("unknown suite function {other}"),
        };
        hits += v as u64;
    }
    hits as f64 / (1u64 << n) as f64
}

fn suite_name(describe: &str) -> &str {
    describe.split('(').next().unwrap()
}

fn c1_c2() -> (Verdict, Verdict) {
    let start = Instant::now();
    let cases = verify_exact_suite(&VerifySettings::default()).expect("exact suite");
    let secs = start.elapsed().as_secs_f64();
    let mut failures = Vec::new();
    let (mut min_bias_margin, mut min_budget_margin) = (f64::INFINITY, f64::INFINITY);
    for c in &cases {
        let mu = brute_mean(suite_name(&c.function), c.n);
        let nf = c.n as f64;
        let bias_bound = 1.0 - (-mu * mu / (2.0 * nf * c.tau * c.tau)).exp();
        let budget = (1.0 - mu) / c.tau;
        min_bias_margin = min_bias_margin.min(c.bias - bias_bound);
        min_budget_margin = min_budget_margin.min(budget - c.expected_tamperings);
        if (mu - c.mu).abs() > 1e-12 || c.bias < bias_bound - 1e-9 || c.expected_tamperings > budget + 1e-9 {
            failures.push(format!("{} n={} tau={}", c.function, c.n, c.tau));
        }
    }
    let c1 = verdict(
        failures.is_empty() && cases.len() == 6 * 10 * 5,
        format!(
            "exact bound suite: {} cases, {} violations, min bias margin {:.3e}, min budget margin {:.3e}, {secs:.1}s {:?}",
            cases.len(),
            failures.len(),
            min_bias_margin,
            min_budget_margin,
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
    let worst = cases.iter().map(|c| c.min_untouched_drift).fold(f64::INFINITY, f64::min);
    let prefixes: u64 = cases.iter().map(|c| c.reachable_prefixes).sum();
    let c2 = verdict(
        worst >= -1e-12,
        format!("martingale drift: {prefixes} reachable prefixes, min E[g*C3] = {worst:.3e} (>= -1e-12), {secs:.1}s"),
    );
    (c1, c2)
}

fn c3() -> Verdict {
    let start = Instant::now();
    let cases = estimator_tails(&TailSettings::default(), SEED).expect("tails");
    let bad: Vec<u64> = cases.iter().filter(|c| !(c.gain_tail.pass && c.max_tail.pass)).map(|c| c.case).collect();
    let lambda_bad = cases.iter().filter(|c| !c.lambda_tail.pass).count();
    let worst_gain = cases.iter().map(|c| c.gain_tail.rate - c.gain_tail.bound).fold(f64::NEG_INFINITY, f64::max);
    let worst_max = cases.iter().map(|c| c.max_tail.rate - c.max_tail.bound).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad.is_empty() && cases.len() == 20,
        format!(
            "estimator tails: {} cases x 10^4 calls, failing {bad:?}, max(rate-bound) gain {worst_gain:.4} max-gain {worst_max:.4}, lambda-tail failures {lambda_bad}, {:.1}s",
            cases.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c4() -> Verdict {
    let s = schedule_params(100, 0.5, 0.99).expect("schedule");
    let k = 200f64.ln();
    let tau = 0.5 / (1.9 * (k * 100.0).sqrt());
    let terms = [0.5 / 2000.0, 0.5 / (80.0 * (100.0 * k).sqrt()), 0.01 / 800.0, k.sqrt() / 3000.0];
    let gamma = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let terms_ok = s.gamma_terms.iter().zip(terms).all(|(a, b)| (a - b).abs() <= 1e-9);
    verdict(
        (s.k - k).abs() <= 1e-6 && (s.tau - tau).abs() <= 1e-6 && terms_ok && (s.gamma - gamma).abs() <= 1e-9,
        format!("schedule(100, 0.5, 0.99): k={:.9} tau={:.9} gamma={:.6e}", s.k, s.tau, s.gamma),
    )
}

const C5_CONFIG: &str = r#"kind = "bias"
space = "uniform_bits(1001)"
objective = "majority"

[params]
seed = 2024
trials = 200
mode = "monte_carlo"
tau = 0.01
gamma = 0.05
sampling = "binomial"
rho = 0.99
"#;

const C6_CONFIG: &str = r#"kind = "evasion"
space = "uniform_bits(4)"

[params]
seed = 2024
trials = 400
mode = "exact"
tau = 0.2

[evasion]
hypothesis = "and(2)"
concept = "const(0)"
"#;

fn run_csv(text: &str, workers: usize) -> (String, serde_json::Value) {
    let mut config = ExperimentConfig::from_toml(text).expect("config");
    config.workers = Some(workers);
    let out = run_experiment(&config).expect("run");
    (out.table.expect("trials").1, out.summary)
}

fn c5() -> (Verdict, String) {
    let start = Instant::now();
    let (csv, summary) = run_csv(C5_CONFIG, 1);
    let r = &summary["report"];
    let bias_low = r["bias_ci"]["low"].as_f64().unwrap();
    let hamming = r["hamming_mean"].as_f64().unwrap();
    let budget = (2.0 / 0.5) * (1001.0 * (2.0f64 / 0.01).ln()).sqrt();
    let v = verdict(
        bias_low >= 0.95 && hamming <= budget,
        format!(
            "MAJ(1001) monte carlo, 200 trials: bias {:.4} (CI low {bias_low:.4} >= 0.95), E[hamming] {hamming:.2} <= {budget:.1}, E[T] {:.2}, oracle calls {}, {:.1}s",
            r["bias_hat"].as_f64().unwrap(),
            r["t_mean"].as_f64().unwrap(),
            r["calls_total"],
            start.elapsed().as_secs_f64()
        ),
    );
    (v, csv)
}

/// One trial with every continuation sampled and evaluated.
fn c5_literal_trial() -> String {
    let start = Instant::now();
    let space = Arc::new(ProductSpace::uniform_bits(1001));
    let params = AttackParams::monte_carlo(0.01, 0.05).with_sampling(Sampling::Literal);
    let attacker = Attacker::new(space, Objective::new(Builtin::Majority), params).expect("attacker");
    let (_, trace) = attacker.run(&TrialStreams::new(SEED, 0)).expect("trial");
    format!(
        "literal sampling trial: f={} T={} hamming={} calls={} {:.1}s",
        trace.objective_value as u8,
        trace.tamperings,
        trace.hamming,
        trace.oracle_calls,
        start.elapsed().as_secs_f64()
    )
}

fn c6() -> Verdict {
    let start = Instant::now();
    let space = Arc::new(ProductSpace::uniform_bits(4));
    let h: Arc<dyn Classifier> = Arc::new(BoolClassifier(Builtin::And(2)));
    let c: Arc<dyn Classifier> = Arc::new(ConstLabel(0));
    let problem = EvasionProblem::new(space.clone(), h, c);
    let oracle = ExactOracle::new(space, problem.error_region_objective()).expect("oracle");
    let s = enumerate_attack(&oracle, 0.2, 1 << 10).expect("enumerate");
    // By hand: both proactive tamperings have gain >= 0.25, so T = 2 always and
    // hamming counts the zeros among the first two bits.
    let exact = s.bias == 1.0 && (s.expected_hamming - 1.0).abs() < 1e-12 && (s.expected_tamperings - 2.0).abs() < 1e-12;
    let report = evaluate_evasion(&problem, AttackParams::exact(0.2), 400, SEED).expect("evasion");
    verdict(
        exact && s.mu == 0.25 && report.adversarial_risk == 1.0 && report.t_mean == 2.0,
        format!(
            "evasion AND(2) vs 0: risk {} -> {}, E[hamming] {}, E[T] {}; sampled 400 trials: risk {}, E[T] {}, E[hamming] {:.3}, {:.2}s",
            s.mu,
            s.bias,
            s.expected_hamming,
            s.expected_tamperings,
            report.adversarial_risk,
            report.t_mean,
            report.hamming_mean,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c7() -> Verdict {
    let start = Instant::now();
    let (m, tau, cap) = (25usize, 0.05, 1u128 << 25);
    let concept: Arc<dyn Classifier> = Arc::new(BoolClassifier(Builtin::Dictator(0)));
    let problem = Arc::new(
        PoisoningProblem::new(
            Arc::new(ProductSpace::uniform_bits(1)),
            concept,
            Arc::new(MajorityLabel),
            m,
            Goal::ChosenInstance { target: vec![1] },
        )
        .expect("problem"),
    );
    let oracle = Arc::new(ExactOracle::with_cap(problem.attacked_space().unwrap(), problem.objective(SEED), cap).unwrap());
    let s = enumerate_attack(&oracle, tau, cap).expect("enumerate");
    let bias_bound = 1.0 - (-s.mu * s.mu / (2.0 * m as f64 * tau * tau)).exp();
    let budget = (1.0 - s.mu) / tau;

    // Sampled exact-mode streams: every emitted pair must carry its true label.
    let exact = Poisoner::from_attacker(problem.clone(), Attacker::with_exact(oracle.clone(), tau).unwrap(), SEED).unwrap();
    let (mut pairs, mut implausible) = (0usize, 0usize);
    for t in 0..200 {
        let out = exact.poison(t).expect("poison");
        for e in out.poisoned.iter().chain(&out.original) {
            pairs += 1;
            implausible += (e.label != e.instance[0] as i64) as usize;
        }
    }

    let params = AttackParams::monte_carlo(tau, 0.1).with_sampling(Sampling::Binomial);
    let mc = Poisoner::from_attacker(problem, Attacker::monte_carlo_with_exact(oracle, params).unwrap(), SEED).unwrap();
    let report = evaluate_poisoning(&mc, 200).expect("monte carlo poisoning");
    let outcomes: &[TrialOutcome] = &report.attack.as_ref().unwrap().outcomes;
    let col = |f: fn(&TrialOutcome) -> f64| mean_se(&outcomes.iter().map(f).collect::<Vec<_>>());
    let within = |(mean, se): (f64, f64), exact: f64| (mean - exact).abs() <= 3.0 * se;
    let bias = col(|o| o.objective_value as u8 as f64);
    let t = col(|o| o.tamperings as f64);
    let h = col(|o| o.hamming as f64);
    let replica = within(bias, s.bias) && within(t, s.expected_tamperings) && within(h, s.expected_hamming);
    verdict(
        s.bias >= bias_bound && s.expected_tamperings <= budget && implausible == 0 && replica,
        format!(
            "poisoning MajorityLabel m=25: mu {:.4}, exact Err {:.4} >= {bias_bound:.4}, E[T] {:.3} <= {budget}, E[hamming] {:.3}; \
             {pairs} pairs, {implausible} implausible; MC(gamma=0.1) Err {:.4}+-{:.4} E[T] {:.3}+-{:.3} E[hamming] {:.3}+-{:.3} (3 se), {:.1}s",
            s.mu,
            s.bias,
            s.expected_tamperings,
            s.expected_hamming,
            bias.0,
            3.0 * bias.1,
            t.0,
            3.0 * t.1,
            h.0,
            3.0 * h.1,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c8() -> Verdict {
    let start = Instant::now();
    let cases = azuma_grid(100_000, SEED);
    let failing: Vec<String> = cases
        .iter()
        .filter(|c| !c.tail.pass)
        .map(|c| format!("n={} tau={} gamma={} s={:.3}: {} > {}", c.n, c.tau, c.gamma, c.s, c.tail.rate, c.tail.bound))
        .collect();
    let tightest = cases.iter().map(|c| c.tail.rate / c.tail.bound).fold(0.0, f64::max);
    verdict(
        failing.is_empty(),
        format!(
            "azuma tails: {} grid points x 10^5 sequences, {} above bound+3sigma, max rate/bound {tightest:.3}, {:.1}s {:?}",
            cases.len(),
            failing.len(),
            start.elapsed().as_secs_f64(),
            failing
        ),
    )
}

fn c9(c5_csv: Option<String>) -> Verdict {
    let start = Instant::now();
    let c5_one = c5_csv.unwrap_or_else(|| run_csv(C5_CONFIG, 1).0);
    let c5_four = run_csv(C5_CONFIG, 4).0;
    let c6_one = run_csv(C6_CONFIG, 1).0;
    let c6_again = run_csv(C6_CONFIG, 1).0;
    let c6_four = run_csv(C6_CONFIG, 4).0;
    verdict(
        c5_one == c5_four && c6_one == c6_again && c6_one == c6_four,
        format!(
            "determinism: C5 csv ({} bytes) and C6 csv ({} bytes) identical across reruns and 1 vs 4 workers, {:.1}s",
            c5_one.len(),
            c6_one.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let run = |name: &str| wanted.is_empty() || wanted.iter().any(|w| w == name);
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let report = |name: &'static str, v: Verdict, results: &mut Vec<(&str, Verdict)>| {
        println!("{name} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((name, v));
    };

    if run("C1") || run("C2") {
        let (c1, c2) = c1_c2();
        report("C1", c1, &mut results);
        report("C2", c2, &mut results);
    }
    if run("C3") {
        report("C3", c3(), &mut results);
    }
    if run("C4") {
        report("C4", c4(), &mut results);
    }
    let mut c5_csv = None;
    if run("C5") {
        let (v, csv) = c5();
        report("C5", v, &mut results);
        println!("   {}", c5_literal_trial());
        c5_csv = Some(csv);
    }
    if run("C6") {
        report("C6", c6(), &mut results);
    }
    if run("C7") {
        report("C7", c7(), &mut results);
    }
    if run("C8") {
        report("C8", c8(), &mut results);
    }
    if run("C9") {
        report("C9", c9(c5_csv), &mut results);
    }

    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} passed, {} failed {failed:?}", results.len() - failed.len(), failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

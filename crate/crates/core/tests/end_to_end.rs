use std::sync::Arc;

use proptest::prelude::*;
use tamper_core::attack::{measure, AttackParams, Attacker};
use tamper_core::experiment::{run_experiment, ExperimentConfig};
use tamper_core::objective::{enumerate_attack, Builtin, ExactOracle, ExternalFn, Objective};
use tamper_core::rng::TrialStreams;
use tamper_core::{hamming, ProductSpace, Sampling};

fn majority_script() -> Vec<String> {
    let script = "while read a b c; do if [ $((a + b + c)) -ge 2 ]; then echo 1; else echo 0; fi; done";
    ["sh", "-c", script].map(String::from).to_vec()
}

#[test]
fn external_objective_matches_builtin() {
    let space = Arc::new(ProductSpace::uniform_bits(3));
    let external = Objective::new(ExternalFn::spawn(&majority_script()).unwrap());
    let a = enumerate_attack(&ExactOracle::new(space.clone(), external).unwrap(), 0.1, 1 << 10).unwrap();
    let b = enumerate_attack(&ExactOracle::new(space, Objective::new(Builtin::Majority)).unwrap(), 0.1, 1 << 10).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn dead_external_process_is_an_error_at_spawn() {
    assert!(ExternalFn::spawn(&["/nonexistent/objective".to_string()]).is_err());
}

#[test]
fn binomial_and_literal_sampling_agree_on_average() {
    let space = Arc::new(ProductSpace::uniform_bits(7));
    let f = Objective::new(Builtin::Threshold { weights: vec![1.0; 7], t: 5.0 });
    let run = |sampling| {
        let params = AttackParams::monte_carlo(0.08, 0.1).with_sampling(sampling);
        measure(space.clone(), f.clone(), params, 300, 5).unwrap()
    };
    let (lit, bin) = (run(Sampling::Literal), run(Sampling::Binomial));
    let se = |r: &tamper_core::AttackReport| (r.t_ci.high - r.t_ci.low) / (2.0 * 1.96);
    let tol = 4.0 * (se(&lit).powi(2) + se(&bin).powi(2)).sqrt();
    assert!((lit.t_mean - bin.t_mean).abs() <= tol, "{} vs {} (tol {tol})", lit.t_mean, bin.t_mean);
    assert!((lit.bias_hat - bin.bias_hat).abs() <= 0.1);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let path = dir.path().join("c.toml");
    std::fs::write(
        &path,
        format!(
            "kind = \"bias\"\nspace = \"uniform_ints(5, 3)\"\nobjective = \"threshold([1, 1, 1, 1, 1], 8)\"\noutput = {:?}\n[params]\nseed = 3\ntrials = 25\ntau = 0.05\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let config = ExperimentConfig::load(&path).unwrap();
    let result = run_experiment(&config).unwrap();
    result.write_to(config.output.as_ref().unwrap()).unwrap();
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 27);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], result.pass);
    assert_eq!(summary["report"]["trials"], 25);
}

fn truth_table_objective(table: Vec<bool>) -> Objective {
    Objective::from_fn("table", move |x| {
        let idx = x.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i));
        table[idx]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_attack_never_lowers_the_mean(
        n in 1usize..7,
        seed in any::<u64>(),
        tau in 0.01f64..0.6,
    ) {
        let table: Vec<bool> = (0..1usize << n).map(|i| (tamper_core::rng::splitmix64(seed ^ i as u64) & 1) == 1).collect();
        let space = Arc::new(ProductSpace::uniform_bits(n));
        let oracle = Arc::new(ExactOracle::new(space.clone(), truth_table_objective(table)).unwrap());
        let s = enumerate_attack(&oracle, tau, 1 << 10).unwrap();
        prop_assert!(s.bias >= s.mu - 1e-12);
        prop_assert!(s.expected_hamming <= s.expected_tamperings + 1e-12);

        let attacker = Attacker::with_exact(oracle, tau).unwrap();
        let (v, trace) = attacker.run(&TrialStreams::new(seed, 0)).unwrap();
        prop_assert!(space.contains(&v));
        let u: Vec<u64> = trace.steps.iter().map(|e| e.original).collect();
        prop_assert_eq!(hamming(&u, &v).unwrap(), trace.hamming);
        prop_assert!(trace.hamming <= trace.tamperings);
    }
}

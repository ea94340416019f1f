//! Evasion: tamper test instances into the region where a hypothesis
//! disagrees with the ground truth.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::attack::{measure_with_mean, AttackParams, AttackReport, AttackTrace, Attacker, Check};
use crate::bounds::{theorem_budget, Comparator, Direction, Formula};
use crate::error::{Error, Result};
use crate::objective::{BooleanFn, Builtin, CountForm, Objective};
use crate::rng::TrialStreams;
use crate::space::{ProductSpace, Value};

/// Class label. Numeric tokens map to their value; other tokens from
/// external processes are interned to ids below `i64::MIN / 2`.
pub type Label = i64;

/// Target mean assumed when none is configured.
pub const DEFAULT_RHO: f64 = 0.99;

pub trait Classifier: Send + Sync {
    fn classify(&self, x: &[Value]) -> Label;

    /// `(len, labels)` with `label(x) = labels[#{j < len : x_j != 0}]` on 0/1
    /// inputs, if the classifier has that shape.
    fn count_labels(&self, _n: usize) -> Option<(usize, Vec<Label>)> {
        None
    }

    fn describe(&self) -> String;
}

/// Label 1 where a Boolean function holds, 0 elsewhere.
#[derive(Clone, Debug)]
pub struct BoolClassifier(pub Builtin);

impl Classifier for BoolClassifier {
    fn classify(&self, x: &[Value]) -> Label {
        self.0.eval(x) as Label
    }

    fn count_labels(&self, n: usize) -> Option<(usize, Vec<Label>)> {
        let form = self.0.count_form(n)?;
        Some((form.len, form.accept.iter().map(|&a| a as Label).collect()))
    }

    fn describe(&self) -> String {
        self.0.describe()
    }
}

/// The same label everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ConstLabel(pub Label);

impl Classifier for ConstLabel {
    fn classify(&self, _x: &[Value]) -> Label {
        self.0
    }

    fn count_labels(&self, _n: usize) -> Option<(usize, Vec<Label>)> {
        Some((0, vec![self.0]))
    }

    fn describe(&self) -> String {
        format!("label({})", self.0)
    }
}

/// `1 - c(x)` for a 0/1 classifier `c`.
pub struct Flipped(pub Arc<dyn Classifier>);

impl Classifier for Flipped {
    fn classify(&self, x: &[Value]) -> Label {
        1 - self.0.classify(x)
    }

    fn count_labels(&self, n: usize) -> Option<(usize, Vec<Label>)> {
        let (len, labels) = self.0.count_labels(n)?;
        Some((len, labels.into_iter().map(|l| 1 - l).collect()))
    }

    fn describe(&self) -> String {
        format!("flip({})", self.0.describe())
    }
}

pub fn label_from_token(token: &str) -> Label {
    if let Ok(v) = token.parse::<Label>() {
        return v;
    }
    static TABLE: OnceLock<Mutex<HashMap<String, Label>>> = OnceLock::new();
    let mut table = TABLE.get_or_init(Default::default).lock().expect("label table");
    let next = i64::MIN / 2 + table.len() as Label;
    *table.entry(token.to_string()).or_insert(next)
}

struct LabelPipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Classifier run by an external process: one line of space-separated values
/// in, one label token out.
pub struct ExternalClassifier {
    command: Vec<String>,
    pipe: Mutex<LabelPipe>,
}

impl ExternalClassifier {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command.split_first().ok_or_else(|| Error::External("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalClassifier { command: command.to_vec(), pipe: Mutex::new(LabelPipe { child, stdin, stdout }) })
    }

    pub fn query(&self, x: &[Value]) -> Result<Label> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::External("poisoned lock".into()))?;
        writeln!(pipe.stdin, "{}", join_values(x))?;
        pipe.stdin.flush()?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line)? == 0 {
            return Err(Error::External(format!("`{}` closed its output", self.command.join(" "))));
        }
        let token = line.trim();
        if token.is_empty() {
            return Err(Error::External("empty label".into()));
        }
        Ok(label_from_token(token))
    }
}

impl Classifier for ExternalClassifier {
    fn classify(&self, x: &[Value]) -> Label {
        self.query(x).unwrap_or_else(|e| panic!("external classifier failed: {e}"))
    }

    fn describe(&self) -> String {
        format!("external({})", self.command.join(" "))
    }
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

pub(crate) fn join_values(x: &[Value]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// `1` exactly where hypothesis and concept disagree.
pub struct ErrorRegion {
    pub hypothesis: Arc<dyn Classifier>,
    pub concept: Arc<dyn Classifier>,
}

impl BooleanFn for ErrorRegion {
    fn eval(&self, x: &[Value]) -> bool {
        self.hypothesis.classify(x) != self.concept.classify(x)
    }

    fn count_form(&self, n: usize) -> Option<CountForm> {
        let (lh, h) = self.hypothesis.count_labels(n)?;
        let (lc, c) = self.concept.count_labels(n)?;
        let constant = |v: &[Label]| v.iter().all(|&l| l == v[0]);
        if lh == lc {
            Some(CountForm::new(lh, |k| h[k] != c[k]))
        } else if constant(&c) {
            Some(CountForm::new(lh, |k| h[k] != c[0]))
        } else if constant(&h) {
            Some(CountForm::new(lc, |k| h[0] != c[k]))
        } else {
            None
        }
    }

    fn describe(&self) -> String {
        format!("error({} vs {})", self.hypothesis.describe(), self.concept.describe())
    }
}

pub struct EvasionProblem {
    pub space: Arc<ProductSpace>,
    pub hypothesis: Arc<dyn Classifier>,
    pub concept: Arc<dyn Classifier>,
    /// Initial risk, if known.
    pub mu: Option<f64>,
}

impl EvasionProblem {
    pub fn new(space: Arc<ProductSpace>, hypothesis: Arc<dyn Classifier>, concept: Arc<dyn Classifier>) -> Self {
        EvasionProblem { space, hypothesis, concept, mu: None }
    }

    pub fn error_region_objective(&self) -> Objective {
        Objective::new(ErrorRegion { hypothesis: self.hypothesis.clone(), concept: self.concept.clone() })
    }
}

/// Tampers one test instance.
pub fn attack_instance(attacker: &Attacker, x: &[Value], streams: &TrialStreams) -> Result<(Vec<Value>, AttackTrace)> {
    attacker.attack(x, streams)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvasionReport {
    pub untampered_risk: f64,
    pub adversarial_risk: f64,
    pub hamming_mean: f64,
    pub t_mean: f64,
    pub comparator: Option<Check>,
    pub attack: AttackReport,
}

/// Attacks `trials` fresh instances. Fails if the initial risk is zero.
pub fn evaluate_evasion(problem: &EvasionProblem, params: AttackParams, trials: u64, seed: u64) -> Result<EvasionReport> {
    let mut params = params;
    if params.mu.is_none() {
        params.mu = problem.mu;
    }
    let attacker = Attacker::new(problem.space.clone(), problem.error_region_objective(), params)?;
    let mu = attacker.initial_mean(seed)?;
    if mu.value <= 0.0 {
        return Err(Error::Degenerate("initial risk is zero; no tampering can help".into()));
    }
    let attack = measure_with_mean(&attacker, trials, seed, mu)?;
    Ok(EvasionReport::from_attack(problem.space.n(), params.rho.unwrap_or(DEFAULT_RHO), attack))
}

impl EvasionReport {
    /// Attaches the budget comparator for moving risk `attack.mu` to `rho`.
    pub fn from_attack(n: usize, rho: f64, attack: AttackReport) -> Self {
        let comparator = theorem_budget(n, attack.mu.value, rho).ok().map(|b| {
            let c = Comparator::new(
                Formula::TheoremBudget.name(),
                Formula::TheoremBudget.expression(),
                "hamming",
                Direction::AtMost,
                b,
            );
            Check::new(c, attack.hamming_mean, attack.hamming_ci)
        });
        EvasionReport {
            untampered_risk: attack.mu.value,
            adversarial_risk: attack.bias_hat,
            hamming_mean: attack.hamming_mean,
            t_mean: attack.t_mean,
            comparator,
            attack,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{enumerate_attack, ExactOracle};
    use crate::space::DEFAULT_ENUMERATION_CAP;

    fn bits(n: usize) -> Arc<ProductSpace> {
        Arc::new(ProductSpace::uniform_bits(n))
    }

    fn and2() -> Arc<dyn Classifier> {
        Arc::new(BoolClassifier(Builtin::And(2)))
    }

    #[test]
    fn error_region_values() {
        let zero: Arc<dyn Classifier> = Arc::new(ConstLabel(0));
        let same = EvasionProblem::new(bits(3), and2(), and2()).error_region_objective();
        let exact = ExactOracle::new(bits(3), same).unwrap();
        assert_eq!(exact.mean(&[]).unwrap(), 0.0);

        let p = EvasionProblem::new(bits(3), and2(), zero);
        let exact = ExactOracle::new(bits(3), p.error_region_objective()).unwrap();
        assert!(exact.uses_counting());
        assert_eq!(exact.mean(&[]).unwrap(), 0.25);

        let flipped: Arc<dyn Classifier> = Arc::new(Flipped(and2()));
        let total = EvasionProblem::new(bits(3), flipped, and2()).error_region_objective();
        for x in [[0, 0, 0], [1, 1, 0], [1, 0, 1]] {
            assert!(total.eval(&x));
        }
    }

    #[test]
    fn count_form_matches_eval() {
        let pairs: Vec<(Arc<dyn Classifier>, Arc<dyn Classifier>)> = vec![
            (Arc::new(BoolClassifier(Builtin::Majority)), Arc::new(BoolClassifier(Builtin::Xor(4)))),
            (Arc::new(BoolClassifier(Builtin::And(2))), Arc::new(ConstLabel(1))),
            (Arc::new(ConstLabel(0)), Arc::new(BoolClassifier(Builtin::Or(3)))),
        ];
        let space = ProductSpace::uniform_bits(4);
        for (h, c) in pairs {
            let e = ErrorRegion { hypothesis: h, concept: c };
            let form = e.count_form(4).unwrap();
            for (x, _) in space.enumerate_support(DEFAULT_ENUMERATION_CAP).unwrap() {
                assert_eq!(form.eval(&x), e.eval(&x));
            }
        }
    }

    #[test]
    fn and_of_two_bits_is_always_evaded() {
        let problem = EvasionProblem::new(bits(4), and2(), Arc::new(ConstLabel(0)));
        let exact = ExactOracle::new(bits(4), problem.error_region_objective()).unwrap();
        let s = enumerate_attack(&exact, 0.2, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!((s.bias, s.expected_hamming, s.expected_tamperings), (1.0, 1.0, 2.0));

        let attacker = Attacker::new(bits(4), problem.error_region_objective(), AttackParams::exact(0.2)).unwrap();
        for (x, _) in bits(4).enumerate_support(DEFAULT_ENUMERATION_CAP).unwrap() {
            let (y, trace) = attack_instance(&attacker, &x, &TrialStreams::new(0, 0)).unwrap();
            assert_eq!(&y[..2], &[1, 1]);
            assert_eq!(&y[2..], &x[2..]);
            assert_eq!(trace.tamperings, 2);
        }
    }

    #[test]
    fn total_error_needs_no_budget() {
        let flipped: Arc<dyn Classifier> = Arc::new(Flipped(and2()));
        let problem = EvasionProblem::new(bits(4), flipped, and2());
        let r = evaluate_evasion(&problem, AttackParams::exact(0.2), 50, 1).unwrap();
        assert_eq!(r.adversarial_risk, 1.0);
        assert_eq!(r.hamming_mean, 0.0);
    }

    #[test]
    fn zero_risk_is_degenerate() {
        let problem = EvasionProblem::new(bits(4), and2(), and2());
        assert!(matches!(evaluate_evasion(&problem, AttackParams::exact(0.2), 5, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn comparator_reference_value() {
        let b = theorem_budget(100, 0.25, 0.99).unwrap();
        assert!((b - 184.1).abs() < 0.1);
    }

    #[test]
    fn tokens_intern_consistently() {
        assert_eq!(label_from_token("3"), 3);
        let a = label_from_token("cat");
        assert_eq!(label_from_token("cat"), a);
        assert_ne!(label_from_token("dog"), a);
    }
}

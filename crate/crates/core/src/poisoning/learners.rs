//! Deterministic learners.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::evasion::{join_values, label_from_token, Label};
use crate::space::Value;

/// Labelled examples stored row-major, `dim` values per instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub dim: usize,
    pub instances: Vec<Value>,
    pub labels: Vec<Label>,
}

impl TrainingSet {
    pub fn new(dim: usize) -> Self {
        TrainingSet { dim, instances: Vec::new(), labels: Vec::new() }
    }

    pub fn clear(&mut self, dim: usize) {
        self.dim = dim;
        self.instances.clear();
        self.labels.clear();
    }

    pub fn push(&mut self, x: &[Value], label: Label) {
        debug_assert_eq!(x.len(), self.dim);
        self.instances.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn instance(&self, i: usize) -> &[Value] {
        &self.instances[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[Value], Label)> + '_ {
        (0..self.len()).map(move |i| (self.instance(i), self.labels[i]))
    }
}

pub trait Hypothesis: Send + Sync {
    fn predict(&self, x: &[Value]) -> Label;
}

pub trait Learner: Send + Sync {
    fn train(&self, data: &TrainingSet) -> Result<Box<dyn Hypothesis>>;

    /// Trains and predicts one probe.
    fn fit_predict_one(&self, data: &TrainingSet, probe: &[Value]) -> Result<Label> {
        Ok(self.train(data)?.predict(probe))
    }

    /// Trains and predicts every probe in a flat buffer of `data.dim`-wide rows.
    fn fit_predict(&self, data: &TrainingSet, probes: &[Value]) -> Result<Vec<Label>> {
        let h = self.train(data)?;
        Ok(probes.chunks(data.dim.max(1)).map(|x| h.predict(x)).collect())
    }

    fn describe(&self) -> String;
}

struct Constant(Label);

impl Hypothesis for Constant {
    fn predict(&self, _x: &[Value]) -> Label {
        self.0
    }
}

/// Labels in order of first appearance with their counts.
fn label_counts(labels: &[Label]) -> Vec<(Label, usize)> {
    let mut out: Vec<(Label, usize)> = Vec::new();
    for &l in labels {
        match out.iter_mut().find(|(x, _)| *x == l) {
            Some(slot) => slot.1 += 1,
            None => out.push((l, 1)),
        }
    }
    out
}

fn modal_label(labels: &[Label]) -> Result<Label> {
    // fast path for two labels without allocating
    let first = *labels.first().ok_or_else(|| Error::invalid("training set", "empty"))?;
    let mut other = None;
    let (mut a, mut b) = (0usize, 0usize);
    for &l in labels {
        if l == first {
            a += 1;
        } else if other.is_none() || other == Some(l) {
            other = Some(l);
            b += 1;
        } else {
            let counts = label_counts(labels);
            let best = counts.iter().map(|c| c.1).max().expect("non-empty");
            return Ok(counts.iter().find(|c| c.1 == best).expect("max exists").0);
        }
    }
    Ok(if b > a { other.expect("counted") } else { first })
}

/// The constant hypothesis with the most frequent training label; ties go to
/// the label seen first (the first example's label when it is tied).
#[derive(Clone, Copy, Debug, Default)]
pub struct MajorityLabel;

impl Learner for MajorityLabel {
    fn train(&self, data: &TrainingSet) -> Result<Box<dyn Hypothesis>> {
        Ok(Box::new(Constant(modal_label(&data.labels)?)))
    }

    fn fit_predict_one(&self, data: &TrainingSet, _probe: &[Value]) -> Result<Label> {
        modal_label(&data.labels)
    }

    fn describe(&self) -> String {
        "majority_label".into()
    }
}

/// `x[coord] >= cut ? hi : lo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cut {
    pub coord: usize,
    pub cut: Value,
    pub lo: Label,
    pub hi: Label,
}

impl Hypothesis for Cut {
    fn predict(&self, x: &[Value]) -> Label {
        if x[self.coord] >= self.cut {
            self.hi
        } else {
            self.lo
        }
    }
}

/// Single-coordinate threshold with the fewest training mistakes. Cuts are
/// tried in ascending order and only a strictly better one replaces the
/// current choice, so ties go to the smallest cut.
#[derive(Clone, Copy, Debug)]
pub struct Threshold1d {
    pub coord: usize,
}

impl Threshold1d {
    pub fn fit(&self, data: &TrainingSet) -> Result<Cut> {
        if data.is_empty() {
            return Err(Error::invalid("training set", "empty"));
        }
        if self.coord >= data.dim {
            return Err(Error::IndexOutOfRange { index: self.coord, len: data.dim });
        }
        let classes: Vec<Label> = label_counts(&data.labels).into_iter().map(|c| c.0).collect();
        let k = classes.len();
        let mut rows: Vec<(Value, usize)> = data
            .iter()
            .map(|(x, l)| (x[self.coord], classes.iter().position(|&c| c == l).expect("known label")))
            .collect();
        rows.sort_unstable();
        let totals: Vec<usize> = (0..k).map(|c| rows.iter().filter(|r| r.1 == c).count()).collect();
        let m = rows.len();
        let mut below = vec![0usize; k];
        let mut best: Option<(usize, Cut)> = None;
        let mut idx = 0;
        loop {
            let cut = if idx < m { rows[idx].0 } else { rows[m - 1].0.saturating_add(1) };
            let n_below = idx;
            for (lo, &lo_label) in classes.iter().enumerate() {
                for (hi, &hi_label) in classes.iter().enumerate() {
                    let err = (n_below - below[lo]) + ((m - n_below) - (totals[hi] - below[hi]));
                    if best.as_ref().is_none_or(|(e, _)| err < *e) {
                        best = Some((err, Cut { coord: self.coord, cut, lo: lo_label, hi: hi_label }));
                    }
                }
            }
            if idx >= m {
                break;
            }
            let value = rows[idx].0;
            while idx < m && rows[idx].0 == value {
                below[rows[idx].1] += 1;
                idx += 1;
            }
        }
        Ok(best.expect("at least one cut").1)
    }
}

impl Learner for Threshold1d {
    fn train(&self, data: &TrainingSet) -> Result<Box<dyn Hypothesis>> {
        Ok(Box::new(self.fit(data)?))
    }

    fn describe(&self) -> String {
        format!("threshold_1d({})", self.coord)
    }
}

/// Per-class value frequencies for each coordinate.
pub struct Centroids {
    classes: Vec<(Label, usize, Vec<Vec<(Value, usize)>>)>,
}

impl Centroids {
    /// Mean Hamming distance from `x` to the members of class `c`.
    fn distance(&self, c: usize, x: &[Value]) -> f64 {
        let (_, size, freqs) = &self.classes[c];
        let same: usize =
            freqs.iter().zip(x).map(|(f, v)| f.iter().find(|(w, _)| w == v).map_or(0, |p| p.1)).sum();
        x.len() as f64 - same as f64 / *size as f64
    }
}

impl Hypothesis for Centroids {
    fn predict(&self, x: &[Value]) -> Label {
        let mut best = (f64::INFINITY, self.classes[0].0);
        for (c, class) in self.classes.iter().enumerate() {
            let d = self.distance(c, x);
            if d < best.0 {
                best = (d, class.0);
            }
        }
        best.1
    }
}

/// Nearest class by mean Hamming distance to its members; ties go to the
/// class seen first.
#[derive(Clone, Copy, Debug, Default)]
pub struct NearestCentroid;

impl NearestCentroid {
    pub fn fit(&self, data: &TrainingSet) -> Result<Centroids> {
        if data.is_empty() {
            return Err(Error::invalid("training set", "empty"));
        }
        let mut classes: Vec<(Label, usize, Vec<Vec<(Value, usize)>>)> = Vec::new();
        for (x, l) in data.iter() {
            let pos = match classes.iter().position(|c| c.0 == l) {
                Some(p) => p,
                None => {
                    classes.push((l, 0, vec![Vec::new(); data.dim]));
                    classes.len() - 1
                }
            };
            let class = &mut classes[pos];
            class.1 += 1;
            for (f, &v) in class.2.iter_mut().zip(x) {
                match f.iter_mut().find(|(w, _)| *w == v) {
                    Some(slot) => slot.1 += 1,
                    None => f.push((v, 1)),
                }
            }
        }
        Ok(Centroids { classes })
    }
}

impl Learner for NearestCentroid {
    fn train(&self, data: &TrainingSet) -> Result<Box<dyn Hypothesis>> {
        Ok(Box::new(self.fit(data)?))
    }

    fn describe(&self) -> String {
        "nearest_centroid".into()
    }
}

/// Builds a toy learner by name: `majority_label`, `threshold_1d` (on
/// coordinate `coord`) or `nearest_centroid`.
pub fn make_toy_learner(kind: &str, coord: usize) -> Result<Arc<dyn Learner>> {
    match kind {
        "majority_label" => Ok(Arc::new(MajorityLabel)),
        "threshold_1d" => Ok(Arc::new(Threshold1d { coord })),
        "nearest_centroid" => Ok(Arc::new(NearestCentroid)),
        other => Err(Error::UnknownLearner(other.to_string())),
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Learner run by an external process. Each query sends the training pairs
/// (`values TAB label` per line), a blank line, the probe instances, and a
/// blank line; the process answers one label per probe.
pub struct ExternalLearner {
    command: Vec<String>,
    session: Arc<Mutex<Session>>,
}

impl ExternalLearner {
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
        Ok(ExternalLearner { command: command.to_vec(), session: Arc::new(Mutex::new(Session { child, stdin, stdout })) })
    }
}

fn run_session(session: &Mutex<Session>, data: &TrainingSet, probes: &[Value]) -> Result<Vec<Label>> {
    let mut s = session.lock().map_err(|_| Error::External("poisoned lock".into()))?;
    let mut msg = String::new();
    for (x, l) in data.iter() {
        msg.push_str(&join_values(x));
        msg.push('\t');
        msg.push_str(&l.to_string());
        msg.push('\n');
    }
    msg.push('\n');
    let width = data.dim.max(1);
    for x in probes.chunks(width) {
        msg.push_str(&join_values(x));
        msg.push('\n');
    }
    msg.push('\n');
    s.stdin.write_all(msg.as_bytes())?;
    s.stdin.flush()?;
    let expected = probes.len() / width;
    let mut out = Vec::with_capacity(expected);
    let mut line = String::new();
    while out.len() < expected {
        line.clear();
        if s.stdout.read_line(&mut line)? == 0 {
            return Err(Error::External("learner closed its output".into()));
        }
        let token = line.trim();
        if !token.is_empty() {
            out.push(label_from_token(token));
        }
    }
    Ok(out)
}

struct ExternalHypothesis {
    session: Arc<Mutex<Session>>,
    data: TrainingSet,
}

impl Hypothesis for ExternalHypothesis {
    fn predict(&self, x: &[Value]) -> Label {
        run_session(&self.session, &self.data, x).unwrap_or_else(|e| panic!("external learner failed: {e}"))[0]
    }
}

impl Learner for ExternalLearner {
    fn train(&self, data: &TrainingSet) -> Result<Box<dyn Hypothesis>> {
        Ok(Box::new(ExternalHypothesis { session: self.session.clone(), data: data.clone() }))
    }

    fn fit_predict_one(&self, data: &TrainingSet, probe: &[Value]) -> Result<Label> {
        Ok(run_session(&self.session, data, probe)?[0])
    }

    fn fit_predict(&self, data: &TrainingSet, probes: &[Value]) -> Result<Vec<Label>> {
        run_session(&self.session, data, probes)
    }

    fn describe(&self) -> String {
        format!("external({})", self.command.join(" "))
    }
}

impl Drop for ExternalLearner {
    fn drop(&mut self) {
        if let Ok(mut s) = self.session.lock() {
            let _ = s.child.kill();
            let _ = s.child.wait();
        }
    }
}

//! Exact conditional means `a(prefix) = E[f(prefix, U_{i+1}, ..., U_n)]`.
//!
//! Two backends: a counting table for objectives that only look at how many
//! of the first coordinates are set, over independent 0/1 blocks, and a
//! memoised enumeration for everything with a small enough support.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::oracle::GainOracle;
use crate::rng::StreamRng;
use crate::space::{ProductSpace, Value, DEFAULT_ENUMERATION_CAP};

use super::{CountForm, Objective};

/// Suffixes with at most this many completions are summed directly instead
/// of through the prefix memo.
pub const DEFAULT_DIRECT_LIMIT: u128 = 1 << 12;

/// Longest count form the counting backend accepts (the table is quadratic).
pub const MAX_COUNT_TABLE_LEN: usize = 4096;

/// Slack under which two exact gains count as tied.
const TIE_SLACK: f64 = 1e-12;

/// `rows[i][c]` is the mean given that `c` of the first `i` relevant
/// coordinates are set.
#[derive(Debug)]
pub(crate) struct CountTable {
    pub(crate) form: CountForm,
    pub(crate) ps: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl CountTable {
    fn build(form: CountForm, ps: Vec<f64>) -> Self {
        let len = form.len;
        let mut rows = vec![Vec::new(); len + 1];
        rows[len] = form.accept.iter().map(|&a| a as u8 as f64).collect();
        for i in (0..len).rev() {
            let p = ps[i];
            let next = &rows[i + 1];
            rows[i] = (0..=i).map(|c| (1.0 - p) * next[c] + p * next[c + 1]).collect();
        }
        CountTable { form, ps, rows }
    }

    /// Number of relevant coordinates fixed by the prefix and how many are set.
    pub(crate) fn position(&self, prefix: &[Value]) -> (usize, usize) {
        let i = prefix.len().min(self.form.len);
        (i, prefix[..i].iter().filter(|&&v| v != 0).count())
    }

    pub(crate) fn mean(&self, prefix: &[Value]) -> f64 {
        let (i, c) = self.position(prefix);
        self.rows[i][c]
    }
}

struct Enumerator {
    tables: Vec<Vec<(Value, f64)>>,
    suffix_sizes: Vec<u128>,
    direct_limit: u128,
    memo: RwLock<HashMap<Vec<Value>, f64>>,
}

impl Enumerator {
    fn mean(&self, f: &Objective, prefix: &[Value]) -> f64 {
        let i = prefix.len();
        if self.suffix_sizes[i] <= self.direct_limit {
            let mut buf = Vec::with_capacity(self.tables.len());
            buf.extend_from_slice(prefix);
            buf.resize(self.tables.len(), 0);
            return self.sum_from(f, &mut buf, i);
        }
        if let Some(&m) = self.memo.read().expect("memo lock").get(prefix) {
            return m;
        }
        let mut buf = Vec::with_capacity(i + 1);
        buf.extend_from_slice(prefix);
        buf.push(0);
        let mut total = 0.0;
        for &(v, p) in &self.tables[i] {
            buf[i] = v;
            total += p * self.mean(f, &buf);
        }
        self.memo.write().expect("memo lock").insert(prefix.to_vec(), total);
        total
    }

    fn sum_from(&self, f: &Objective, buf: &mut [Value], pos: usize) -> f64 {
        if pos == buf.len() {
            return f.eval(buf) as u8 as f64;
        }
        let mut total = 0.0;
        for &(v, p) in &self.tables[pos] {
            buf[pos] = v;
            total += p * self.sum_from(f, buf, pos + 1);
        }
        total
    }
}

enum Backend {
    Counting(CountTable),
    Enumeration(Enumerator),
}

/// One candidate for the next block with its probability and conditional mean.
#[derive(Clone, Copy, Debug)]
pub struct Candidate {
    pub value: Value,
    pub weight: f64,
    pub mean: f64,
}

/// Exact oracle for a fixed objective over a fixed space.
pub struct ExactOracle {
    space: Arc<ProductSpace>,
    objective: Objective,
    backend: Backend,
    cap: u128,
}

impl std::fmt::Debug for ExactOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let backend = match self.backend {
            Backend::Counting(_) => "counting",
            Backend::Enumeration(_) => "enumeration",
        };
        write!(f, "ExactOracle({backend}, n={})", self.space.n())
    }
}

impl ExactOracle {
    pub fn new(space: Arc<ProductSpace>, objective: Objective) -> Result<Self> {
        ExactOracle::with_cap(space, objective, DEFAULT_ENUMERATION_CAP)
    }

    /// Like [`ExactOracle::new`], with a custom cap on the size of any
    /// enumerated support.
    pub fn with_cap(space: Arc<ProductSpace>, objective: Objective, cap: u128) -> Result<Self> {
        ExactOracle::build(space, objective, cap, DEFAULT_DIRECT_LIMIT)
    }

    fn build(space: Arc<ProductSpace>, objective: Objective, cap: u128, direct_limit: u128) -> Result<Self> {
        for b in space.blocks() {
            match b.support_len() {
                None => {
                    return Err(Error::NotEnumerable(format!("block {} has sampling access only", b.id())))
                }
                Some(len) if len > cap => return Err(Error::CapExceeded { size: len.to_string(), cap }),
                _ => {}
            }
        }
        if let Some(table) = counting_table(&space, &objective) {
            return Ok(ExactOracle { space, objective, backend: Backend::Counting(table), cap });
        }
        let n = space.n();
        match space.support_size() {
            Some(size) if size <= cap => {}
            Some(size) => return Err(Error::CapExceeded { size: size.to_string(), cap }),
            None => return Err(Error::CapExceeded { size: "more than 2^128".into(), cap }),
        }
        let tables = space.blocks().iter().map(|b| b.support_table(cap)).collect::<Result<Vec<_>>>()?;
        let suffix_sizes = (0..=n).map(|i| space.suffix_size(i).unwrap_or(u128::MAX)).collect();
        let enumerator = Enumerator { tables, suffix_sizes, direct_limit, memo: RwLock::new(HashMap::new()) };
        Ok(ExactOracle { space, objective, backend: Backend::Enumeration(enumerator), cap })
    }

    pub fn space(&self) -> &Arc<ProductSpace> {
        &self.space
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn uses_counting(&self) -> bool {
        matches!(self.backend, Backend::Counting(_))
    }

    pub(crate) fn count_table(&self) -> Option<&CountTable> {
        match &self.backend {
            Backend::Counting(t) => Some(t),
            Backend::Enumeration(_) => None,
        }
    }

    /// Conditional mean of the objective given a prefix.
    pub fn mean(&self, prefix: &[Value]) -> Result<f64> {
        self.space.check_prefix(prefix)?;
        Ok(self.mean_unchecked(prefix))
    }

    pub(crate) fn mean_unchecked(&self, prefix: &[Value]) -> f64 {
        match &self.backend {
            Backend::Counting(t) => t.mean(prefix),
            Backend::Enumeration(e) => e.mean(&self.objective, prefix),
        }
    }

    /// Exact gain of the last block of a non-empty prefix.
    pub fn gain(&self, prefix: &[Value]) -> Result<f64> {
        if prefix.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        self.space.check_prefix(prefix)?;
        let i = prefix.len();
        Ok(self.mean_unchecked(prefix) - self.mean_unchecked(&prefix[..i - 1]))
    }

    /// The mean of the prefix and of each extension by one block, in
    /// support order.
    pub fn candidates(&self, prefix: &[Value]) -> Result<(f64, Vec<Candidate>)> {
        let n = self.space.n();
        if prefix.len() >= n {
            return Err(Error::FullPrefix(n));
        }
        self.space.check_prefix(prefix)?;
        let base = self.mean_unchecked(prefix);
        let block = &self.space.blocks()[prefix.len()];
        let mut buf = Vec::with_capacity(prefix.len() + 1);
        buf.extend_from_slice(prefix);
        buf.push(0);
        let table = block.support_table(self.cap)?;
        let out = table
            .into_iter()
            .map(|(value, weight)| {
                *buf.last_mut().expect("non-empty") = value;
                Candidate { value, weight, mean: self.mean_unchecked(&buf) }
            })
            .collect();
        Ok((base, out))
    }

    /// Largest exact gain of the next block and the first value attaining it.
    pub fn max_gain(&self, prefix: &[Value]) -> Result<(f64, Value)> {
        let (base, cands) = self.candidates(prefix)?;
        Ok(best_candidate(base, &cands))
    }
}

/// First candidate whose gain beats all earlier ones by more than the tie
/// slack.
pub(crate) fn best_candidate(base: f64, cands: &[Candidate]) -> (f64, Value) {
    let mut best = (cands[0].mean - base, cands[0].value);
    for c in &cands[1..] {
        let g = c.mean - base;
        if g > best.0 + TIE_SLACK {
            best = (g, c.value);
        }
    }
    best
}

fn counting_table(space: &ProductSpace, objective: &Objective) -> Option<CountTable> {
    let form = objective.count_form(space.n())?;
    if form.len > MAX_COUNT_TABLE_LEN || form.len > space.n() {
        return None;
    }
    let ps = space.blocks()[..form.len].iter().map(|b| b.bernoulli_p()).collect::<Option<Vec<_>>>()?;
    Some(CountTable::build(form, ps))
}

impl GainOracle for ExactOracle {
    fn max_gain(&self, prefix: &[Value], _rng: &mut StreamRng) -> Result<(f64, Value)> {
        ExactOracle::max_gain(self, prefix)
    }

    fn gain(&self, prefix: &[Value], _rng: &mut StreamRng) -> Result<f64> {
        ExactOracle::gain(self, prefix)
    }

    fn max_gain_cost(&self) -> u64 {
        0
    }

    fn gain_cost(&self) -> u64 {
        0
    }
}

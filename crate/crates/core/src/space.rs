//! Product spaces of independent blocks and the Hamming metric.
//!
//! A block value is a `u64` code. Small integer domains use the integer
//! itself; a block whose domain is a whole instance space uses the
//! mixed-radix index of the instance tuple (see [`ProductSpace::encode`]).

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub type Value = u64;

/// Default cap on the number of tuples an enumeration may visit.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 24;

const WEIGHT_TOLERANCE: f64 = 1e-12;

/// A sampler for blocks whose support cannot be listed.
pub trait BlockSampler: Send + Sync {
    fn sample(&self, rng: &mut StreamRng) -> Value;
    /// Encoded bit length of the produced values.
    fn bit_length(&self) -> u32;
    /// Whether `v` can be produced. Defaults to accepting everything.
    fn contains(&self, _v: Value) -> bool {
        true
    }
}

#[derive(Clone)]
pub enum Support {
    /// Uniform over `0..bound`.
    UniformInts { bound: u64 },
    /// Finite support with explicit probabilities.
    Explicit { values: Vec<Value>, weights: Vec<f64>, index: WeightedIndex<f64> },
    /// One full instance drawn from another product space, encoded by its
    /// enumeration index.
    Instances(Arc<ProductSpace>),
    /// Sampling access only.
    Sampler(Arc<dyn BlockSampler>),
}

impl fmt::Debug for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Support::UniformInts { bound } => write!(f, "UniformInts({bound})"),
            Support::Explicit { values, weights, .. } => {
                f.debug_struct("Explicit").field("values", values).field("weights", weights).finish()
            }
            Support::Instances(space) => write!(f, "Instances(n={})", space.n()),
            Support::Sampler(_) => write!(f, "Sampler"),
        }
    }
}

impl Support {
    pub fn uniform_ints(bound: u64) -> Result<Self> {
        if bound == 0 {
            return Err(Error::invalid("bound", "uniform block needs at least one value"));
        }
        Ok(Support::UniformInts { bound })
    }

    pub fn uniform_bit() -> Self {
        Support::UniformInts { bound: 2 }
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Support::explicit(vec![(0, 1.0 - p), (1, p)])
    }

    pub fn explicit(pairs: Vec<(Value, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidWeights("empty support".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(v, w) in &pairs {
            if !seen.insert(v) {
                return Err(Error::InvalidWeights(format!("value {v} listed twice")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidWeights(format!("weight {w} of value {v}")));
            }
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let (values, weights): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::InvalidWeights(e.to_string()))?;
        Ok(Support::Explicit { values, weights, index })
    }

    pub fn instances(space: Arc<ProductSpace>) -> Result<Self> {
        if !space.blocks.iter().all(|b| b.support_len().is_some()) {
            return Err(Error::NotEnumerable("instance blocks need finite supports".into()));
        }
        match space.support_size() {
            Some(size) if size <= u64::MAX as u128 => Ok(Support::Instances(space)),
            _ => Err(Error::NotEnumerable("instance space has more than 2^64 tuples".into())),
        }
    }

    pub fn sampler(s: Arc<dyn BlockSampler>) -> Self {
        Support::Sampler(s)
    }
}

/// One coordinate of a product space.
#[derive(Clone, Debug)]
pub struct BlockDomain {
    id: usize,
    support: Support,
}

fn bytes_bits(max: u64) -> u32 {
    let bits = 64 - max.leading_zeros();
    bits.div_ceil(8).max(1) * 8
}

impl BlockDomain {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// Encoded length in bits, rounded up to whole bytes.
    pub fn bit_length(&self) -> u32 {
        match &self.support {
            Support::UniformInts { bound } => bytes_bits(bound - 1),
            Support::Explicit { values, .. } => bytes_bits(values.iter().copied().max().unwrap_or(0)),
            Support::Instances(space) => {
                bytes_bits(space.support_size().map_or(u64::MAX, |s| (s - 1) as u64))
            }
            Support::Sampler(s) => s.bit_length(),
        }
    }

    pub fn support_len(&self) -> Option<u128> {
        match &self.support {
            Support::UniformInts { bound } => Some(*bound as u128),
            Support::Explicit { values, .. } => Some(values.len() as u128),
            Support::Instances(space) => space.support_size(),
            Support::Sampler(_) => None,
        }
    }

    /// The `idx`-th support value in enumeration order.
    pub fn value_at(&self, idx: u64) -> Value {
        match &self.support {
            Support::Explicit { values, .. } => values[idx as usize],
            _ => idx,
        }
    }

    /// Probability of the `idx`-th support value.
    pub fn weight_at(&self, idx: u64) -> f64 {
        match &self.support {
            Support::UniformInts { bound } => 1.0 / *bound as f64,
            Support::Explicit { weights, .. } => weights[idx as usize],
            Support::Instances(space) => space.decode_weight(idx),
            Support::Sampler(_) => f64::NAN,
        }
    }

    pub fn index_of(&self, v: Value) -> Option<u64> {
        match &self.support {
            Support::UniformInts { bound } => (v < *bound).then_some(v),
            Support::Explicit { values, .. } => values.iter().position(|&x| x == v).map(|i| i as u64),
            Support::Instances(space) => space.support_size().and_then(|s| ((v as u128) < s).then_some(v)),
            Support::Sampler(_) => None,
        }
    }

    pub fn contains(&self, v: Value) -> bool {
        match &self.support {
            Support::Sampler(s) => s.contains(v),
            _ => self.index_of(v).is_some(),
        }
    }

    /// `Some(p)` when every support value is 0 or 1, where `p = Pr[1]`.
    pub fn bernoulli_p(&self) -> Option<f64> {
        match &self.support {
            Support::UniformInts { bound: 2 } => Some(0.5),
            Support::UniformInts { bound: 1 } => Some(0.0),
            Support::Explicit { values, weights, .. } if values.iter().all(|&v| v <= 1) => {
                Some(values.iter().zip(weights).filter(|(&v, _)| v == 1).map(|(_, &w)| w).sum())
            }
            _ => None,
        }
    }

    /// Support values with their probabilities, in enumeration order.
    pub fn support_table(&self, cap: u128) -> Result<Vec<(Value, f64)>> {
        let len = self
            .support_len()
            .ok_or_else(|| Error::NotEnumerable(format!("block {} has sampling access only", self.id)))?;
        if len > cap {
            return Err(Error::CapExceeded { size: len.to_string(), cap });
        }
        Ok((0..len as u64).map(|i| (self.value_at(i), self.weight_at(i))).collect())
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Value {
        match &self.support {
            Support::UniformInts { bound } => rng.random_range(0..*bound),
            Support::Explicit { values, index, .. } => values[index.sample(rng)],
            Support::Instances(space) => space.sample_code(rng),
            Support::Sampler(s) => s.sample(rng),
        }
    }

    /// Samples the support index rather than the value.
    fn sample_index(&self, rng: &mut StreamRng) -> u64 {
        match &self.support {
            Support::Explicit { index, .. } => index.sample(rng) as u64,
            _ => self.sample(rng),
        }
    }
}

/// A product of independent blocks.
#[derive(Clone, Debug)]
pub struct ProductSpace {
    blocks: Vec<BlockDomain>,
    size: Option<u128>,
}

impl ProductSpace {
    pub fn new(supports: Vec<Support>) -> Self {
        let blocks: Vec<BlockDomain> = supports.into_iter().enumerate().map(|(id, support)| BlockDomain { id, support }).collect();
        let size = blocks.iter().try_fold(1u128, |acc, b| acc.checked_mul(b.support_len()?));
        ProductSpace { blocks, size }
    }

    pub fn uniform_bits(n: usize) -> Self {
        ProductSpace::new(vec![Support::uniform_bit(); n])
    }

    pub fn uniform_ints(n: usize, bound: u64) -> Result<Self> {
        Ok(ProductSpace::new(vec![Support::uniform_ints(bound)?; n]))
    }

    pub fn bernoulli(ps: &[f64]) -> Result<Self> {
        Ok(ProductSpace::new(ps.iter().map(|&p| Support::bernoulli(p)).collect::<Result<_>>()?))
    }

    /// `m` i.i.d. blocks, each a full draw from `inner`.
    pub fn repeated_instances(inner: Arc<ProductSpace>, m: usize) -> Result<Self> {
        Ok(ProductSpace::new(vec![Support::instances(inner)?; m]))
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[BlockDomain] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> Result<&BlockDomain> {
        self.blocks.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.blocks.len() })
    }

    /// Largest block bit length.
    pub fn max_bit_length(&self) -> u32 {
        self.blocks.iter().map(|b| b.bit_length()).max().unwrap_or(0)
    }

    pub fn sample_block(&self, i: usize, rng: &mut StreamRng) -> Result<Value> {
        Ok(self.block(i)?.sample(rng))
    }

    pub fn sample_full(&self, rng: &mut StreamRng) -> Vec<Value> {
        self.blocks.iter().map(|b| b.sample(rng)).collect()
    }

    /// Overwrites `buf[from..]` with fresh samples of the corresponding blocks.
    pub fn fill_suffix(&self, buf: &mut [Value], from: usize, rng: &mut StreamRng) {
        for (slot, block) in buf[from..].iter_mut().zip(&self.blocks[from..]) {
            *slot = block.sample(rng);
        }
    }

    pub fn contains(&self, x: &[Value]) -> bool {
        x.len() == self.n() && self.is_prefix(x)
    }

    pub fn is_prefix(&self, x: &[Value]) -> bool {
        x.len() <= self.n() && x.iter().zip(&self.blocks).all(|(&v, b)| b.contains(v))
    }

    pub fn check_prefix(&self, x: &[Value]) -> Result<()> {
        if x.len() > self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: x.len() });
        }
        for (i, (&v, b)) in x.iter().zip(&self.blocks).enumerate() {
            if !b.contains(v) {
                return Err(Error::OutsideSupport { block: i, value: v });
            }
        }
        Ok(())
    }

    /// Number of tuples, or `None` if some block is not enumerable or the
    /// count overflows.
    pub fn support_size(&self) -> Option<u128> {
        self.size
    }

    /// Number of completions of a prefix of length `from`.
    pub fn suffix_size(&self, from: usize) -> Option<u128> {
        self.blocks[from..].iter().try_fold(1u128, |acc, b| acc.checked_mul(b.support_len()?))
    }

    /// Iterates over `(tuple, probability)` in lexicographic index order.
    pub fn enumerate_support(&self, cap: u128) -> Result<SupportIter<'_>> {
        let size = self
            .support_size()
            .ok_or_else(|| Error::NotEnumerable("some block has sampling access only or the size overflows".into()))?;
        if size > cap {
            return Err(Error::CapExceeded { size: size.to_string(), cap });
        }
        Ok(SupportIter { space: self, idx: vec![0; self.n()], done: false })
    }

    fn radices(&self) -> impl DoubleEndedIterator<Item = u128> + '_ {
        self.blocks.iter().map(|b| b.support_len().unwrap_or(1))
    }

    /// Mixed-radix index of a tuple, first coordinate most significant. This
    /// is the position of the tuple in [`ProductSpace::enumerate_support`].
    pub fn encode(&self, x: &[Value]) -> Result<Value> {
        if x.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: x.len() });
        }
        let mut code: u128 = 0;
        for (i, (&v, b)) in x.iter().zip(&self.blocks).enumerate() {
            let idx = b.index_of(v).ok_or(Error::OutsideSupport { block: i, value: v })?;
            let radix = b.support_len().ok_or_else(|| Error::NotEnumerable("sampler block".into()))?;
            code = code * radix + idx as u128;
        }
        u64::try_from(code).map_err(|_| Error::NotEnumerable("code exceeds 64 bits".into()))
    }

    /// Inverse of [`ProductSpace::encode`].
    pub fn decode(&self, code: Value) -> Vec<Value> {
        let mut out = vec![0; self.n()];
        self.decode_into(code, &mut out);
        out
    }

    pub fn decode_into(&self, code: Value, out: &mut [Value]) {
        let mut rest = code;
        for ((slot, b), radix) in out.iter_mut().zip(&self.blocks).rev().zip(self.radices().rev()) {
            let (idx, next) = split_digit(rest, radix);
            *slot = b.value_at(idx);
            rest = next;
        }
    }

    fn decode_weight(&self, code: Value) -> f64 {
        let mut rest = code;
        let mut w = 1.0;
        for (b, radix) in self.blocks.iter().rev().zip(self.radices().rev()) {
            let (idx, next) = split_digit(rest, radix);
            w *= b.weight_at(idx);
            rest = next;
        }
        w
    }

    /// Draws a tuple and returns its code without materialising it.
    pub fn sample_code(&self, rng: &mut StreamRng) -> Value {
        let mut code: u128 = 0;
        for b in &self.blocks {
            let radix = b.support_len().unwrap_or(1);
            code = code * radix + b.sample_index(rng) as u128;
        }
        code as u64
    }
}

/// `(rest % radix, rest / radix)` without 128-bit division.
fn split_digit(rest: u64, radix: u128) -> (u64, u64) {
    match u64::try_from(radix) {
        Ok(r) => (rest % r, rest / r),
        Err(_) => (rest, 0),
    }
}

pub struct SupportIter<'a> {
    space: &'a ProductSpace,
    idx: Vec<u64>,
    done: bool,
}

impl Iterator for SupportIter<'_> {
    type Item = (Vec<Value>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let blocks = &self.space.blocks;
        let tuple: Vec<Value> = self.idx.iter().zip(blocks).map(|(&i, b)| b.value_at(i)).collect();
        let prob: f64 = self.idx.iter().zip(blocks).map(|(&i, b)| b.weight_at(i)).product();
        // odometer, last coordinate fastest
        self.done = true;
        for pos in (0..self.idx.len()).rev() {
            self.idx[pos] += 1;
            if (self.idx[pos] as u128) < blocks[pos].support_len().unwrap_or(1) {
                self.done = false;
                break;
            }
            self.idx[pos] = 0;
        }
        Some((tuple, prob))
    }
}

/// Number of coordinates where `u` and `v` differ.
pub fn hamming(u: &[Value], v: &[Value]) -> Result<usize> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch { expected: u.len(), got: v.len() });
    }
    Ok(u.iter().zip(v).filter(|(a, b)| a != b).count())
}

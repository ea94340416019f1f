//! Boolean objectives and exact conditional means.

mod builtin;
mod enumerate;
mod exact;
mod external;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::space::Value;

pub use builtin::Builtin;
pub use enumerate::{enumerate_attack, ExactAttackSummary};
pub use exact::{ExactOracle, DEFAULT_DIRECT_LIMIT, MAX_COUNT_TABLE_LEN};
pub use external::ExternalFn;

/// A Boolean function of a full tuple.
pub trait BooleanFn: Send + Sync {
    fn eval(&self, x: &[Value]) -> bool;

    /// A description of the function on 0/1 inputs as a function of how
    /// many of the first `len` coordinates are one, if it has that shape.
    fn count_form(&self, _n: usize) -> Option<CountForm> {
        None
    }

    fn describe(&self) -> String;
}

/// `f(x) = accept[#{j < len : x_j != 0}]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountForm {
    pub len: usize,
    pub accept: Vec<bool>,
}

impl CountForm {
    pub fn new(len: usize, accept: impl Fn(usize) -> bool) -> Self {
        CountForm { len, accept: (0..=len).map(accept).collect() }
    }

    pub fn eval(&self, x: &[Value]) -> bool {
        self.accept[x[..self.len].iter().filter(|&&v| v != 0).count()]
    }

    pub fn is_constant(&self) -> bool {
        self.accept.iter().all(|&a| a == self.accept[0])
    }
}

struct Closure<F> {
    name: String,
    f: F,
}

impl<F: Fn(&[Value]) -> bool + Send + Sync> BooleanFn for Closure<F> {
    fn eval(&self, x: &[Value]) -> bool {
        (self.f)(x)
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// A Boolean function together with a shared evaluation counter.
///
/// Clones share the counter.
#[derive(Clone)]
pub struct Objective {
    func: Arc<dyn BooleanFn>,
    calls: Arc<AtomicU64>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Objective({})", self.func.describe())
    }
}

impl Objective {
    pub fn new(f: impl BooleanFn + 'static) -> Self {
        Objective::from_arc(Arc::new(f))
    }

    pub fn from_arc(func: Arc<dyn BooleanFn>) -> Self {
        Objective { func, calls: Arc::new(AtomicU64::new(0)) }
    }

    pub fn from_fn(name: impl Into<String>, f: impl Fn(&[Value]) -> bool + Send + Sync + 'static) -> Self {
        Objective::new(Closure { name: name.into(), f })
    }

    pub fn eval(&self, x: &[Value]) -> bool {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.func.eval(x)
    }

    /// Records `k` evaluations performed by a fused sampler.
    pub fn charge(&self, k: u64) {
        self.calls.fetch_add(k, Ordering::Relaxed);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn count_form(&self, n: usize) -> Option<CountForm> {
        self.func.count_form(n)
    }

    pub fn describe(&self) -> String {
        self.func.describe()
    }

    pub fn func(&self) -> &Arc<dyn BooleanFn> {
        &self.func
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn counter_is_shared_and_thread_safe() {
        let f = Objective::from_fn("parity", |x| x.iter().sum::<u64>() % 2 == 1);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let f = f.clone();
                thread::spawn(move || {
                    for _ in 0..1000 {
                        f.eval(&[1, 0]);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        f.charge(5);
        assert_eq!(f.calls(), 4005);
    }

    #[test]
    fn count_form_eval() {
        let form = CountForm::new(3, |c| c >= 2);
        assert!(form.eval(&[1, 0, 1, 0]));
        assert!(!form.eval(&[1, 0, 0, 1]));
        assert!(!form.is_constant());
    }
}

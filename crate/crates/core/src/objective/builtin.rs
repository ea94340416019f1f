use crate::space::Value;

use super::{BooleanFn, CountForm};

/// Built-in objectives. Coordinates are 0-based and a coordinate counts as
/// set when it is nonzero.
#[derive(Clone, Debug, PartialEq)]
pub enum Builtin {
    Const(bool),
    /// All of the first `k` coordinates set.
    And(usize),
    /// Any of the first `k` coordinates set.
    Or(usize),
    /// Odd number of the first `k` coordinates set.
    Xor(usize),
    /// Strictly more than half of all coordinates set.
    Majority,
    Dictator(usize),
    /// `sum_j w_j x_j >= t`.
    Threshold { weights: Vec<f64>, t: f64 },
}

fn set(v: Value) -> bool {
    v != 0
}

impl BooleanFn for Builtin {
    fn eval(&self, x: &[Value]) -> bool {
        match self {
            Builtin::Const(b) => *b,
            Builtin::And(k) => x.iter().take(*k).all(|&v| set(v)),
            Builtin::Or(k) => x.iter().take(*k).any(|&v| set(v)),
            Builtin::Xor(k) => x.iter().take(*k).filter(|&&v| set(v)).count() % 2 == 1,
            Builtin::Majority => 2 * x.iter().filter(|&&v| set(v)).count() > x.len(),
            Builtin::Dictator(i) => x.get(*i).is_some_and(|&v| set(v)),
            Builtin::Threshold { weights, t } => {
                weights.iter().zip(x).fold(0.0, |s, (w, &v)| s + w * v as f64) >= *t
            }
        }
    }

    fn count_form(&self, n: usize) -> Option<CountForm> {
        Some(match self {
            Builtin::Const(b) => CountForm::new(0, |_| *b),
            Builtin::And(k) => {
                let k = (*k).min(n);
                CountForm::new(k, |c| c == k)
            }
            Builtin::Or(k) => CountForm::new((*k).min(n), |c| c >= 1),
            Builtin::Xor(k) => CountForm::new((*k).min(n), |c| c % 2 == 1),
            Builtin::Majority => CountForm::new(n, |c| 2 * c > n),
            Builtin::Dictator(0) if n > 0 => CountForm::new(1, |c| c == 1),
            Builtin::Dictator(_) => return None,
            Builtin::Threshold { weights, t } => {
                let w = *weights.first()?;
                if weights.iter().any(|&x| x != w) {
                    return None;
                }
                let len = weights.len().min(n);
                CountForm::new(len, |c| (0..c).fold(0.0, |s, _| s + w) >= *t)
            }
        })
    }

    fn describe(&self) -> String {
        match self {
            Builtin::Const(b) => format!("const({})", *b as u8),
            Builtin::And(k) => format!("and({k})"),
            Builtin::Or(k) => format!("or({k})"),
            Builtin::Xor(k) => format!("xor({k})"),
            Builtin::Majority => "majority".into(),
            Builtin::Dictator(i) => format!("dictator({i})"),
            Builtin::Threshold { weights, t } => format!("threshold({weights:?}, {t})"),
        }
    }
}

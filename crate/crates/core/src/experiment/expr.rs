//! The small call-expression language used in config strings, e.g.
//! `uniform_ints(4, 3)`, `threshold([1, 2, 3], 3)` or
//! `explicit([[0, 0.25], [1, 0.75]], [[5, 1]])`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::evasion::{BoolClassifier, Classifier, ConstLabel, ExternalClassifier, Flipped, Label};
use crate::objective::{Builtin, ExternalFn, Objective};
use crate::poisoning::{make_toy_learner, ExternalLearner, Learner};
use crate::space::{ProductSpace, Support, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Number(f64),
    List(Vec<Expr>),
    Call { name: String, args: Vec<Expr> },
}

fn err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next().filter(|&c| f(c)) {
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn expr(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('[') => {
                self.pos += 1;
                let items = self.items(']')?;
                Ok(Expr::List(items))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let tok = self.take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '+' | '.'));
                tok.parse().map(Expr::Number).map_err(|_| err(format!("bad number `{tok}`")))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_').to_string();
                let args = if self.eat('(') { self.items(')')? } else { Vec::new() };
                Ok(Expr::Call { name, args })
            }
            Some(c) => Err(err(format!("unexpected `{c}` at offset {}", self.pos))),
            None => Err(err("unexpected end of expression")),
        }
    }

    /// Comma-separated expressions up to `close`, which is consumed.
    fn items(&mut self, close: char) -> Result<Vec<Expr>> {
        let mut out = Vec::new();
        if self.eat(close) {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.eat(close) {
                return Ok(out);
            }
            if !self.eat(',') {
                return Err(err(format!("expected `,` or `{close}` at offset {}", self.pos)));
            }
        }
    }
}

pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser { src, pos: 0 };
    let e = p.expr()?;
    if p.peek().is_some() {
        return Err(err(format!("trailing input in `{src}`")));
    }
    Ok(e)
}

impl Expr {
    pub fn as_f64(&self) -> Result<f64> {
        match self {
            Expr::Number(x) => Ok(*x),
            other => Err(err(format!("expected a number, got {other:?}"))),
        }
    }

    pub fn as_u64(&self) -> Result<u64> {
        let x = self.as_f64()?;
        if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
            Ok(x as u64)
        } else {
            Err(err(format!("expected a non-negative integer, got {x}")))
        }
    }

    pub fn as_usize(&self) -> Result<usize> {
        Ok(self.as_u64()? as usize)
    }

    pub fn as_i64(&self) -> Result<i64> {
        let x = self.as_f64()?;
        if x.fract() == 0.0 && x.abs() < 9.0e15 {
            Ok(x as i64)
        } else {
            Err(err(format!("expected an integer, got {x}")))
        }
    }

    pub fn as_list(&self) -> Result<&[Expr]> {
        match self {
            Expr::List(items) => Ok(items),
            other => Err(err(format!("expected a list, got {other:?}"))),
        }
    }

    fn call(&self) -> Result<(&str, &[Expr])> {
        match self {
            Expr::Call { name, args } => Ok((name, args)),
            other => Err(err(format!("expected a name, got {other:?}"))),
        }
    }
}

fn arity(name: &str, args: &[Expr], n: usize) -> Result<()> {
    if args.len() == n {
        Ok(())
    } else {
        Err(err(format!("`{name}` takes {n} argument(s), got {}", args.len())))
    }
}

pub fn parse_space(src: &str) -> Result<ProductSpace> {
    let e = parse(src)?;
    let (name, args) = e.call()?;
    match name {
        "uniform_bits" => {
            arity(name, args, 1)?;
            Ok(ProductSpace::uniform_bits(args[0].as_usize()?))
        }
        "uniform_ints" => {
            arity(name, args, 2)?;
            ProductSpace::uniform_ints(args[0].as_usize()?, args[1].as_u64()?)
        }
        "explicit" => {
            if args.is_empty() {
                return Err(err("`explicit` needs at least one block"));
            }
            let blocks = args
                .iter()
                .map(|block| {
                    let pairs = block
                        .as_list()?
                        .iter()
                        .map(|pair| match pair.as_list()? {
                            [v, w] => Ok((v.as_u64()? as Value, w.as_f64()?)),
                            _ => Err(err("explicit blocks are lists of [value, weight] pairs")),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Support::explicit(pairs)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProductSpace::new(blocks))
        }
        other => Err(err(format!("unknown space `{other}`"))),
    }
}

fn builtin(name: &str, args: &[Expr]) -> Result<Option<Builtin>> {
    let b = match name {
        "and" | "or" | "xor" | "dictator" => {
            arity(name, args, 1)?;
            let k = args[0].as_usize()?;
            match name {
                "and" => Builtin::And(k),
                "or" => Builtin::Or(k),
                "xor" => Builtin::Xor(k),
                _ => Builtin::Dictator(k),
            }
        }
        "majority" => {
            arity(name, args, 0)?;
            Builtin::Majority
        }
        "threshold" => {
            arity(name, args, 2)?;
            let weights = args[0].as_list()?.iter().map(Expr::as_f64).collect::<Result<_>>()?;
            Builtin::Threshold { weights, t: args[1].as_f64()? }
        }
        _ => return Ok(None),
    };
    Ok(Some(b))
}

fn command(command: Option<&[String]>, what: &str) -> Result<Vec<String>> {
    match command {
        Some(c) if !c.is_empty() => Ok(c.to_vec()),
        _ => Err(err(format!("`external` {what} needs a command"))),
    }
}

/// Whether the expression names an external process.
pub fn is_external(src: &str) -> bool {
    matches!(parse(src), Ok(Expr::Call { name, .. }) if name == "external")
}

/// Builds an objective; `external` spawns `cmd`.
pub fn parse_objective(src: &str, cmd: Option<&[String]>) -> Result<Objective> {
    let e = parse(src)?;
    let (name, args) = e.call()?;
    if let Some(b) = builtin(name, args)? {
        return Ok(Objective::new(b));
    }
    match name {
        "const" => {
            arity(name, args, 1)?;
            Ok(Objective::new(Builtin::Const(args[0].as_u64()? != 0)))
        }
        "external" => Ok(Objective::new(ExternalFn::spawn(&command(cmd, "objective")?)?)),
        other => Err(err(format!("unknown objective `{other}`"))),
    }
}

/// Builds a classifier: a Boolean builtin, `const(label)`, `flip(inner)` or
/// `external`.
pub fn parse_classifier(src: &str, cmd: Option<&[String]>) -> Result<Arc<dyn Classifier>> {
    classifier(&parse(src)?, cmd)
}

fn classifier(e: &Expr, cmd: Option<&[String]>) -> Result<Arc<dyn Classifier>> {
    let (name, args) = e.call()?;
    if let Some(b) = builtin(name, args)? {
        return Ok(Arc::new(BoolClassifier(b)));
    }
    match name {
        "const" => {
            arity(name, args, 1)?;
            Ok(Arc::new(ConstLabel(args[0].as_i64()? as Label)))
        }
        "flip" => {
            arity(name, args, 1)?;
            Ok(Arc::new(Flipped(classifier(&args[0], cmd)?)))
        }
        "external" => Ok(Arc::new(ExternalClassifier::spawn(&command(cmd, "classifier")?)?)),
        other => Err(err(format!("unknown classifier `{other}`"))),
    }
}

/// Builds a learner: `majority_label`, `threshold_1d(coord)`,
/// `nearest_centroid` or `external`.
pub fn parse_learner(src: &str, cmd: Option<&[String]>) -> Result<Arc<dyn Learner>> {
    let e = parse(src)?;
    let (name, args) = e.call()?;
    if name == "external" {
        return Ok(Arc::new(ExternalLearner::spawn(&command(cmd, "learner")?)?));
    }
    let coord = match args {
        [] => 0,
        [c] => c.as_usize()?,
        _ => return Err(err(format!("`{name}` takes at most one argument"))),
    };
    make_toy_learner(name, coord)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_calls_and_lists() {
        let e = parse(" explicit([[0, 0.25], [1, 0.75]], [[5,1]]) ").unwrap();
        let Expr::Call { name, args } = e else { panic!() };
        assert_eq!(name, "explicit");
        assert_eq!(args.len(), 2);
        assert_eq!(parse("majority").unwrap(), Expr::Call { name: "majority".into(), args: vec![] });
        assert_eq!(parse("-1.5e-3").unwrap(), Expr::Number(-1.5e-3));
        for bad in ["and(", "and(1,)", "x y", "[1, 2", "and(1) )", ""] {
            assert!(parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn spaces() {
        assert_eq!(parse_space("uniform_bits(5)").unwrap().n(), 5);
        assert_eq!(parse_space("uniform_ints(3, 4)").unwrap().support_size(), Some(64));
        let s = parse_space("explicit([[0, 0.25], [1, 0.75]], [[0, 0.25], [1, 0.75]])").unwrap();
        let p: f64 = s.enumerate_support(16).unwrap().filter(|(x, _)| x == &[1, 1]).map(|(_, p)| p).sum();
        assert!((p - 0.5625).abs() < 1e-12);
        assert!(parse_space("explicit([[0, 0.5]])").is_err());
        assert!(parse_space("gaussian(3)").is_err());
        assert!(parse_space("uniform_bits(2, 3)").is_err());
    }

    #[test]
    fn objectives_and_classifiers() {
        let f = parse_objective("threshold([1, 2, 3], 3)", None).unwrap();
        assert!(f.eval(&[0, 0, 1]) && f.eval(&[1, 1, 0]) && !f.eval(&[1, 0, 0]));
        assert!(parse_objective("const(1)", None).unwrap().eval(&[]));
        assert!(parse_objective("external", None).is_err());
        assert!(parse_objective("tribes(3)", None).is_err());

        let c = parse_classifier("flip(and(2))", None).unwrap();
        assert_eq!(c.classify(&[1, 1]), 0);
        assert_eq!(parse_classifier("const(7)", None).unwrap().classify(&[0]), 7);
    }

    #[test]
    fn learners() {
        assert_eq!(parse_learner("majority_label", None).unwrap().describe(), "majority_label");
        assert!(parse_learner("threshold_1d(2)", None).is_ok());
        assert!(parse_learner("nearest_centroid", None).is_ok());
        assert!(parse_learner("svm", None).is_err());
        assert!(is_external("external") && !is_external("majority"));
    }
}

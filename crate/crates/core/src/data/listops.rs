//! Bracketed prefix expressions over MIN, MAX, MED and SM (sum mod 10).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::example_rng;
use crate::error::{Error, Result};

pub const LISTOPS_OPS: [&str; 4] = ["MIN", "MAX", "MED", "SM"];

/// Shortest possible expression, `[SM d d]`.
const MIN_EXPR_LEN: usize = 8;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListOpsExample {
    /// The expression text; tokens are its bytes.
    pub tokens: String,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ListOpsSpec {
    pub max_depth: usize,
    pub max_args: usize,
    pub max_len: usize,
    /// Probability that a non-root argument is a digit rather than a
    /// sub-expression (below `max_depth`).
    pub leaf_prob: f64,
}

impl Default for ListOpsSpec {
    fn default() -> Self {
        Self {
            max_depth: 2,
            max_args: 5,
            max_len: 512,
            leaf_prob: 0.6,
        }
    }
}

fn apply(op: usize, args: &mut [u8]) -> u8 {
    match op {
        0 => *args.iter().min().expect("non-empty"),
        1 => *args.iter().max().expect("non-empty"),
        2 => {
            args.sort_unstable();
            args[(args.len() - 1) / 2]
        }
        _ => (args.iter().map(|&a| a as u32).sum::<u32>() % 10) as u8,
    }
}

fn gen_expr<R: Rng>(spec: &ListOpsSpec, depth: usize, rng: &mut R, out: &mut String) -> u8 {
    if depth > 0 && (depth >= spec.max_depth || rng.random_bool(spec.leaf_prob)) {
        let d = rng.random_range(0..10u8);
        out.push((b'0' + d) as char);
        return d;
    }
    let op = rng.random_range(0..LISTOPS_OPS.len());
    let n = rng.random_range(2..=spec.max_args);
    out.push('[');
    out.push_str(LISTOPS_OPS[op]);
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(' ');
        vals.push(gen_expr(spec, depth + 1, rng, out));
    }
    out.push(']');
    apply(op, &mut vals)
}

/// `n` expressions with answers. Each root is an operator; nesting stops at
/// `max_depth` operator levels and every expression fits in `max_len` bytes.
pub fn gen_listops(seed: u64, n: usize, spec: &ListOpsSpec) -> Result<Vec<ListOpsExample>> {
    if spec.max_args < 2 || spec.max_depth < 1 {
        return Err(Error::InvalidArgument(
            "need max_args >= 2 and max_depth >= 1".into(),
        ));
    }
    if spec.max_len < MIN_EXPR_LEN {
        return Err(Error::Infeasible(format!(
            "max_len {} is below the shortest expression length {MIN_EXPR_LEN}",
            spec.max_len
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = example_rng(seed, i as u64);
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let mut s = String::new();
            let v = gen_expr(spec, 0, &mut rng, &mut s);
            if s.len() <= spec.max_len {
                found = Some(ListOpsExample {
                    tokens: s,
                    label: v,
                });
                break;
            }
        }
        match found {
            Some(e) => out.push(e),
            None => {
                let (a, b) = (rng.random_range(0..10u8), rng.random_range(0..10u8));
                out.push(ListOpsExample {
                    tokens: format!("[SM {a} {b}]"),
                    label: (a + b) % 10,
                });
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<u8> {
        self.skip_ws();
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(c) if c.is_ascii_digit() => {
                self.pos += 1;
                if matches!(self.peek(), Some(n) if !n.is_ascii_whitespace() && n != b']') {
                    return self.err("expected a separator after digit");
                }
                Ok(c - b'0')
            }
            Some(b'[') => {
                self.pos += 1;
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_uppercase()) {
                    self.pos += 1;
                }
                let name = &self.s[start..self.pos];
                let Some(op) = LISTOPS_OPS.iter().position(|o| o.as_bytes() == name) else {
                    self.pos = start;
                    return self.err("unknown operator");
                };
                let mut args = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => return self.err("unexpected end of input, expected ']'"),
                        Some(b']') => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => args.push(self.expr()?),
                    }
                }
                if args.is_empty() {
                    return self.err("operator without arguments");
                }
                Ok(apply(op, &mut args))
            }
            Some(_) => self.err("expected digit or '['"),
        }
    }
}

/// Evaluates one expression. Even-arity MED returns the lower median.
pub fn eval_listops(expr: &str) -> Result<u8> {
    let mut p = Parser {
        s: expr.as_bytes(),
        pos: 0,
    };
    let v = p.expr()?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return p.err("trailing input");
    }
    Ok(v)
}

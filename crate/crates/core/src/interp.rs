//! Fuel-bounded reference interpreter.
//!
//! Every assignment, `skip`, `use` and condition evaluation costs one step.
//! Arithmetic wraps on 64 bits, a condition holds when it is nonzero, and
//! unbound variables read as 0.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::lang::{self, BinOp, Command, Expr, UnaryOp, VarSet};

/// Total map from variables to integers; absent entries read as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Store(BTreeMap<String, i64>);

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    pub fn get(&self, v: &str) -> i64 {
        self.0.get(v).copied().unwrap_or(0)
    }

    pub fn set(&mut self, v: &str, value: i64) {
        match self.0.get_mut(v) {
            Some(slot) => *slot = value,
            None => {
                self.0.insert(v.to_string(), value);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// True if both stores agree on every variable of `vars`.
    pub fn agrees_on(&self, other: &Store, vars: &VarSet) -> bool {
        vars.iter().all(|v| self.get(v) == other.get(v))
    }
}

impl<S: Into<String>> FromIterator<(S, i64)> for Store {
    fn from_iter<I: IntoIterator<Item = (S, i64)>>(iter: I) -> Self {
        Store(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl fmt::Display for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeErrorKind {
    DivByZero,
    ModByZero,
}

impl fmt::Display for RuntimeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuntimeErrorKind::DivByZero => "div_by_zero",
            RuntimeErrorKind::ModByZero => "mod_by_zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Finished,
    FuelExhausted,
    RuntimeError(RuntimeErrorKind),
}

/// One value observed by a `use`. The site is the argument list, which is
/// stable under duplication of the statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Observation {
    pub site: String,
    pub values: Vec<i64>,
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals: Vec<String> = self.values.iter().map(i64::to_string).collect();
        write!(f, "use@{}: {}", self.site, vals.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Outcome {
    pub status: Status,
    /// Store at the point execution stopped; only meaningful when finished.
    pub final_store: Store,
    pub trace: Vec<Observation>,
    pub steps: u64,
}

enum Stop {
    Fuel,
    Error(RuntimeErrorKind),
}

struct Machine {
    store: Store,
    trace: Vec<Observation>,
    steps: u64,
    fuel: u64,
}

impl Machine {
    fn tick(&mut self) -> Result<(), Stop> {
        if self.steps >= self.fuel {
            return Err(Stop::Fuel);
        }
        self.steps += 1;
        Ok(())
    }

    fn eval(&self, e: &Expr) -> Result<i64, Stop> {
        Ok(match e {
            Expr::Int(n) => *n,
            Expr::Var(v) => self.store.get(v),
            Expr::Unary(UnaryOp::Neg, x) => self.eval(x)?.wrapping_neg(),
            Expr::Binary(op, l, r) => {
                let (a, b) = (self.eval(l)?, self.eval(r)?);
                match op {
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                    BinOp::Div if b == 0 => return Err(Stop::Error(RuntimeErrorKind::DivByZero)),
                    BinOp::Div => a.wrapping_div(b),
                    BinOp::Mod if b == 0 => return Err(Stop::Error(RuntimeErrorKind::ModByZero)),
                    BinOp::Mod => a.wrapping_rem(b),
                    BinOp::Lt => (a < b) as i64,
                    BinOp::Le => (a <= b) as i64,
                    BinOp::Gt => (a > b) as i64,
                    BinOp::Ge => (a >= b) as i64,
                    BinOp::Eq => (a == b) as i64,
                    BinOp::Ne => (a != b) as i64,
                }
            }
        })
    }

    fn test(&mut self, cond: &Expr) -> Result<bool, Stop> {
        self.tick()?;
        Ok(self.eval(cond)? != 0)
    }

    fn exec(&mut self, c: &Command) -> Result<(), Stop> {
        match c {
            Command::Assign { target, value } => {
                self.tick()?;
                let v = self.eval(value)?;
                self.store.set(target, v);
            }
            Command::Skip => self.tick()?,
            Command::Use(args) => {
                self.tick()?;
                let values = args.iter().map(|a| self.store.get(a)).collect();
                self.trace.push(Observation {
                    site: args.join(","),
                    values,
                });
            }
            Command::Seq(items) => {
                for item in items {
                    self.exec(item)?;
                }
            }
            Command::While { cond, body } => {
                while self.test(cond)? {
                    self.exec(body)?;
                }
            }
            Command::If {
                cond,
                then_branch,
                else_branch,
            } => {
                if self.test(cond)? {
                    self.exec(then_branch)?;
                } else if let Some(e) = else_branch {
                    self.exec(e)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs `prog` from `init` with at most `fuel` steps.
pub fn run(prog: &Command, init: &Store, fuel: u64) -> Outcome {
    let mut m = Machine {
        store: init.clone(),
        trace: Vec::new(),
        steps: 0,
        fuel,
    };
    let status = match m.exec(prog) {
        Ok(()) => Status::Finished,
        Err(Stop::Fuel) => Status::FuelExhausted,
        Err(Stop::Error(kind)) => Status::RuntimeError(kind),
    };
    Outcome {
        status,
        final_store: m.store,
        trace: m.trace,
        steps: m.steps,
    }
}

/// First store on which two programs were observed to behave differently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub store_index: usize,
    pub store: Store,
    pub reason: String,
    pub left: Outcome,
    pub right: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Equivalent,
    Differ(Box<Counterexample>),
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::Equivalent)
    }
}

/// Compares two outcomes; `None` means they agree.
///
/// Runs that both ran out of fuel agree when one trace is a prefix of the
/// other: neither terminates, and the observations made so far are
/// consistent.
pub fn compare_outcomes(a: &Outcome, b: &Outcome, vars: &VarSet) -> Option<String> {
    if a.status != b.status {
        return Some(format!("status {:?} vs {:?}", a.status, b.status));
    }
    let common = a.trace.len().min(b.trace.len());
    if let Some(i) = (0..common).find(|&i| a.trace[i] != b.trace[i]) {
        return Some(format!(
            "observation {} differs: {} vs {}",
            i + 1,
            a.trace[i],
            b.trace[i]
        ));
    }
    match a.status {
        Status::FuelExhausted => None,
        _ if a.trace.len() != b.trace.len() => Some(format!(
            "trace lengths differ: {} vs {}",
            a.trace.len(),
            b.trace.len()
        )),
        Status::Finished => vars
            .iter()
            .find(|v| a.final_store.get(v) != b.final_store.get(v))
            .map(|v| {
                format!(
                    "final value of `{v}` differs: {} vs {}",
                    a.final_store.get(v),
                    b.final_store.get(v)
                )
            }),
        Status::RuntimeError(_) => None,
    }
}

/// Runs both programs on every store and reports the first disagreement on
/// status, trace, or (when both finish) the final values of their variables.
pub fn equivalent(p1: &Command, p2: &Command, stores: &[Store], fuel: u64) -> Verdict {
    let mut vars = lang::in_vars(p1);
    vars.extend(lang::out_vars(p1));
    vars.extend(lang::in_vars(p2));
    vars.extend(lang::out_vars(p2));
    for (i, s) in stores.iter().enumerate() {
        let left = run(p1, s, fuel);
        let right = run(p2, s, fuel);
        if let Some(reason) = compare_outcomes(&left, &right, &vars) {
            return Verdict::Differ(Box::new(Counterexample {
                store_index: i,
                store: s.clone(),
                reason,
                left,
                right,
            }));
        }
    }
    Verdict::Equivalent
}

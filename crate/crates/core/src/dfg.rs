//! Data flow graphs of commands, built by induction on the syntax.
//!
//! A [`Relation`] pairs a [`DepMatrix`] over a fixed [`VarEnv`] with the
//! explicit sets of variables read and written. Base commands produce their
//! matrix directly; sequences multiply, conditionals and loops add a
//! correction for the variables of the condition.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{self, Command, Expr, VarSet};
use crate::semiring::{self, DepMatrix, DepValue, SemiringError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DfgError {
    #[error("variable `{0}` is not in the environment")]
    UnknownVariable(String),
    #[error("relations are built over different variable environments")]
    EnvMismatch,
    #[error(transparent)]
    Semiring(#[from] SemiringError),
}

/// Dense, ordered variable numbering shared by every matrix of an analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarEnv {
    vars: Vec<String>,
    index: HashMap<String, usize>,
}

impl VarEnv {
    /// Builds an environment; duplicate names keep their first position.
    pub fn new<I, S>(vars: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut env = VarEnv {
            vars: Vec::new(),
            index: HashMap::new(),
        };
        for v in vars {
            let v = v.into();
            if !env.index.contains_key(&v) {
                env.index.insert(v.clone(), env.vars.len());
                env.vars.push(v);
            }
        }
        env
    }

    /// Environment of all variables of `c`, in first-occurrence order.
    pub fn of_command(c: &Command) -> Self {
        VarEnv::new(lang::vars_in_order(c))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn index_of(&self, v: &str) -> Result<usize, DfgError> {
        self.index
            .get(v)
            .copied()
            .ok_or_else(|| DfgError::UnknownVariable(v.to_string()))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.vars[i]
    }

    fn check_all<'a>(&self, vars: impl IntoIterator<Item = &'a String>) -> Result<(), DfgError> {
        vars.into_iter()
            .try_for_each(|v| self.index_of(v).map(|_| ()))
    }
}

/// DFG of a command together with its read and write sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub env: VarEnv,
    pub matrix: DepMatrix,
    pub in_set: VarSet,
    pub out_set: VarSet,
}

impl Relation {
    pub fn identity(env: &VarEnv) -> Relation {
        Relation {
            env: env.clone(),
            matrix: semiring::mat_identity(env.len()),
            in_set: VarSet::new(),
            out_set: VarSet::new(),
        }
    }

    pub fn cell(&self, input: &str, output: &str) -> Result<DepValue, DfgError> {
        Ok(self
            .matrix
            .get(self.env.index_of(input)?, self.env.index_of(output)?))
    }

    /// Variables whose row holds at least one direct dependence.
    pub fn dep_rows(&self) -> VarSet {
        (0..self.env.len())
            .filter(|&i| self.matrix.row(i).contains(&DepValue::Dep))
            .map(|i| self.env.name(i).to_string())
            .collect()
    }

    /// Variables whose column holds at least one direct dependence.
    pub fn dep_columns(&self) -> VarSet {
        let n = self.env.len();
        (0..n)
            .filter(|&j| (0..n).any(|i| self.matrix.get(i, j) == DepValue::Dep))
            .map(|j| self.env.name(j).to_string())
            .collect()
    }

    /// Columns with neither dependence nor propagation: variables that
    /// always leave the command holding a constant.
    pub fn reinitialized(&self) -> VarSet {
        let n = self.env.len();
        (0..n)
            .filter(|&j| (0..n).all(|i| self.matrix.get(i, j) == DepValue::Bot))
            .map(|j| self.env.name(j).to_string())
            .collect()
    }

    pub fn to_json(&self) -> RelationJson {
        RelationJson {
            vars: self.env.vars().to_vec(),
            matrix: self.matrix.to_symbol_rows(),
        }
    }
}

/// Serialized form: `{"vars": [...], "matrix": [["1","_","0",...], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationJson {
    pub vars: Vec<String>,
    pub matrix: Vec<Vec<String>>,
}

fn same_env(a: &Relation, b: &Relation) -> Result<(), DfgError> {
    if a.env != b.env {
        return Err(DfgError::EnvMismatch);
    }
    Ok(())
}

/// `target = value`.
///
/// Each variable of `value` gets a dependence into `target`; all other
/// variables propagate. The old value of `target` is destroyed unless it is
/// read, and a bare self-copy `y = y` is a propagation, not a dependence.
pub fn dfg_assign(target: &str, value: &Expr, env: &VarEnv) -> Result<Relation, DfgError> {
    let t = env.index_of(target)?;
    let reads = lang::vars_of_expr(value);
    env.check_all(&reads)?;
    let mut matrix = semiring::mat_identity(env.len());
    matrix.set(t, t, DepValue::Bot);
    if matches!(value, Expr::Var(v) if v == target) {
        matrix.set(t, t, DepValue::Prop);
    } else {
        for v in &reads {
            matrix.set(env.index_of(v)?, t, DepValue::Dep);
        }
    }
    Ok(Relation {
        env: env.clone(),
        matrix,
        in_set: reads,
        out_set: VarSet::from([target.to_string()]),
    })
}

pub fn dfg_skip(env: &VarEnv) -> Relation {
    Relation::identity(env)
}

/// `use(args)`: identity matrix, reads exactly its arguments.
pub fn dfg_use(args: &[String], env: &VarEnv) -> Result<Relation, DfgError> {
    env.check_all(args)?;
    Ok(Relation {
        in_set: args.iter().cloned().collect(),
        ..Relation::identity(env)
    })
}

/// Sequential composition: left-to-right matrix product, unions of the sets.
pub fn dfg_seq(env: &VarEnv, parts: &[Relation]) -> Result<Relation, DfgError> {
    let mut acc = Relation::identity(env);
    for p in parts {
        same_env(&acc, p)?;
        acc.matrix = semiring::mat_mul(&acc.matrix, &p.matrix)?;
        acc.in_set.extend(p.in_set.iter().cloned());
        acc.out_set.extend(p.out_set.iter().cloned());
    }
    Ok(acc)
}

/// Adds a dependence from every condition variable to every output of `r`.
pub fn condition_correction(r: &Relation, cond_vars: &VarSet) -> Result<Relation, DfgError> {
    r.env.check_all(cond_vars)?;
    let mut out = r.clone();
    for e in cond_vars {
        let i = r.env.index_of(e)?;
        for o in &r.out_set {
            out.matrix.set(i, r.env.index_of(o)?, DepValue::Dep);
        }
    }
    out.in_set.extend(cond_vars.iter().cloned());
    Ok(out)
}

/// `if (E) then [else]`.
///
/// Without an else branch the skipped path contributes the identity. With
/// one, exactly one of the two corrected branches runs, so they are summed
/// with no identity term.
pub fn dfg_if(
    then_r: &Relation,
    else_r: Option<&Relation>,
    cond_vars: &VarSet,
) -> Result<Relation, DfgError> {
    let then_c = condition_correction(then_r, cond_vars)?;
    let other = match else_r {
        Some(e) => {
            same_env(then_r, e)?;
            condition_correction(e, cond_vars)?
        }
        None => Relation {
            in_set: cond_vars.clone(),
            ..Relation::identity(&then_r.env)
        },
    };
    Ok(Relation {
        env: then_r.env.clone(),
        matrix: semiring::mat_add(&then_c.matrix, &other.matrix)?,
        in_set: then_c.in_set.union(&other.in_set).cloned().collect(),
        out_set: then_c.out_set.union(&other.out_set).cloned().collect(),
    })
}

/// DFG of a loop plus the data needed to audit the star's stabilisation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhileDfg {
    pub relation: Relation,
    /// Iteration at which the partial sums of body powers stopped changing.
    pub fixpoint_index: usize,
    /// `max(1, min(|In(body)|, |Out(body)|))`.
    pub bound: usize,
}

impl WhileDfg {
    pub fn within_bound(&self) -> bool {
        self.fixpoint_index <= self.bound
    }
}

/// `while (E) body`: the corrected star of the body.
pub fn dfg_while(body_r: &Relation, cond_vars: &VarSet) -> Result<WhileDfg, DfgError> {
    let star = semiring::mat_star(&body_r.matrix)?;
    let iterated = Relation {
        matrix: star.matrix,
        ..body_r.clone()
    };
    let bound = body_r.in_set.len().min(body_r.out_set.len()).max(1);
    Ok(WhileDfg {
        relation: condition_correction(&iterated, cond_vars)?,
        fixpoint_index: star.fixpoint_index,
        bound,
    })
}

/// DFG of `c` over the environment of its own variables.
pub fn dfg_of_command(c: &Command) -> Result<Relation, DfgError> {
    dfg_of_command_in(c, &VarEnv::of_command(c))
}

/// DFG of `c` over a caller-chosen environment (which must cover `c`).
pub fn dfg_of_command_in(c: &Command, env: &VarEnv) -> Result<Relation, DfgError> {
    match c {
        Command::Assign { target, value } => dfg_assign(target, value, env),
        Command::Skip => Ok(dfg_skip(env)),
        Command::Use(args) => dfg_use(args, env),
        Command::Seq(items) => {
            let parts = items
                .iter()
                .map(|i| dfg_of_command_in(i, env))
                .collect::<Result<Vec<_>, _>>()?;
            dfg_seq(env, &parts)
        }
        Command::If {
            cond,
            then_branch,
            else_branch,
        } => {
            let then_r = dfg_of_command_in(then_branch, env)?;
            let else_r = else_branch
                .as_ref()
                .map(|e| dfg_of_command_in(e, env))
                .transpose()?;
            dfg_if(&then_r, else_r.as_ref(), &lang::vars_of_expr(cond))
        }
        Command::While { cond, body } => while_dfg_in(cond, body, env).map(|w| w.relation),
    }
}

/// [`WhileDfg`] of `while (cond) body` over `env`.
pub fn while_dfg_in(cond: &Expr, body: &Command, env: &VarEnv) -> Result<WhileDfg, DfgError> {
    let body_r = dfg_of_command_in(body, env)?;
    dfg_while(&body_r, &lang::vars_of_expr(cond))
}

/// Bipartite DOT rendering: inputs on the left, outputs on the right,
/// solid edges for dependences and dashed ones for propagation.
pub fn to_dot(r: &Relation) -> String {
    let mut out = String::new();
    out.push_str("digraph dfg {\n    rankdir=LR;\n    node [shape=circle];\n");
    out.push_str("    subgraph cluster_in {\n        label=\"in\";\n        style=invis;\n");
    for (i, v) in r.env.vars().iter().enumerate() {
        let _ = writeln!(out, "        in{i} [label=\"{v}\"];");
    }
    out.push_str(
        "    }\n    subgraph cluster_out {\n        label=\"out\";\n        style=invis;\n",
    );
    for (i, v) in r.env.vars().iter().enumerate() {
        let _ = writeln!(out, "        out{i} [label=\"{v}\"];");
    }
    out.push_str("    }\n");
    let n = r.env.len();
    for i in 0..n {
        for j in 0..n {
            match r.matrix.get(i, j) {
                DepValue::Bot => {}
                DepValue::Prop => {
                    let _ = writeln!(out, "    in{i} -> out{j} [style=dashed];");
                }
                DepValue::Dep => {
                    let _ = writeln!(out, "    in{i} -> out{j};");
                }
            }
        }
    }
    out.push_str("}\n");
    out
}

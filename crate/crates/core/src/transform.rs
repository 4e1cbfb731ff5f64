//! Loop peeling driven by invariance degrees, and the guarded rewrites
//! licensed by the independence lemmas.
//!
//! Peeling a loop `P` times produces nested guards
//!
//! ```text
//! if (E) { copy1; if (E) { copy2; ... while (E) { residual } } }
//! ```
//!
//! where copy `k` keeps the chunks whose degree is at least `k` and the
//! residual loop keeps the chunks that never stabilise.

use thiserror::Error;

use crate::analysis::{self, Degree, LoopAnalysis, LoopId};
use crate::dfg::DfgError;
use crate::lang::{self, Command, Expr};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error("peel plan does not match the loop: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Dfg(#[from] DfgError),
}

/// Which chunks go into each peeled copy and into the residual loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeelPlan {
    pub loop_id: LoopId,
    pub chunk_count: usize,
    pub peel_count: u32,
    /// `copies[k - 1]` lists, in source order, the chunk positions of copy `k`.
    pub copies: Vec<Vec<usize>>,
    pub residual: Vec<usize>,
}

impl PeelPlan {
    /// Plan for peeling according to `degrees` (one per chunk).
    pub fn from_degrees(loop_id: LoopId, degrees: &[Degree]) -> PeelPlan {
        let peel_count = degrees.iter().filter_map(|d| d.finite()).max().unwrap_or(0);
        let keep = |at_least: Degree| -> Vec<usize> {
            (0..degrees.len())
                .filter(|&p| degrees[p] >= at_least)
                .collect()
        };
        PeelPlan {
            loop_id,
            chunk_count: degrees.len(),
            peel_count,
            copies: (1..=peel_count).map(|k| keep(Degree::Finite(k))).collect(),
            residual: keep(Degree::Infinite),
        }
    }

    /// Plan using the effective degrees of an analysis.
    pub fn of(a: &LoopAnalysis) -> PeelPlan {
        PeelPlan::from_degrees(a.loop_id, &a.effective_degree)
    }

    /// Plan using raw degrees, i.e. the copy rule applied without the
    /// soundness closures. Not semantics preserving in general; kept to
    /// check that differential testing notices.
    pub fn literal(a: &LoopAnalysis) -> PeelPlan {
        PeelPlan::from_degrees(a.loop_id, &a.raw_degree)
    }
}

fn seq_of(items: &[Command], picks: &[usize]) -> Command {
    Command::Seq(picks.iter().map(|&p| items[p].clone()).collect())
}

fn body_items(c: &Command) -> Vec<Command> {
    c.items().to_vec()
}

/// Peels `lp` (a `while`) according to `plan`. With a zero peel count the
/// loop is returned unchanged.
pub fn peel(lp: &Command, plan: &PeelPlan) -> Result<Command, TransformError> {
    let Command::While { cond, body } = lp else {
        return Err(TransformError::PlanMismatch("not a while loop".into()));
    };
    let items = body_items(body);
    if items.len() != plan.chunk_count {
        return Err(TransformError::PlanMismatch(format!(
            "plan has {} chunks, loop body has {}",
            plan.chunk_count,
            items.len()
        )));
    }
    if plan.copies.len() != plan.peel_count as usize {
        return Err(TransformError::PlanMismatch(
            "copy count differs from peel count".into(),
        ));
    }
    let in_range = plan
        .copies
        .iter()
        .chain(std::iter::once(&plan.residual))
        .flatten()
        .all(|&p| p < items.len());
    if !in_range {
        return Err(TransformError::PlanMismatch(
            "chunk position out of range".into(),
        ));
    }
    if plan.peel_count == 0 {
        return Ok(lp.clone());
    }
    let residual = Command::While {
        cond: cond.clone(),
        body: Box::new(seq_of(&items, &plan.residual)),
    };
    Ok(wrap_copies(cond, &items, &plan.copies, residual))
}

fn wrap_copies(cond: &Expr, items: &[Command], copies: &[Vec<usize>], inner: Command) -> Command {
    copies.iter().rev().fold(inner, |acc, copy| {
        let mut then = seq_of(items, copy);
        if let Command::Seq(v) = &mut then {
            v.push(acc);
        }
        Command::If {
            cond: cond.clone(),
            then_branch: Box::new(then),
            else_branch: None,
        }
    })
}

/// How loops are rewritten by [`transform_program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Peel by effective degrees, repeatedly until nothing is left to peel.
    Optimize,
    /// Leave the program as is.
    Identity,
    /// Peel once by raw degrees. Unsound on write-after-write bodies.
    Literal,
}

/// Peels every loop of `prog`, innermost first, until no loop has anything
/// left to peel. Idempotent.
pub fn optimize(prog: &Command) -> Result<Command, TransformError> {
    transform_program(prog, Strategy::Optimize)
}

pub fn transform_program(prog: &Command, strategy: Strategy) -> Result<Command, TransformError> {
    match strategy {
        Strategy::Identity => Ok(prog.clone()),
        _ => rewrite(prog, strategy),
    }
}

fn rewrite(c: &Command, strategy: Strategy) -> Result<Command, TransformError> {
    Ok(match c {
        Command::Seq(items) => Command::Seq(
            items
                .iter()
                .map(|i| rewrite(i, strategy))
                .collect::<Result<_, _>>()?,
        ),
        Command::If {
            cond,
            then_branch,
            else_branch,
        } => Command::If {
            cond: cond.clone(),
            then_branch: Box::new(rewrite(then_branch, strategy)?),
            else_branch: match else_branch {
                Some(e) => Some(Box::new(rewrite(e, strategy)?)),
                None => None,
            },
        },
        Command::While { cond, body } => {
            let lp = Command::While {
                cond: cond.clone(),
                body: Box::new(rewrite(body, strategy)?),
            };
            peel_loop(&lp, strategy)?
        }
        Command::Assign { .. } | Command::Skip | Command::Use(_) => c.clone(),
    })
}

fn peel_loop(lp: &Command, strategy: Strategy) -> Result<Command, TransformError> {
    let Command::While { cond, body } = lp else {
        unreachable!("peel_loop is only called on loops");
    };
    let a = analysis::analyze_loop(0, cond, body)?;
    let plan = match strategy {
        Strategy::Literal => PeelPlan::literal(&a),
        _ => PeelPlan::of(&a),
    };
    if plan.peel_count == 0 {
        return Ok(lp.clone());
    }
    if strategy == Strategy::Literal {
        return peel(lp, &plan);
    }
    // The residual loop may have chunks that only stabilise once their
    // finite-degree neighbours are gone; peel it again until it is stable.
    let items = body_items(body);
    let residual = Command::While {
        cond: cond.clone(),
        body: Box::new(seq_of(&items, &plan.residual)),
    };
    let residual = peel_loop(&residual, strategy)?;
    Ok(wrap_copies(cond, &items, &plan.copies, residual))
}

fn self_independent(c: &Command) -> bool {
    lang::out_vars(c).is_disjoint(&lang::in_vars(c))
}

fn mutually_independent(a: &Command, b: &Command) -> bool {
    lang::out_vars(a).is_disjoint(&lang::in_vars(b))
        && lang::out_vars(b).is_disjoint(&lang::in_vars(a))
}

/// Commands whose position relative to other effects is observable: they
/// emit observations, may trap, or may fail to terminate.
fn effectful(c: &Command) -> bool {
    c.contains_use() || c.may_trap() || c.contains_while()
}

/// `while (E) { C }` becomes `if (E) { C; while (E) { skip; } }` when `C`
/// is self-independent and does not write the condition: after one run
/// of `C` further iterations change nothing.
pub fn specialize_while(lp: &Command) -> Option<Command> {
    let Command::While { cond, body } = lp else {
        return None;
    };
    if !self_independent(body) || !lang::vars_of_expr(cond).is_disjoint(&lang::out_vars(body)) {
        return None;
    }
    let mut then = body_items(body);
    then.push(Command::While {
        cond: cond.clone(),
        body: Box::new(Command::Seq(vec![Command::Skip])),
    });
    Some(Command::If {
        cond: cond.clone(),
        then_branch: Box::new(Command::Seq(then)),
        else_branch: None,
    })
}

/// `C1; C2` becomes `C2; C1` when the two are mutually independent, write
/// disjoint variables, and at most one of them has observable effects.
pub fn swap(c1: &Command, c2: &Command) -> Option<Command> {
    if !mutually_independent(c1, c2)
        || !lang::out_vars(c1).is_disjoint(&lang::out_vars(c2))
        || (effectful(c1) && effectful(c2))
    {
        return None;
    }
    Some(Command::Seq(vec![c2.clone(), c1.clone()]))
}

/// `while (E) { C1; rest }` becomes `if (E) { C1; while (E) { rest } }`
/// when `C1` is self-independent, independent of `rest` both ways, writes
/// neither the condition nor anything `rest` writes, and makes no
/// observations.
pub fn hoist_head(lp: &Command) -> Option<Command> {
    let Command::While { cond, body } = lp else {
        return None;
    };
    let items = body_items(body);
    let (head, rest) = items.split_first()?;
    let rest = Command::Seq(rest.to_vec());
    let head_out = lang::out_vars(head);
    let ok = self_independent(head)
        && mutually_independent(head, &rest)
        && head_out.is_disjoint(&lang::out_vars(&rest))
        && head_out.is_disjoint(&lang::vars_of_expr(cond))
        && !head.contains_use();
    if !ok {
        return None;
    }
    Some(Command::If {
        cond: cond.clone(),
        then_branch: Box::new(Command::Seq(vec![
            head.clone(),
            Command::While {
                cond: cond.clone(),
                body: Box::new(rest),
            },
        ])),
        else_branch: None,
    })
}

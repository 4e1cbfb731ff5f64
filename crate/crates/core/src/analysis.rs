//! Invariance degrees of loop chunks.
//!
//! Each top-level statement of a loop body is a chunk; an inner `while` or
//! an `if` is a single chunk. For every chunk we find which chunks write the
//! variables it reads (and whether the value comes from the same iteration
//! or the previous one), then compute how many iterations it takes before
//! the chunk stops having any effect:
//!
//! * a chunk fed only by values from outside the loop has degree 1,
//! * a same-iteration dependence on a degree-`d` chunk gives at least `d`,
//! * a dependence on the previous iteration's value of a degree-`d` chunk
//!   gives at least `d + 1`,
//! * chunks on a dependence cycle, chunks that observe values through
//!   `use`, and everything downstream of them never stabilise.
//!
//! The raw degrees are then closed under two soundness rules, giving the
//! effective degrees used for peeling (see [`effective_degrees`]).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::dfg::{self, DfgError, Relation, VarEnv, WhileDfg};
use crate::lang::{self, Command, Span, VarSet};

/// Pre-order index of a `while` statement in the analyzed program.
pub type LoopId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ChunkId {
    pub loop_id: LoopId,
    pub position: usize,
}

/// Invariance degree: a positive number of iterations, or never.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degree {
    Finite(u32),
    Infinite,
}

impl Degree {
    pub const ONE: Degree = Degree::Finite(1);

    pub fn succ(self) -> Degree {
        match self {
            Degree::Finite(d) => Degree::Finite(d + 1),
            Degree::Infinite => Degree::Infinite,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Degree::Finite(_))
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Degree::Finite(d) => Some(d),
            Degree::Infinite => None,
        }
    }

    /// Report encoding: the degree itself, or `-1` for infinity.
    pub fn to_report(self) -> i64 {
        match self {
            Degree::Finite(d) => d as i64,
            Degree::Infinite => -1,
        }
    }
}

impl Ord for Degree {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Degree::Finite(a), Degree::Finite(b)) => a.cmp(b),
            (Degree::Finite(_), Degree::Infinite) => Ordering::Less,
            (Degree::Infinite, Degree::Finite(_)) => Ordering::Greater,
            (Degree::Infinite, Degree::Infinite) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Degree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Degree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degree::Finite(d) => write!(f, "{d}"),
            Degree::Infinite => f.write_str("∞"),
        }
    }
}

impl Serialize for Degree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.to_report())
    }
}

/// One top-level statement of a loop body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub id: ChunkId,
    pub command: Command,
    pub relation: Relation,
}

impl Chunk {
    pub fn position(&self) -> usize {
        self.id.position
    }

    pub fn writes(&self, v: &str) -> bool {
        self.relation.out_set.contains(v)
    }

    /// An unconditional assignment to `v`, which kills earlier definitions.
    pub fn kills(&self, v: &str) -> bool {
        matches!(&self.command, Command::Assign { target, .. } if target == v)
    }

    pub fn observes(&self) -> bool {
        self.command.contains_use()
    }
}

/// Splits a loop body into chunks, with relations over `env`.
pub fn chunk_loop(loop_id: LoopId, body: &Command, env: &VarEnv) -> Result<Vec<Chunk>, DfgError> {
    body.items()
        .iter()
        .enumerate()
        .map(|(position, c)| {
            Ok(Chunk {
                id: ChunkId { loop_id, position },
                command: c.clone(),
                relation: dfg::dfg_of_command_in(c, env)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Writer {
    Chunk(usize),
    LoopEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    SameIteration,
    LoopCarried,
    MaybeBoth,
}

impl EdgeKind {
    pub fn carried(self) -> bool {
        !matches!(self, EdgeKind::SameIteration)
    }
}

/// Definitions of `v` that may reach the entry of chunk `reader`.
///
/// Scans backwards from the reader, wrapping around the loop back edge. An
/// unconditional assignment stops the scan; writes inside `if`/`while`
/// chunks do not. Reaching the top of the body means the value may come
/// from before the loop on the first iteration.
pub fn reaching_writers(chunks: &[Chunk], reader: usize, v: &str) -> Vec<(Writer, EdgeKind)> {
    let mut found: BTreeMap<usize, EdgeKind> = BTreeMap::new();
    let finish = |found: BTreeMap<usize, EdgeKind>, entry: bool| {
        let any_inside = !found.is_empty();
        let mut out: Vec<(Writer, EdgeKind)> = found
            .into_iter()
            .rev()
            .map(|(p, k)| (Writer::Chunk(p), k))
            .collect();
        if entry {
            let kind = if any_inside {
                EdgeKind::LoopCarried
            } else {
                EdgeKind::SameIteration
            };
            out.push((Writer::LoopEntry, kind));
        }
        out
    };

    for p in (0..reader).rev() {
        if chunks[p].writes(v) {
            found.insert(p, EdgeKind::SameIteration);
            if chunks[p].kills(v) {
                return finish(found, false);
            }
        }
    }
    // top of the body: first iteration reads the pre-loop value
    for p in (reader..chunks.len()).rev() {
        if chunks[p].writes(v) {
            found.insert(p, EdgeKind::LoopCarried);
            if chunks[p].kills(v) {
                return finish(found, true);
            }
        }
    }
    // no kill anywhere: earlier weak writers also reach from older iterations
    for p in 0..reader {
        if let Some(k) = found.get_mut(&p) {
            *k = EdgeKind::MaybeBoth;
        }
    }
    finish(found, true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DepEdge {
    pub reader: usize,
    pub writer: Writer,
    pub var: String,
    pub kind: EdgeKind,
}

/// Reader-to-writer dependences between the chunks of one loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepGraph {
    pub nodes: Vec<ChunkId>,
    pub edges: Vec<DepEdge>,
}

impl DepGraph {
    pub fn build(chunks: &[Chunk]) -> DepGraph {
        let mut edges = Vec::new();
        for (r, chunk) in chunks.iter().enumerate() {
            for v in &chunk.relation.in_set {
                for (writer, kind) in reaching_writers(chunks, r, v) {
                    edges.push(DepEdge {
                        reader: r,
                        writer,
                        var: v.clone(),
                        kind,
                    });
                }
            }
        }
        DepGraph {
            nodes: chunks.iter().map(|c| c.id).collect(),
            edges,
        }
    }

    pub fn edges_from(&self, reader: usize) -> impl Iterator<Item = &DepEdge> {
        self.edges.iter().filter(move |e| e.reader == reader)
    }

    /// Chunk-to-chunk adjacency (reader -> writers), deduplicated.
    fn successors(&self) -> Vec<BTreeSet<usize>> {
        let mut succ = vec![BTreeSet::new(); self.nodes.len()];
        for e in &self.edges {
            if let Writer::Chunk(w) = e.writer {
                succ[e.reader].insert(w);
            }
        }
        succ
    }

    /// Strongly connected components, each sorted, in reverse topological
    /// order (a component comes after every component it depends on).
    pub fn components(&self) -> Vec<Vec<usize>> {
        tarjan(&self.successors())
    }

    /// Chunks that lie on a dependence cycle (including self-loops).
    pub fn cyclic_nodes(&self) -> BTreeSet<usize> {
        let succ = self.successors();
        let mut out = BTreeSet::new();
        for comp in tarjan(&succ) {
            if comp.len() > 1 || succ[comp[0]].contains(&comp[0]) {
                out.extend(comp);
            }
        }
        out
    }
}

fn tarjan(succ: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        succ: &'a [BTreeSet<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }

    fn visit(s: &mut State<'_>, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for &w in s.succ[v].iter() {
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            s.out.push(comp);
        }
    }

    let n = succ.len();
    let mut s = State {
        succ,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.out
}

/// C2 is independent from C1 when nothing C1 writes is read by C2.
pub fn is_independent(c1: &Relation, c2: &Relation) -> bool {
    c1.out_set.is_disjoint(&c2.in_set)
}

pub fn mutually_independent(a: &Relation, b: &Relation) -> bool {
    is_independent(a, b) && is_independent(b, a)
}

pub fn self_independent(c: &Relation) -> bool {
    is_independent(c, c)
}

/// Raw invariance degree of every chunk.
///
/// Chunks containing `use`, and chunks on a dependence cycle, are infinite.
/// The others take the maximum over their dependences: the writer's degree
/// for a same-iteration dependence, one more for a loop-carried one, and 1
/// for a value from before the loop. A chunk with no dependence at all has
/// degree 1.
pub fn raw_degrees(chunks: &[Chunk], graph: &DepGraph) -> Vec<Degree> {
    let cyclic = graph.cyclic_nodes();
    let mut deg: Vec<Option<Degree>> = vec![None; chunks.len()];
    for (i, c) in chunks.iter().enumerate() {
        if c.observes() || cyclic.contains(&i) {
            deg[i] = Some(Degree::Infinite);
        }
    }
    // Components come out writers-first; what remains is acyclic.
    for comp in graph.components() {
        for &s in &comp {
            if deg[s].is_some() {
                continue;
            }
            let d = graph
                .edges_from(s)
                .map(|e| match e.writer {
                    Writer::LoopEntry => Degree::ONE,
                    Writer::Chunk(t) => {
                        let dt = deg[t].expect("writer degree computed before reader");
                        if e.kind.carried() {
                            dt.succ()
                        } else {
                            dt
                        }
                    }
                })
                .max()
                .unwrap_or(Degree::ONE)
                .max(Degree::ONE);
            deg[s] = Some(d);
        }
    }
    deg.into_iter().map(|d| d.unwrap_or(Degree::ONE)).collect()
}

/// Raises raw degrees until dropping chunks per degree is safe.
///
/// Iterated to a fixpoint:
///
/// * all writers of a variable share the largest degree among them, so a
///   variable is either still written by every writer or by none. This also
///   keeps every writer of a variable in the residual loop as soon as one of
///   them must stay, since the value left after the loop must be the last
///   writer's.
/// * when a chunk reads a variable between two of its writers, it sees an
///   intermediate value rather than the one carried across iterations; all
///   writers of that variable are raised to the reader's degree so they keep
///   running as long as the reader does.
pub fn effective_degrees(chunks: &[Chunk], raw: &[Degree]) -> Vec<Degree> {
    let mut eff = raw.to_vec();
    let mut writers: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in chunks.iter().enumerate() {
        for v in &c.relation.out_set {
            writers.entry(v.as_str()).or_default().push(i);
        }
    }
    loop {
        let mut changed = false;
        let mut raise = |eff: &mut Vec<Degree>, ws: &[usize], to: Degree| {
            for &w in ws {
                if eff[w] < to {
                    eff[w] = to;
                    changed = true;
                }
            }
        };
        for ws in writers.values() {
            let top = ws.iter().map(|&w| eff[w]).max().unwrap_or(Degree::ONE);
            raise(&mut eff, ws, top);
        }
        for (u, reader) in chunks.iter().enumerate() {
            for v in &reader.relation.in_set {
                let Some(ws) = writers.get(v.as_str()) else {
                    continue;
                };
                let before = ws.iter().any(|&w| w < u);
                let after = ws.iter().any(|&w| w > u);
                if before && after {
                    let to = eff[u];
                    raise(&mut eff, ws, to);
                }
            }
        }
        if !changed {
            return eff;
        }
    }
}

/// Classic invariant detection: a chunk is invariant when every variable it
/// reads is either defined only outside the loop, or has a single reaching
/// definition which is itself an invariant chunk. Repeated until stable.
pub fn basic_invariants(chunks: &[Chunk]) -> BTreeSet<usize> {
    let mut inv = BTreeSet::new();
    loop {
        let mut grew = false;
        for (s, chunk) in chunks.iter().enumerate() {
            if inv.contains(&s) || chunk.observes() {
                continue;
            }
            let ok = chunk.relation.in_set.iter().all(|v| {
                let reaching = reaching_writers(chunks, s, v);
                let inside: Vec<usize> = reaching
                    .iter()
                    .filter_map(|(w, _)| match w {
                        Writer::Chunk(p) => Some(*p),
                        Writer::LoopEntry => None,
                    })
                    .collect();
                inside.is_empty() || (reaching.len() == 1 && inv.contains(&inside[0]))
            });
            if ok {
                inv.insert(s);
                grew = true;
            }
        }
        if !grew {
            return inv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Lemma1Audit {
    pub fixpoint_index: usize,
    pub bound: usize,
}

impl Lemma1Audit {
    pub fn holds(&self) -> bool {
        self.fixpoint_index <= self.bound
    }
}

impl From<&WhileDfg> for Lemma1Audit {
    fn from(w: &WhileDfg) -> Self {
        Lemma1Audit {
            fixpoint_index: w.fixpoint_index,
            bound: w.bound,
        }
    }
}

/// Everything computed for one loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopAnalysis {
    pub loop_id: LoopId,
    pub span: Option<Span>,
    pub cond_vars: VarSet,
    pub chunks: Vec<Chunk>,
    pub dep_graph: DepGraph,
    pub raw_degree: Vec<Degree>,
    pub effective_degree: Vec<Degree>,
    pub basic_invariants: BTreeSet<usize>,
    pub peel_count: u32,
    pub lemma1: Lemma1Audit,
    /// DFG of the whole `while` statement.
    pub relation: Relation,
}

fn max_finite(degrees: &[Degree]) -> u32 {
    degrees.iter().filter_map(|d| d.finite()).max().unwrap_or(0)
}

/// Analyzes the loop `while (cond) body`.
pub fn analyze_loop(
    loop_id: LoopId,
    cond: &lang::Expr,
    body: &Command,
) -> Result<LoopAnalysis, DfgError> {
    let whole = Command::While {
        cond: cond.clone(),
        body: Box::new(body.clone()),
    };
    let env = VarEnv::of_command(&whole);
    let chunks = chunk_loop(loop_id, body, &env)?;
    let dep_graph = DepGraph::build(&chunks);
    let raw_degree = raw_degrees(&chunks, &dep_graph);
    let effective_degree = effective_degrees(&chunks, &raw_degree);
    let while_dfg = dfg::while_dfg_in(cond, body, &env)?;
    Ok(LoopAnalysis {
        loop_id,
        span: None,
        cond_vars: lang::vars_of_expr(cond),
        basic_invariants: basic_invariants(&chunks),
        peel_count: max_finite(&effective_degree),
        lemma1: Lemma1Audit::from(&while_dfg),
        relation: while_dfg.relation,
        chunks,
        dep_graph,
        raw_degree,
        effective_degree,
    })
}

/// Analyzes every loop of `prog`, innermost first. Loop ids are pre-order
/// indices, so they match the order of `spans` from
/// [`lang::parse_with_spans`].
pub fn analyze_program(prog: &Command) -> Result<Vec<LoopAnalysis>, DfgError> {
    analyze_program_with_spans(prog, &[])
}

pub fn analyze_program_with_spans(
    prog: &Command,
    spans: &[Span],
) -> Result<Vec<LoopAnalysis>, DfgError> {
    fn walk(
        c: &Command,
        next_id: &mut LoopId,
        spans: &[Span],
        out: &mut Vec<LoopAnalysis>,
    ) -> Result<(), DfgError> {
        match c {
            Command::Seq(items) => items.iter().try_for_each(|i| walk(i, next_id, spans, out)),
            Command::If {
                then_branch,
                else_branch,
                ..
            } => {
                walk(then_branch, next_id, spans, out)?;
                if let Some(e) = else_branch {
                    walk(e, next_id, spans, out)?;
                }
                Ok(())
            }
            Command::While { cond, body } => {
                let id = *next_id;
                *next_id += 1;
                walk(body, next_id, spans, out)?;
                let mut a = analyze_loop(id, cond, body)?;
                a.span = spans.get(id).copied();
                out.push(a);
                Ok(())
            }
            Command::Assign { .. } | Command::Skip | Command::Use(_) => Ok(()),
        }
    }
    let mut out = Vec::new();
    walk(prog, &mut 0, spans, &mut out)?;
    Ok(out)
}

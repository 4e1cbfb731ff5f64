use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use qinv::analysis::{self, Degree, EdgeKind, LoopAnalysis, Writer};
use qinv::dfg::{self, VarEnv};
use qinv::harness::{self, GenConfig};
use qinv::interp::{self, Store};
use qinv::lang::{self, parse, BinOp, Command, Expr};
use qinv::semiring::{mat_add, mat_identity, mat_mul, mat_star, DepMatrix, DepValue};
use qinv::transform;

fn matrix(n: usize) -> impl Strategy<Value = DepMatrix> {
    prop::collection::vec(prop::sample::select(DepValue::ALL.to_vec()), n * n).prop_map(
        move |cells| {
            DepMatrix::from_rows(cells.chunks(n.max(1)).take(n).map(|r| r.to_vec()).collect())
                .unwrap()
        },
    )
}

fn same_size_pair() -> impl Strategy<Value = (DepMatrix, DepMatrix, DepMatrix)> {
    (0usize..=6).prop_flat_map(|n| (matrix(n), matrix(n), matrix(n)))
}

/// Star by walking paths: the best value reachable from `i` at `j` along a
/// walk of one or more edges, tracking the product of the cells seen.
fn star_by_paths(a: &DepMatrix) -> DepMatrix {
    let n = a.dim();
    let mut out = DepMatrix::zero(n);
    for i in 0..n {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<(usize, DepValue)> = (0..n)
            .filter(|&j| a.get(i, j) != DepValue::Bot)
            .map(|j| (j, a.get(i, j)))
            .collect();
        while let Some((j, v)) = stack.pop() {
            if !seen.insert((j, v)) {
                continue;
            }
            if v > out.get(i, j) {
                out.set(i, j, v);
            }
            for k in 0..n {
                let step = a.get(j, k);
                if step != DepValue::Bot {
                    let w = if v == DepValue::Dep || step == DepValue::Dep {
                        DepValue::Dep
                    } else {
                        DepValue::Prop
                    };
                    stack.push((k, w));
                }
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn product_is_associative((a, b, c) in same_size_pair()) {
        let left = mat_mul(&mat_mul(&a, &b).unwrap(), &c).unwrap();
        let right = mat_mul(&a, &mat_mul(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn product_distributes_over_sum((a, b, c) in same_size_pair()) {
        let left = mat_mul(&a, &mat_add(&b, &c).unwrap()).unwrap();
        let right = mat_add(&mat_mul(&a, &b).unwrap(), &mat_mul(&a, &c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
        let left = mat_mul(&mat_add(&a, &b).unwrap(), &c).unwrap();
        let right = mat_add(&mat_mul(&a, &c).unwrap(), &mat_mul(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn identity_is_neutral((a, _, _) in same_size_pair()) {
        let id = mat_identity(a.dim());
        prop_assert_eq!(&mat_mul(&a, &id).unwrap(), &a);
        prop_assert_eq!(&mat_mul(&id, &a).unwrap(), &a);
        prop_assert_eq!(&mat_add(&a, &DepMatrix::zero(a.dim())).unwrap(), &a);
    }

    #[test]
    fn star_matches_path_closure((a, _, _) in same_size_pair()) {
        let star = mat_star(&a).unwrap();
        prop_assert_eq!(&star.matrix, &star_by_paths(&a));
        prop_assert!(star.fixpoint_index <= a.dim() * a.dim() + 1);
        prop_assert!(star.matrix.dominates(&a));
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Unchanged,
    From(BTreeSet<String>),
}

/// Dependences of a straight-line assignment list, by tracking which input
/// variables every variable's current value was computed from.
fn straight_line_oracle(assigns: &[(String, Expr)], env: &VarEnv) -> DepMatrix {
    let mut state: BTreeMap<String, Origin> = env
        .vars()
        .iter()
        .map(|v| (v.clone(), Origin::Unchanged))
        .collect();
    for (target, value) in assigns {
        if matches!(value, Expr::Var(v) if v == target) {
            continue;
        }
        let mut from = BTreeSet::new();
        for v in lang::vars_of_expr(value) {
            match &state[&v] {
                Origin::Unchanged => {
                    from.insert(v.clone());
                }
                Origin::From(s) => from.extend(s.iter().cloned()),
            }
        }
        state.insert(target.clone(), Origin::From(from));
    }
    let mut m = DepMatrix::zero(env.len());
    for (j, out) in env.vars().iter().enumerate() {
        match &state[out] {
            Origin::Unchanged => m.set(j, j, DepValue::Prop),
            Origin::From(s) => {
                for v in s {
                    m.set(env.index_of(v).unwrap(), j, DepValue::Dep);
                }
            }
        }
    }
    m
}

const VARS: [&str; 4] = ["p", "q", "r", "s"];

fn var_name() -> impl Strategy<Value = String> {
    prop::sample::select(VARS.to_vec()).prop_map(str::to_string)
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        var_name().prop_map(Expr::Var),
        (-9i64..=9).prop_map(Expr::Int),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (
                prop::sample::select(BinOp::ALL.to_vec()),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::bin(op, a, b)),
            inner.prop_map(Expr::negate),
        ]
    })
}

proptest! {
    #[test]
    fn straight_line_dfg_matches_oracle(
        assigns in prop::collection::vec((var_name(), expr()), 0..6)
    ) {
        let env = VarEnv::new(VARS);
        let prog = Command::Seq(
            assigns.iter().map(|(t, e)| Command::assign(t, e.clone())).collect(),
        );
        let r = dfg::dfg_of_command_in(&prog, &env).unwrap();
        prop_assert_eq!(r.matrix, straight_line_oracle(&assigns, &env));
    }

    #[test]
    fn expressions_round_trip(e in expr(), t in var_name()) {
        let c = Command::assign(&t, e);
        let text = lang::pretty(&c);
        let back = parse(&text).unwrap();
        prop_assert_eq!(back.items(), std::slice::from_ref(&c));
    }
}

#[test]
fn generated_programs_round_trip() {
    let cfg = GenConfig::with_seed(11);
    for i in 0..1000 {
        let p = harness::gen_program(&cfg, i);
        let text = lang::pretty(&p);
        assert_eq!(parse(&text).unwrap(), p, "{text}");
        let opt = transform::optimize(&p).unwrap();
        assert_eq!(parse(&lang::pretty(&opt)).unwrap(), opt);
    }
}

fn generated_loops(seed: u64, programs: u64) -> Vec<LoopAnalysis> {
    let cfg = GenConfig::with_seed(seed);
    (0..programs)
        .flat_map(|i| analysis::analyze_program(&harness::gen_program(&cfg, i)).unwrap())
        .collect()
}

#[test]
fn raw_degrees_are_monotone_along_edges() {
    for a in generated_loops(3, 500) {
        for e in &a.dep_graph.edges {
            let reader = a.raw_degree[e.reader];
            match e.writer {
                Writer::LoopEntry => assert!(reader >= Degree::ONE),
                Writer::Chunk(w) => {
                    let writer = a.raw_degree[w];
                    let need = if e.kind == EdgeKind::SameIteration {
                        writer
                    } else {
                        writer.succ()
                    };
                    assert!(
                        reader >= need,
                        "loop {:?}: edge {e:?}",
                        a.chunks[e.reader].command
                    );
                }
            }
        }
    }
}

#[test]
fn effective_degrees_only_grow() {
    for a in generated_loops(4, 500) {
        for (raw, eff) in a.raw_degree.iter().zip(&a.effective_degree) {
            assert!(eff >= raw);
        }
        let max_finite = a
            .effective_degree
            .iter()
            .filter_map(|d| d.finite())
            .max()
            .unwrap_or(0);
        assert_eq!(a.peel_count, max_finite);
    }
}

#[test]
fn cycles_force_infinite_degree() {
    for a in generated_loops(5, 500) {
        for comp in a.dep_graph.components() {
            let self_loop = a
                .dep_graph
                .edges
                .iter()
                .any(|e| e.reader == comp[0] && e.writer == Writer::Chunk(comp[0]));
            if comp.len() > 1 || self_loop {
                for &c in &comp {
                    assert_eq!(a.raw_degree[c], Degree::Infinite);
                }
            }
        }
    }
}

#[test]
fn use_chunks_are_infinite() {
    for a in generated_loops(6, 300) {
        for (c, d) in a.chunks.iter().zip(&a.effective_degree) {
            if c.command.contains_use() {
                assert_eq!(*d, Degree::Infinite);
            }
        }
    }
}

/// `while (E) body` where the chunks in `dropped` only run during the first
/// `d` iterations.
fn drop_after(lp: &Command, dropped: &BTreeSet<usize>, d: usize) -> Command {
    let Command::While { cond, body } = lp else {
        panic!("expected a loop")
    };
    let items = body.items();
    let kept: Vec<Command> = (0..items.len())
        .filter(|p| !dropped.contains(p))
        .map(|p| items[p].clone())
        .collect();
    let mut prog = vec![];
    for _ in 0..d {
        prog.push(Command::if_then(cond.clone(), (**body).clone(), None));
    }
    prog.push(Command::while_loop(cond.clone(), Command::Seq(kept)));
    Command::Seq(prog)
}

/// Smallest number of iterations after which `dropped` can stop running
/// without any observable difference on the given stores.
fn semantic_degree(lp: &Command, dropped: &BTreeSet<usize>, stores: &[Store]) -> Option<usize> {
    (0..=4).find(|&d| {
        interp::equivalent(lp, &drop_after(lp, dropped, d), stores, 100_000).is_equivalent()
    })
}

fn small_stores(prog: &Command, count: usize) -> Vec<Store> {
    harness::gen_stores(prog, 17, 0, count)
        .into_iter()
        .map(|s| {
            s.iter()
                .map(|(k, v)| {
                    (
                        k.to_string(),
                        if k == "n" || k == "m" {
                            v.rem_euclid(11)
                        } else {
                            v
                        },
                    )
                })
                .collect()
        })
        .collect()
}

#[test]
fn example3_inner_loop_stabilises_after_one_iteration() {
    let prog = parse(include_str!("../../../programs/example3.wh")).unwrap();
    let lp = prog.items()[0].clone();
    let loops = analysis::analyze_program(&prog).unwrap();
    let outer = loops.iter().find(|a| a.loop_id == 0).unwrap();
    let inner = loops.iter().find(|a| a.loop_id == 1).unwrap();
    assert_eq!(inner.peel_count, 0);
    let while_chunk = outer
        .chunks
        .iter()
        .position(|c| matches!(c.command, Command::While { .. }))
        .unwrap();
    assert_eq!(outer.effective_degree[while_chunk], Degree::ONE);
    let finite: BTreeSet<usize> = (0..outer.chunks.len())
        .filter(|&p| outer.effective_degree[p].is_finite())
        .collect();
    let stores = small_stores(&prog, 100);
    assert_eq!(semantic_degree(&lp, &finite, &stores), Some(1));
    // the inner loop alone cannot be dropped: its initialisers reset `fact`
    assert_ne!(
        semantic_degree(&lp, &BTreeSet::from([while_chunk]), &stores),
        Some(1)
    );
}

#[test]
fn closure_groups_are_never_dropped_too_early() {
    let cfg = GenConfig::with_seed(21);
    for i in 0..300 {
        let prog = harness::gen_program(&cfg, i);
        let stores = harness::gen_stores(&prog, 21, i, 5);
        for item in prog.items() {
            let Command::While { cond, body } = item else {
                continue;
            };
            let a = analysis::analyze_loop(0, cond, body).unwrap();
            for k in 1..=a.peel_count {
                let dropped: BTreeSet<usize> = (0..a.chunks.len())
                    .filter(|&p| a.effective_degree[p] <= Degree::Finite(k))
                    .collect();
                // stores reach this loop with arbitrary values, so run it directly
                let v = interp::equivalent(
                    item,
                    &drop_after(item, &dropped, k as usize),
                    &stores,
                    100_000,
                );
                assert!(v.is_equivalent(), "{}\nk={k}: {:?}", lang::pretty(item), v);
            }
        }
    }
}

#[test]
fn mutual_independence_alone_does_not_license_swapping() {
    // both write x: independent in the read/write sense, but order matters
    let a = parse("x = 1;").unwrap();
    let b = parse("x = 2;").unwrap();
    let ab = Command::Seq(vec![a.clone(), b.clone()]);
    let env = VarEnv::of_command(&ab);
    let ra = dfg::dfg_of_command_in(&a, &env).unwrap();
    let rb = dfg::dfg_of_command_in(&b, &env).unwrap();
    assert!(analysis::mutually_independent(&ra, &rb));
    let ba = Command::Seq(vec![b.clone(), a.clone()]);
    assert!(!interp::equivalent(&ab, &ba, &[Store::new()], 10).is_equivalent());
    assert!(transform::swap(&a, &b).is_none());
}

#[test]
fn guarded_swaps_preserve_behaviour() {
    let mut swapped = 0;
    for i in 0..2000 {
        let c = harness::lemma_instance(harness::Lemma::Swap, 31, i);
        let [a, b] = c.items() else { continue };
        if let Some(r) = transform::swap(a, b) {
            swapped += 1;
            let stores = harness::gen_stores(&c, 31, i, 5);
            assert!(interp::equivalent(&c, &r, &stores, 100_000).is_equivalent());
        }
    }
    assert!(swapped > 200);
}

#[test]
fn peeling_keeps_observation_counts() {
    let cfg = GenConfig::with_seed(8);
    for i in 0..300 {
        let p = harness::gen_program(&cfg, i);
        let o = transform::optimize(&p).unwrap();
        for s in harness::gen_stores(&p, 8, i, 3) {
            let a = interp::run(&p, &s, 100_000);
            let b = interp::run(&o, &s, 100_000);
            if a.status == interp::Status::Finished {
                assert_eq!(a.trace.len(), b.trace.len());
            }
        }
    }
}

#[test]
fn diverging_programs_keep_their_observations() {
    let report = harness::difftest_campaign(
        &GenConfig::diverging(13),
        transform::Strategy::Optimize,
        200,
        3,
        20_000,
    );
    let failures: Vec<_> = report.failures().collect();
    assert!(failures.is_empty(), "{failures:#?}");
    for src in [
        "while (1) { use(a); b = a + 1; a = 3; }",
        "while (c) { x = y; y = 7; use(x); }",
        "while (k != 0) { t = t + 1; z = 4; }",
    ] {
        let p = parse(src).unwrap();
        let o = transform::optimize(&p).unwrap();
        let stores = harness::gen_stores(&p, 1, 0, 20);
        assert!(
            interp::equivalent(&p, &o, &stores, 20_000).is_equivalent(),
            "{src}"
        );
    }
}

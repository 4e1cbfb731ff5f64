//! Random program generation, differential testing of transformations
//! against the interpreter, and step-count benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::interp::{self, Outcome, Status, Store, Verdict};
use crate::lang::{self, BinOp, Command, Expr};
use crate::transform::{self, Strategy};

const POOL: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
const MAX_USES: usize = 3;
const STORE_SALT: u64 = 0x5eed_5eed;
const LEMMA_SALT: u64 = 0x1e44_a000;
const STORE_RANGE: std::ops::RangeInclusive<i64> = -20..=20;

/// Knobs for [`gen_program`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub max_depth: usize,
    pub max_body_len: usize,
    /// Number of ordinary variables (at most 8); loop counters and bounds
    /// come on top.
    pub var_pool_size: usize,
    pub loop_probability: f64,
    pub use_probability: f64,
    /// Every loop is `i = 0; n = <small>; while (i < n) { ...; i = i + 1; }`
    /// with a fresh counter and bound.
    pub terminating: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            max_depth: 3,
            max_body_len: 5,
            var_pool_size: 5,
            loop_probability: 0.2,
            use_probability: 0.15,
            terminating: true,
        }
    }
}

impl GenConfig {
    pub fn with_seed(seed: u64) -> Self {
        GenConfig {
            seed,
            ..GenConfig::default()
        }
    }

    /// Loops over ordinary variables that may run forever.
    pub fn diverging(seed: u64) -> Self {
        GenConfig {
            seed,
            max_depth: 2,
            max_body_len: 4,
            terminating: false,
            ..GenConfig::default()
        }
    }
}

fn rng_for(seed: u64, stream: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(stream);
    rng
}

struct Gen<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    uses_left: usize,
    loops: usize,
    /// Counters of the enclosing loops, readable but never written.
    counters: Vec<String>,
}

impl Gen<'_> {
    fn pool(&self) -> &'static [&'static str] {
        &POOL[..self.cfg.var_pool_size.clamp(1, POOL.len())]
    }

    fn pool_var(&mut self) -> String {
        let pool = self.pool();
        pool[self.rng.gen_range(0..pool.len())].to_string()
    }

    fn readable_var(&mut self) -> String {
        if !self.counters.is_empty() && self.rng.gen_bool(0.15) {
            return self.counters.choose(&mut self.rng).unwrap().clone();
        }
        self.pool_var()
    }

    fn literal(&mut self) -> Expr {
        if self.rng.gen_bool(0.1) {
            Expr::Int(-self.rng.gen_range(1..=5))
        } else {
            Expr::Int(self.rng.gen_range(0..=9))
        }
    }

    fn leaf(&mut self) -> Expr {
        if self.rng.gen_bool(0.65) {
            Expr::Var(self.readable_var())
        } else {
            self.literal()
        }
    }

    fn op(&mut self) -> BinOp {
        let r = self.rng.gen_range(0..100);
        match r {
            0..=29 => BinOp::Add,
            30..=49 => BinOp::Sub,
            50..=69 => BinOp::Mul,
            70..=75 => BinOp::Lt,
            76..=80 => BinOp::Le,
            81..=85 => BinOp::Eq,
            86..=88 => BinOp::Ne,
            89..=91 => BinOp::Gt,
            92..=95 => BinOp::Div,
            _ => BinOp::Mod,
        }
    }

    fn expr(&mut self, depth: usize) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return self.leaf();
        }
        if self.rng.gen_bool(0.05) {
            return Expr::negate(self.expr(depth - 1));
        }
        let op = self.op();
        Expr::bin(op, self.expr(depth - 1), self.expr(depth - 1))
    }

    fn assign(&mut self) -> Command {
        let target = self.pool_var();
        let value = match self.rng.gen_range(0..100) {
            0..=14 => self.literal(),
            15..=34 => Expr::Var(self.readable_var()),
            35..=49 => {
                let e = self.expr(1);
                Expr::bin(BinOp::Add, Expr::Var(target.clone()), e)
            }
            _ => self.expr(2),
        };
        Command::Assign { target, value }
    }

    fn use_stmt(&mut self) -> Command {
        self.uses_left -= 1;
        let n = self.rng.gen_range(1..=2);
        Command::Use((0..n).map(|_| self.readable_var()).collect())
    }

    fn block(&mut self, depth: usize, min_len: usize) -> Vec<Command> {
        let len = self
            .rng
            .gen_range(min_len..=self.cfg.max_body_len.max(min_len));
        let mut out = Vec::new();
        for _ in 0..len {
            self.stmt(depth, &mut out);
        }
        out
    }

    fn stmt(&mut self, depth: usize, out: &mut Vec<Command>) {
        let r: f64 = self.rng.gen();
        let lp = self.cfg.loop_probability;
        let up = self.cfg.use_probability;
        let nested = depth < self.cfg.max_depth;
        if r < lp {
            if nested {
                self.loop_stmt(depth + 1, out);
            } else {
                out.push(self.assign());
            }
        } else if r < lp + up {
            if self.uses_left > 0 {
                out.push(self.use_stmt());
            } else {
                out.push(self.assign());
            }
        } else if nested && r < lp + up + 0.12 {
            let cond = self.expr(1);
            let then_branch = Command::Seq(self.block_upto(depth + 1, 2));
            let else_branch = self
                .rng
                .gen_bool(0.4)
                .then(|| Command::Seq(self.block_upto(depth + 1, 2)));
            out.push(Command::if_then(cond, then_branch, else_branch));
        } else {
            out.push(self.assign());
        }
    }

    fn block_upto(&mut self, depth: usize, max: usize) -> Vec<Command> {
        let len = self.rng.gen_range(1..=max);
        let mut out = Vec::new();
        for _ in 0..len {
            self.stmt(depth, &mut out);
        }
        out
    }

    fn loop_stmt(&mut self, depth: usize, out: &mut Vec<Command>) {
        let k = self.loops;
        self.loops += 1;
        if !self.cfg.terminating {
            let cond = match self.rng.gen_range(0..3) {
                0 => Expr::Var(self.pool_var()),
                1 => Expr::bin(
                    BinOp::Lt,
                    Expr::Var(self.pool_var()),
                    Expr::Var(self.pool_var()),
                ),
                _ => Expr::bin(BinOp::Ne, Expr::Var(self.pool_var()), self.literal()),
            };
            let body = self.block(depth, 1);
            out.push(Command::while_loop(cond, Command::Seq(body)));
            return;
        }
        let i = format!("i{k}");
        let n = format!("n{k}");
        let bound = if self.rng.gen_bool(0.5) {
            Expr::Int(self.rng.gen_range(0..=4))
        } else {
            Expr::bin(BinOp::Mod, Expr::Var(self.pool_var()), Expr::Int(5))
        };
        out.push(Command::assign(&i, Expr::Int(0)));
        out.push(Command::assign(&n, bound));
        self.counters.push(i.clone());
        let mut body = self.block(depth, 1);
        self.counters.pop();
        let at = self.rng.gen_range(0..=body.len());
        body.insert(
            at,
            Command::assign(&i, Expr::bin(BinOp::Add, Expr::var(&i), Expr::Int(1))),
        );
        out.push(Command::while_loop(
            Expr::bin(BinOp::Lt, Expr::var(&i), Expr::var(&n)),
            Command::Seq(body),
        ));
    }
}

/// The `index`-th program for `cfg`. Deterministic, and every program has
/// at least one loop.
pub fn gen_program(cfg: &GenConfig, index: u64) -> Command {
    let mut g = Gen {
        cfg,
        rng: rng_for(cfg.seed, index, 0),
        uses_left: MAX_USES,
        loops: 0,
        counters: Vec::new(),
    };
    let mut items = Vec::new();
    for _ in 0..g.rng.gen_range(0..=2) {
        g.stmt(cfg.max_depth, &mut items);
    }
    g.loop_stmt(1, &mut items);
    for _ in 0..g.rng.gen_range(0..=2) {
        g.stmt(0, &mut items);
    }
    Command::Seq(items)
}

/// `count` random stores over the variables of `prog`, values in -20..=20.
pub fn gen_stores(prog: &Command, seed: u64, index: u64, count: usize) -> Vec<Store> {
    let vars = lang::vars_in_order(prog);
    let mut rng = rng_for(seed, index, STORE_SALT);
    (0..count)
        .map(|_| {
            vars.iter()
                .map(|v| (v.clone(), rng.gen_range(STORE_RANGE)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub store_index: usize,
    pub store: Store,
    pub reason: String,
}

/// One line of a campaign report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CampaignRecord {
    pub index: u64,
    pub seed: u64,
    pub status: RecordStatus,
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transformed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignReport {
    pub records: Vec<CampaignRecord>,
}

impl CampaignReport {
    pub fn failures(&self) -> impl Iterator<Item = &CampaignRecord> {
        self.records
            .iter()
            .filter(|r| r.status == RecordStatus::Fail)
    }

    pub fn failure_count(&self) -> usize {
        self.failures().count()
    }

    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

/// Checks `strategy` on one generated program.
pub fn check_program(
    cfg: &GenConfig,
    index: u64,
    strategy: Strategy,
    stores_per_program: usize,
    fuel: u64,
) -> CampaignRecord {
    let prog = gen_program(cfg, index);
    let stores = gen_stores(&prog, cfg.seed, index, stores_per_program);
    let fail = |witness: Witness, transformed: Option<String>| CampaignRecord {
        index,
        seed: cfg.seed,
        status: RecordStatus::Fail,
        witness: Some(witness),
        program: Some(lang::pretty(&prog)),
        transformed,
    };
    let out = match transform::transform_program(&prog, strategy) {
        Ok(out) => out,
        Err(e) => {
            let w = Witness {
                store_index: 0,
                store: Store::new(),
                reason: format!("transform failed: {e}"),
            };
            return fail(w, None);
        }
    };
    match interp::equivalent(&prog, &out, &stores, fuel) {
        Verdict::Equivalent => CampaignRecord {
            index,
            seed: cfg.seed,
            status: RecordStatus::Ok,
            witness: None,
            program: None,
            transformed: None,
        },
        Verdict::Differ(cx) => fail(
            Witness {
                store_index: cx.store_index,
                store: cx.store,
                reason: cx.reason,
            },
            Some(lang::pretty(&out)),
        ),
    }
}

/// Compares every generated program with its transformed version on
/// `stores_per_program` random stores. Programs are checked in parallel;
/// records come back in index order.
pub fn difftest_campaign(
    cfg: &GenConfig,
    strategy: Strategy,
    count: u64,
    stores_per_program: usize,
    fuel: u64,
) -> CampaignReport {
    let records = (0..count)
        .into_par_iter()
        .map(|i| check_program(cfg, i, strategy, stores_per_program, fuel))
        .collect();
    CampaignReport { records }
}

/// The guarded rewrites of the transform module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma {
    Swap,
    Specialize,
    Hoist,
}

impl Lemma {
    pub const ALL: [Lemma; 3] = [Lemma::Swap, Lemma::Specialize, Lemma::Hoist];

    pub fn apply(self, c: &Command) -> Option<Command> {
        match self {
            Lemma::Swap => match c.items() {
                [a, b] => transform::swap(a, b),
                _ => None,
            },
            Lemma::Specialize => transform::specialize_while(c),
            Lemma::Hoist => transform::hoist_head(c),
        }
    }
}

fn lemma_gen(seed: u64, index: u64, salt: u64) -> (ChaCha8Rng, GenConfig) {
    let cfg = GenConfig {
        seed,
        max_depth: 1,
        max_body_len: 2,
        var_pool_size: 8,
        loop_probability: 0.1,
        use_probability: 0.2,
        terminating: true,
    };
    (rng_for(seed, index, salt), cfg)
}

/// A candidate input for `lemma`. Roughly half of the candidates satisfy
/// the rewrite's guard.
pub fn lemma_instance(lemma: Lemma, seed: u64, index: u64) -> Command {
    let (rng, cfg) = lemma_gen(seed, index, LEMMA_SALT + lemma as u64);
    let mut g = Gen {
        cfg: &cfg,
        rng,
        uses_left: 2,
        loops: 0,
        counters: Vec::new(),
    };
    let small = |g: &mut Gen<'_>| -> Command {
        let mut out = Vec::new();
        let len = g.rng.gen_range(1..=2);
        for _ in 0..len {
            g.stmt(0, &mut out);
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Command::Seq(out)
        }
    };
    match lemma {
        Lemma::Swap => Command::Seq(vec![small(&mut g), small(&mut g)]),
        Lemma::Specialize => {
            let cond = match g.rng.gen_range(0..3) {
                0 => Expr::Var(g.pool_var()),
                1 => Expr::bin(BinOp::Lt, Expr::Var(g.pool_var()), Expr::Var(g.pool_var())),
                _ => Expr::bin(BinOp::Gt, Expr::Var(g.pool_var()), g.literal()),
            };
            let body = match small(&mut g) {
                Command::Seq(v) => Command::Seq(v),
                c => Command::Seq(vec![c]),
            };
            Command::while_loop(cond, body)
        }
        Lemma::Hoist => {
            let head = g.assign();
            let mut body = vec![head];
            body.extend(g.block_upto(1, 2));
            let counted = g.rng.gen_bool(0.7);
            let cond = if counted {
                body.push(Command::assign(
                    "i",
                    Expr::bin(BinOp::Add, Expr::var("i"), Expr::Int(1)),
                ));
                Expr::bin(BinOp::Lt, Expr::var("i"), Expr::var("n"))
            } else {
                Expr::bin(BinOp::Lt, Expr::Var(g.pool_var()), Expr::Var(g.pool_var()))
            };
            Command::while_loop(cond, Command::Seq(body))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaFailure {
    pub index: u64,
    pub original: String,
    pub rewritten: String,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaReport {
    pub lemma: Lemma,
    pub candidates: u64,
    pub rewritten: u64,
    pub refused: u64,
    pub failures: Vec<LemmaFailure>,
}

/// Draws candidates until `wanted` of them have been rewritten (or
/// `max_candidates` are exhausted) and checks each rewrite against the
/// original.
pub fn lemma_campaign(
    lemma: Lemma,
    seed: u64,
    wanted: u64,
    max_candidates: u64,
    stores_per_instance: usize,
    fuel: u64,
) -> LemmaReport {
    const BATCH: u64 = 64;
    let check = |index: u64| -> Option<Option<LemmaFailure>> {
        let c = lemma_instance(lemma, seed, index);
        let r = lemma.apply(&c)?;
        let stores = gen_stores(&c, seed, index, stores_per_instance);
        Some(match interp::equivalent(&c, &r, &stores, fuel) {
            Verdict::Equivalent => None,
            Verdict::Differ(cx) => Some(LemmaFailure {
                index,
                original: lang::pretty(&c),
                rewritten: lang::pretty(&r),
                witness: Witness {
                    store_index: cx.store_index,
                    store: cx.store,
                    reason: cx.reason,
                },
            }),
        })
    };
    let mut report = LemmaReport {
        lemma,
        candidates: 0,
        rewritten: 0,
        refused: 0,
        failures: Vec::new(),
    };
    let mut start = 0;
    while report.rewritten < wanted && start < max_candidates {
        let end = (start + BATCH).min(max_candidates);
        let batch: Vec<_> = (start..end).into_par_iter().map(check).collect();
        for r in batch {
            if report.rewritten == wanted {
                break;
            }
            report.candidates += 1;
            match r {
                None => report.refused += 1,
                Some(f) => {
                    report.rewritten += 1;
                    report.failures.extend(f);
                }
            }
        }
        start = end;
    }
    report
}

/// Steps and status of one benchmark run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRun {
    pub steps: u64,
    pub status: Status,
}

impl From<&Outcome> for BenchRun {
    fn from(o: &Outcome) -> Self {
        BenchRun {
            steps: o.steps,
            status: o.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub n: i64,
    pub original: BenchRun,
    pub optimized: BenchRun,
    pub traces_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log(steps) against log(n).
    pub slope_original: Option<f64>,
    pub slope_optimized: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than
/// two usable points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `prog` and its optimized version for every size, binding each of
/// `params` to the size on top of `base`.
pub fn bench_complexity(
    prog: &Command,
    params: &[String],
    sizes: &[i64],
    base: &Store,
    fuel: u64,
) -> Result<BenchReport, transform::TransformError> {
    let optimized = transform::optimize(prog)?;
    let rows: Vec<BenchRow> = sizes
        .iter()
        .map(|&n| {
            let mut store = base.clone();
            for p in params {
                store.set(p, n);
            }
            let a = interp::run(prog, &store, fuel);
            let b = interp::run(&optimized, &store, fuel);
            BenchRow {
                n,
                traces_match: a.trace == b.trace,
                original: BenchRun::from(&a),
                optimized: BenchRun::from(&b),
            }
        })
        .collect();
    let finished = |pick: fn(&BenchRow) -> &BenchRun| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| pick(r).status == Status::Finished)
            .map(|r| (r.n as f64, pick(r).steps as f64))
            .collect()
    };
    Ok(BenchReport {
        slope_original: loglog_slope(&finished(|r| &r.original)),
        slope_optimized: loglog_slope(&finished(|r| &r.optimized)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::with_seed(1);
        assert_eq!(gen_program(&cfg, 0), gen_program(&cfg, 0));
        assert_ne!(gen_program(&cfg, 0), gen_program(&cfg, 1));
        let p = gen_program(&cfg, 3);
        assert_eq!(gen_stores(&p, 1, 3, 4), gen_stores(&p, 1, 3, 4));
    }

    #[test]
    fn generated_programs_respect_limits() {
        let cfg = GenConfig::with_seed(7);
        for i in 0..200 {
            let p = gen_program(&cfg, i);
            assert!(p.contains_while());
            let uses = lang::pretty(&p).matches("use(").count();
            assert!(uses <= MAX_USES, "{}", lang::pretty(&p));
        }
    }

    #[test]
    fn identity_campaign_is_clean() {
        let r = difftest_campaign(&GenConfig::with_seed(5), Strategy::Identity, 50, 3, 100_000);
        assert_eq!(r.records.len(), 50);
        assert_eq!(r.failure_count(), 0);
    }

    #[test]
    fn slope_of_power_laws() {
        let quad: Vec<(f64, f64)> = [10.0, 20.0, 40.0]
            .iter()
            .map(|&x| (x, 3.0 * x * x))
            .collect();
        assert!((loglog_slope(&quad).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(loglog_slope(&[(1.0, 1.0)]), None);
    }

    #[test]
    fn json_lines_shape() {
        let r = difftest_campaign(&GenConfig::with_seed(2), Strategy::Optimize, 3, 2, 100_000);
        let text = r.to_json_lines();
        assert_eq!(text.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["index"], 0);
        assert_eq!(first["seed"], 2);
        assert!(first["status"] == "ok" || first["status"] == "fail");
    }
}

//! `qinv`: analyze, peel, run and test WHILE programs.
//!
//! Exit codes: 0 success, 1 usage/parse/IO error, 2 runtime error,
//! 3 fuel exhausted.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qinv::analysis::{self, Degree, LoopAnalysis};
use qinv::dfg::{self, RelationJson};
use qinv::harness::{self, CampaignRecord, GenConfig};
use qinv::interp::{self, Status, Store};
use qinv::lang::{self, Command, Span};
use qinv::transform::{self, Strategy};

const SCHEMA_VERSION: &str = "1.0";

#[derive(Parser)]
#[command(
    name = "qinv",
    version,
    about = "Loop quasi-invariant analysis and peeling for WHILE programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the invariance degree of every loop chunk.
    Analyze {
        file: PathBuf,
        /// Emit the JSON analysis report instead of a table.
        #[arg(long)]
        json: bool,
        /// Write one DOT file per loop relation into this directory.
        #[arg(long, value_name = "DIR")]
        dot: Option<PathBuf>,
    },
    /// Peel loops according to their invariance degrees.
    Optimize {
        file: PathBuf,
        /// Output file; the program goes to stdout when omitted.
        #[arg(short, long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Interpret a program.
    Run {
        file: PathBuf,
        /// Initial values, as name=value.
        #[arg(long, num_args = 1.., value_name = "NAME=VALUE")]
        input: Vec<String>,
        #[arg(long, default_value_t = 10_000_000)]
        fuel: u64,
        /// Also print the number of executed steps.
        #[arg(long)]
        count_steps: bool,
    },
    /// Compare step counts of a program and its optimized version.
    Bench {
        file: PathBuf,
        /// Sizes to bind the parameters to.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<i64>,
        /// Variables bound to the size.
        #[arg(long, value_delimiter = ',', default_value = "n,m")]
        param: Vec<String>,
        #[arg(long, default_value_t = 1_000_000_000)]
        fuel: u64,
    },
    /// Differential test of a transformation on generated programs.
    Difftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        /// Random initial stores per program.
        #[arg(long, default_value_t = 5)]
        stores: usize,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
        #[arg(long, value_enum, default_value_t = StrategyArg::Optimize)]
        strategy: StrategyArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Optimize,
    Identity,
    /// Peel by raw degrees; known to be unsound.
    Literal,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Optimize => Strategy::Optimize,
            StrategyArg::Identity => Strategy::Identity,
            StrategyArg::Literal => Strategy::Literal,
        }
    }
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Cmd::Analyze { file, json, dot } => cmd_analyze(&file, json, dot.as_deref()),
        Cmd::Optimize { file, output } => cmd_optimize(&file, output.as_deref()),
        Cmd::Run {
            file,
            input,
            fuel,
            count_steps,
        } => cmd_run(&file, &input, fuel, count_steps),
        Cmd::Bench {
            file,
            values,
            param,
            fuel,
        } => cmd_bench(&file, &values, &param, fuel),
        Cmd::Difftest {
            seed,
            count,
            stores,
            fuel,
            strategy,
        } => cmd_difftest(seed, count, stores, fuel, strategy.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qinv: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(file: &Path) -> Result<(Command, Vec<Span>), Failure> {
    let src = fs::read_to_string(file)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", file.display())))?;
    lang::parse_with_spans(&src).map_err(|e| Failure::input(format!("{}:{e}", file.display())))
}

#[derive(Serialize)]
struct AnalysisReport {
    schema_version: &'static str,
    loops: Vec<LoopReport>,
}

#[derive(Serialize)]
struct LoopReport {
    loop_id: usize,
    source_span: Option<Span>,
    chunks: Vec<ChunkReport>,
    peel_count: u32,
    basic_invariants: Vec<usize>,
    lemma1: analysis::Lemma1Audit,
    relation: RelationJson,
}

#[derive(Serialize)]
struct ChunkReport {
    index: usize,
    source_text: String,
    raw_degree: Degree,
    effective_degree: Degree,
}

impl From<&LoopAnalysis> for LoopReport {
    fn from(a: &LoopAnalysis) -> Self {
        LoopReport {
            loop_id: a.loop_id,
            source_span: a.span,
            chunks: a
                .chunks
                .iter()
                .enumerate()
                .map(|(i, c)| ChunkReport {
                    index: i,
                    source_text: lang::pretty_inline(&c.command),
                    raw_degree: a.raw_degree[i],
                    effective_degree: a.effective_degree[i],
                })
                .collect(),
            peel_count: a.peel_count,
            basic_invariants: a.basic_invariants.iter().copied().collect(),
            lemma1: a.lemma1,
            relation: a.relation.to_json(),
        }
    }
}

fn analyze(prog: &Command, spans: &[Span]) -> Result<Vec<LoopAnalysis>, Failure> {
    analysis::analyze_program_with_spans(prog, spans).map_err(|e| Failure::input(e.to_string()))
}

fn span_text(span: Option<Span>) -> String {
    match span {
        Some(s) => format!(
            " at {}:{}-{}:{}",
            s.start.line, s.start.column, s.end.line, s.end.column
        ),
        None => String::new(),
    }
}

fn cmd_analyze(file: &Path, json: bool, dot: Option<&Path>) -> CmdResult {
    let (prog, spans) = load(file)?;
    let loops = analyze(&prog, &spans)?;
    if let Some(dir) = dot {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
        for a in &loops {
            let path = dir.join(format!("loop{}.dot", a.loop_id));
            fs::write(&path, dfg::to_dot(&a.relation))
                .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    if json {
        let report = AnalysisReport {
            schema_version: SCHEMA_VERSION,
            loops: loops.iter().map(LoopReport::from).collect(),
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
        return Ok(());
    }
    for (n, a) in loops.iter().enumerate() {
        if n > 0 {
            println!();
        }
        println!(
            "loop {}{}: peel {}, star fixpoint {} (bound {})",
            a.loop_id,
            span_text(a.span),
            a.peel_count,
            a.lemma1.fixpoint_index,
            a.lemma1.bound
        );
        println!("  {:>3}  {:>3}  {:>3}  chunk", "#", "raw", "eff");
        for (i, c) in a.chunks.iter().enumerate() {
            println!(
                "  {:>3}  {:>3}  {:>3}  {}",
                i,
                a.raw_degree[i].to_string(),
                a.effective_degree[i].to_string(),
                lang::pretty_inline(&c.command)
            );
        }
    }
    Ok(())
}

fn cmd_optimize(file: &Path, output: Option<&Path>) -> CmdResult {
    let (prog, spans) = load(file)?;
    let loops = analyze(&prog, &spans)?;
    let optimized = transform::optimize(&prog).map_err(|e| Failure::input(e.to_string()))?;
    let text = lang::pretty(&optimized);
    let mut counts: Vec<&LoopAnalysis> = loops.iter().collect();
    counts.sort_by_key(|a| a.loop_id);
    let summary: Vec<String> = counts
        .iter()
        .map(|a| {
            format!(
                "loop {}{}: peeled {} times",
                a.loop_id,
                span_text(a.span),
                a.peel_count
            )
        })
        .collect();
    match output {
        Some(path) => {
            fs::write(path, &text)
                .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
            summary.iter().for_each(|l| println!("{l}"));
        }
        None => {
            print!("{text}");
            summary.iter().for_each(|l| eprintln!("{l}"));
        }
    }
    Ok(())
}

fn parse_inputs(inputs: &[String]) -> Result<Store, Failure> {
    let mut store = Store::new();
    for binding in inputs {
        let (k, v) = binding
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("bad input {binding:?}, expected name=value")))?;
        let value = v
            .trim()
            .parse::<i64>()
            .map_err(|_| Failure::input(format!("bad value in {binding:?}")))?;
        store.set(k.trim(), value);
    }
    Ok(store)
}

fn cmd_run(file: &Path, inputs: &[String], fuel: u64, count_steps: bool) -> CmdResult {
    let (prog, _) = load(file)?;
    let init = parse_inputs(inputs)?;
    let out = interp::run(&prog, &init, fuel);
    for obs in &out.trace {
        println!("{obs}");
    }
    if out.status == Status::Finished {
        for (k, v) in out.final_store.iter() {
            println!("{k} = {v}");
        }
    }
    if count_steps {
        println!("steps: {}", out.steps);
    }
    match out.status {
        Status::Finished => Ok(()),
        Status::RuntimeError(kind) => Err(Failure {
            code: 2,
            message: format!("runtime error: {kind}"),
        }),
        Status::FuelExhausted => Err(Failure {
            code: 3,
            message: format!("fuel exhausted after {} steps", out.steps),
        }),
    }
}

fn steps_cell(run: &harness::BenchRun) -> String {
    match run.status {
        Status::Finished => run.steps.to_string(),
        Status::FuelExhausted => format!("fuel>{}", run.steps),
        Status::RuntimeError(kind) => format!("{kind}@{}", run.steps),
    }
}

fn slope_text(s: Option<f64>) -> String {
    s.map_or("n/a".to_string(), |s| format!("{s:.3}"))
}

fn cmd_bench(file: &Path, values: &[i64], params: &[String], fuel: u64) -> CmdResult {
    let (prog, _) = load(file)?;
    let report = harness::bench_complexity(&prog, params, values, &Store::new(), fuel)
        .map_err(|e| Failure::input(e.to_string()))?;
    println!(
        "{:>8}  {:>14}  {:>15}  traces",
        "n", "steps_original", "steps_optimized"
    );
    for r in &report.rows {
        println!(
            "{:>8}  {:>14}  {:>15}  {}",
            r.n,
            steps_cell(&r.original),
            steps_cell(&r.optimized),
            if r.traces_match { "same" } else { "DIFFERENT" }
        );
    }
    println!(
        "log-log slope original: {}",
        slope_text(report.slope_original)
    );
    println!(
        "log-log slope optimized: {}",
        slope_text(report.slope_optimized)
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportLine<'a> {
    schema_version: &'static str,
    #[serde(flatten)]
    record: &'a CampaignRecord,
}

fn cmd_difftest(seed: u64, count: u64, stores: usize, fuel: u64, strategy: Strategy) -> CmdResult {
    let cfg = GenConfig::with_seed(seed);
    let report = harness::difftest_campaign(&cfg, strategy, count, stores, fuel);
    for record in &report.records {
        let line = ReportLine {
            schema_version: SCHEMA_VERSION,
            record,
        };
        println!(
            "{}",
            serde_json::to_string(&line).expect("record serializes")
        );
    }
    Ok(())
}

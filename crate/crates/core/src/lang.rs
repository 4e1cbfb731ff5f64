//! The WHILE language: AST, parser, pretty-printer and variable queries.
//!
//! Concrete syntax:
//!
//! ```text
//! program := stmt*
//! stmt    := ID "=" expr ";" | "skip" ";" | "use" "(" ID {"," ID} ")" ";"
//!          | "while" "(" expr ")" block | "if" "(" expr ")" block ["else" block]
//! block   := "{" stmt* "}"
//! ```
//!
//! Operators follow C precedence. `//` starts a line comment.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

/// Sorted set of variable names.
pub type VarSet = BTreeSet<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub const ALL: [BinOp; 11] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Mod,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Eq,
        BinOp::Ne,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Eq | BinOp::Ne => 1,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 2,
            BinOp::Add | BinOp::Sub => 3,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 4,
        }
    }
}

const UNARY_PREC: u8 = 5;

/// Pure integer expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn negate(operand: Expr) -> Expr {
        Expr::Unary(UnaryOp::Neg, Box::new(operand))
    }

    /// True if the expression contains a division or modulo.
    pub fn may_trap(&self) -> bool {
        match self {
            Expr::Int(_) | Expr::Var(_) => false,
            Expr::Unary(_, e) => e.may_trap(),
            Expr::Binary(op, l, r) => {
                matches!(op, BinOp::Div | BinOp::Mod) || l.may_trap() || r.may_trap()
            }
        }
    }

    fn collect_vars_ordered(&self, out: &mut Vec<String>) {
        match self {
            Expr::Int(_) => {}
            Expr::Var(v) => push_unique(out, v),
            Expr::Unary(_, e) => e.collect_vars_ordered(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars_ordered(out);
                r.collect_vars_ordered(out);
            }
        }
    }
}

/// A WHILE command.
///
/// Parsed programs are canonical: the program and every block are a
/// [`Command::Seq`] whose items are never themselves `Seq`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    Assign {
        target: String,
        value: Expr,
    },
    Seq(Vec<Command>),
    Skip,
    Use(Vec<String>),
    While {
        cond: Expr,
        body: Box<Command>,
    },
    If {
        cond: Expr,
        then_branch: Box<Command>,
        else_branch: Option<Box<Command>>,
    },
}

impl Command {
    pub fn assign(target: &str, value: Expr) -> Command {
        Command::Assign {
            target: target.to_string(),
            value,
        }
    }

    pub fn use_vars(args: &[&str]) -> Command {
        Command::Use(args.iter().map(|s| s.to_string()).collect())
    }

    pub fn while_loop(cond: Expr, body: Command) -> Command {
        Command::While {
            cond,
            body: Box::new(body),
        }
    }

    pub fn if_then(cond: Expr, then_branch: Command, else_branch: Option<Command>) -> Command {
        Command::If {
            cond,
            then_branch: Box::new(then_branch),
            else_branch: else_branch.map(Box::new),
        }
    }

    /// Top-level statements of a sequence; any other command is its own
    /// single item.
    pub fn items(&self) -> &[Command] {
        match self {
            Command::Seq(items) => items,
            other => std::slice::from_ref(other),
        }
    }

    /// True if a `use` occurs anywhere inside.
    pub fn contains_use(&self) -> bool {
        match self {
            Command::Use(_) => true,
            Command::Assign { .. } | Command::Skip => false,
            Command::Seq(items) => items.iter().any(Command::contains_use),
            Command::While { body, .. } => body.contains_use(),
            Command::If {
                then_branch,
                else_branch,
                ..
            } => {
                then_branch.contains_use() || else_branch.as_ref().is_some_and(|e| e.contains_use())
            }
        }
    }

    pub fn contains_while(&self) -> bool {
        match self {
            Command::While { .. } => true,
            Command::Assign { .. } | Command::Skip | Command::Use(_) => false,
            Command::Seq(items) => items.iter().any(Command::contains_while),
            Command::If {
                then_branch,
                else_branch,
                ..
            } => {
                then_branch.contains_while()
                    || else_branch.as_ref().is_some_and(|e| e.contains_while())
            }
        }
    }

    /// True if evaluating the command may hit a division or modulo.
    pub fn may_trap(&self) -> bool {
        match self {
            Command::Assign { value, .. } => value.may_trap(),
            Command::Skip | Command::Use(_) => false,
            Command::Seq(items) => items.iter().any(Command::may_trap),
            Command::While { cond, body } => cond.may_trap() || body.may_trap(),
            Command::If {
                cond,
                then_branch,
                else_branch,
            } => {
                cond.may_trap()
                    || then_branch.may_trap()
                    || else_branch.as_ref().is_some_and(|e| e.may_trap())
            }
        }
    }

    /// Number of AST nodes (commands and expressions).
    pub fn size(&self) -> usize {
        fn expr_size(e: &Expr) -> usize {
            match e {
                Expr::Int(_) | Expr::Var(_) => 1,
                Expr::Unary(_, e) => 1 + expr_size(e),
                Expr::Binary(_, l, r) => 1 + expr_size(l) + expr_size(r),
            }
        }
        match self {
            Command::Assign { value, .. } => 1 + expr_size(value),
            Command::Skip | Command::Use(_) => 1,
            Command::Seq(items) => 1 + items.iter().map(Command::size).sum::<usize>(),
            Command::While { cond, body } => 1 + expr_size(cond) + body.size(),
            Command::If {
                cond,
                then_branch,
                else_branch,
            } => {
                1 + expr_size(cond)
                    + then_branch.size()
                    + else_branch.as_ref().map_or(0, |e| e.size())
            }
        }
    }
}

fn push_unique(out: &mut Vec<String>, v: &str) {
    if !out.iter().any(|x| x == v) {
        out.push(v.to_string());
    }
}

pub fn vars_of_expr(e: &Expr) -> VarSet {
    let mut ordered = Vec::new();
    e.collect_vars_ordered(&mut ordered);
    ordered.into_iter().collect()
}

/// Variables read by `c`: right-hand sides, conditions and `use` arguments.
pub fn in_vars(c: &Command) -> VarSet {
    let mut set = VarSet::new();
    collect_in(c, &mut set);
    set
}

fn collect_in(c: &Command, set: &mut VarSet) {
    match c {
        Command::Assign { value, .. } => set.extend(vars_of_expr(value)),
        Command::Skip => {}
        Command::Use(args) => set.extend(args.iter().cloned()),
        Command::Seq(items) => items.iter().for_each(|i| collect_in(i, set)),
        Command::While { cond, body } => {
            set.extend(vars_of_expr(cond));
            collect_in(body, set);
        }
        Command::If {
            cond,
            then_branch,
            else_branch,
        } => {
            set.extend(vars_of_expr(cond));
            collect_in(then_branch, set);
            if let Some(e) = else_branch {
                collect_in(e, set);
            }
        }
    }
}

/// Variables that `c` may assign.
pub fn out_vars(c: &Command) -> VarSet {
    let mut set = VarSet::new();
    collect_out(c, &mut set);
    set
}

fn collect_out(c: &Command, set: &mut VarSet) {
    match c {
        Command::Assign { target, .. } => {
            set.insert(target.clone());
        }
        Command::Skip | Command::Use(_) => {}
        Command::Seq(items) => items.iter().for_each(|i| collect_out(i, set)),
        Command::While { body, .. } => collect_out(body, set),
        Command::If {
            then_branch,
            else_branch,
            ..
        } => {
            collect_out(then_branch, set);
            if let Some(e) = else_branch {
                collect_out(e, set);
            }
        }
    }
}

/// All variables of `c` in order of first textual occurrence.
pub fn vars_in_order(c: &Command) -> Vec<String> {
    let mut out = Vec::new();
    collect_ordered(c, &mut out);
    out
}

fn collect_ordered(c: &Command, out: &mut Vec<String>) {
    match c {
        Command::Assign { target, value } => {
            push_unique(out, target);
            value.collect_vars_ordered(out);
        }
        Command::Skip => {}
        Command::Use(args) => args.iter().for_each(|a| push_unique(out, a)),
        Command::Seq(items) => items.iter().for_each(|i| collect_ordered(i, out)),
        Command::While { cond, body } => {
            cond.collect_vars_ordered(out);
            collect_ordered(body, out);
        }
        Command::If {
            cond,
            then_branch,
            else_branch,
        } => {
            cond.collect_vars_ordered(out);
            collect_ordered(then_branch, out);
            if let Some(e) = else_branch {
                collect_ordered(e, out);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u128),
    While,
    If,
    Else,
    Skip,
    Use,
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(n) => write!(f, "integer `{n}`"),
            Tok::While => f.write_str("`while`"),
            Tok::If => f.write_str("`if`"),
            Tok::Else => f.write_str("`else`"),
            Tok::Skip => f.write_str("`skip`"),
            Tok::Use => f.write_str("`use`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

/// Line/column position, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

/// Source range covered by a `while` statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub start: Pos,
    pub end: Pos,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

const PUNCTS: [&str; 19] = [
    "<=", ">=", "==", "!=", "=", ";", ",", "(", ")", "{", "}", "+", "-", "*", "/", "%", "<", ">",
    "!",
];

struct Cursor {
    chars: Vec<char>,
    i: usize,
    line: usize,
    column: usize,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, message: String) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column,
            message,
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos, Pos)>, ParseError> {
    let mut cur = Cursor {
        chars: src.chars().collect(),
        i: 0,
        line: 1,
        column: 1,
    };
    let mut toks = Vec::new();
    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if c == '/' && cur.chars.get(cur.i + 1) == Some(&'/') {
            while cur.peek().is_some_and(|c| c != '\n') {
                cur.bump();
            }
            continue;
        }
        let start = cur.pos();
        if c.is_ascii_alphabetic() || c == '_' {
            let mut word = String::new();
            while let Some(c) = cur
                .peek()
                .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
            {
                word.push(c);
                cur.bump();
            }
            let tok = match word.as_str() {
                "while" => Tok::While,
                "if" => Tok::If,
                "else" => Tok::Else,
                "skip" => Tok::Skip,
                "use" => Tok::Use,
                _ => Tok::Ident(word),
            };
            toks.push((tok, start, cur.pos()));
            continue;
        }
        if c.is_ascii_digit() {
            let mut value: u128 = 0;
            while let Some(d) = cur.peek().and_then(|c| c.to_digit(10)) {
                value = value.saturating_mul(10).saturating_add(d as u128);
                cur.bump();
            }
            toks.push((Tok::Int(value), start, cur.pos()));
            continue;
        }
        let rest: String = cur.chars[cur.i..cur.chars.len().min(cur.i + 2)]
            .iter()
            .collect();
        let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
            return Err(cur.error(format!("unexpected character {c:?}")));
        };
        if *p == "!" {
            return Err(cur.error("unexpected character '!' (did you mean `!=`?)".into()));
        }
        for _ in 0..p.len() {
            cur.bump();
        }
        toks.push((Tok::Punct(p), start, cur.pos()));
    }
    let end = cur.pos();
    toks.push((Tok::Eof, end, end));
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<(Tok, Pos, Pos)>,
    at: usize,
    loop_spans: Vec<Span>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn prev_end(&self) -> Pos {
        self.toks[self.at.saturating_sub(1)].2
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if t != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        let p = self.pos();
        ParseError {
            line: p.line,
            column: p.column,
            message: format!("expected {expected}, found {}", self.peek()),
        }
    }

    fn eat_punct(&mut self, p: &'static str) -> bool {
        if *self.peek() == Tok::Punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(&format!("`{p}`")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn stmts_until(&mut self, end: &Tok) -> Result<Vec<Command>, ParseError> {
        let mut items = Vec::new();
        while self.peek() != end {
            items.push(self.stmt()?);
        }
        Ok(items)
    }

    fn block(&mut self) -> Result<Command, ParseError> {
        self.expect_punct("{")?;
        let items = self.stmts_until(&Tok::Punct("}"))?;
        self.expect_punct("}")?;
        Ok(Command::Seq(items))
    }

    fn cond(&mut self) -> Result<Expr, ParseError> {
        self.expect_punct("(")?;
        let e = self.expr(1)?;
        self.expect_punct(")")?;
        Ok(e)
    }

    fn stmt(&mut self) -> Result<Command, ParseError> {
        let start = self.pos();
        match self.peek().clone() {
            Tok::Ident(target) => {
                self.bump();
                self.expect_punct("=")?;
                let value = self.expr(1)?;
                self.expect_punct(";")?;
                Ok(Command::Assign { target, value })
            }
            Tok::Skip => {
                self.bump();
                self.expect_punct(";")?;
                Ok(Command::Skip)
            }
            Tok::Use => {
                self.bump();
                self.expect_punct("(")?;
                let mut args = vec![self.ident()?];
                while self.eat_punct(",") {
                    args.push(self.ident()?);
                }
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                Ok(Command::Use(args))
            }
            Tok::While => {
                self.bump();
                let slot = self.loop_spans.len();
                self.loop_spans.push(Span { start, end: start });
                let cond = self.cond()?;
                let body = self.block()?;
                self.loop_spans[slot].end = self.prev_end();
                Ok(Command::while_loop(cond, body))
            }
            Tok::If => {
                self.bump();
                let cond = self.cond()?;
                let then_branch = self.block()?;
                let else_branch = if *self.peek() == Tok::Else {
                    self.bump();
                    Some(self.block()?)
                } else {
                    None
                };
                Ok(Command::if_then(cond, then_branch, else_branch))
            }
            _ => Err(self.error("statement")),
        }
    }

    fn binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else {
            return None;
        };
        BinOp::ALL.into_iter().find(|op| op.symbol() == *p)
    }

    fn expr(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.expr(prec + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_punct("-") {
            // `-<literal>` is a negative literal, anything else a negation.
            if let Tok::Int(n) = *self.peek() {
                let pos = self.pos();
                self.bump();
                let v = -(n as i128);
                return i64::try_from(v).map(Expr::Int).map_err(|_| ParseError {
                    line: pos.line,
                    column: pos.column,
                    message: format!("integer literal -{n} out of range"),
                });
            }
            return Ok(Expr::negate(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                i64::try_from(n).map(Expr::Int).map_err(|_| ParseError {
                    line: pos.line,
                    column: pos.column,
                    message: format!("integer literal {n} out of range"),
                })
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Expr::Var(name))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr(1)?;
                self.expect_punct(")")?;
                Ok(e)
            }
            _ => Err(self.error("expression")),
        }
    }
}

/// Parses a whole program into one [`Command::Seq`].
pub fn parse(source: &str) -> Result<Command, ParseError> {
    parse_with_spans(source).map(|(c, _)| c)
}

/// Like [`parse`], also returning the span of every `while` in pre-order.
pub fn parse_with_spans(source: &str) -> Result<(Command, Vec<Span>), ParseError> {
    let mut p = Parser {
        toks: lex(source)?,
        at: 0,
        loop_spans: Vec::new(),
    };
    let items = p.stmts_until(&Tok::Eof)?;
    Ok((Command::Seq(items), p.loop_spans))
}

// ---------------------------------------------------------------------------
// Printer

fn write_expr(out: &mut String, e: &Expr, min_prec: u8) {
    match e {
        Expr::Int(n) => {
            if *n < 0 && min_prec > UNARY_PREC {
                let _ = write!(out, "({n})");
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Expr::Var(v) => out.push_str(v),
        Expr::Unary(UnaryOp::Neg, operand) => {
            let wrap = min_prec > UNARY_PREC;
            if wrap {
                out.push('(');
            }
            out.push('-');
            match operand.as_ref() {
                // `-5` would read back as a literal
                Expr::Int(n) if *n >= 0 => {
                    let _ = write!(out, "({n})");
                }
                other => write_expr(out, other, UNARY_PREC),
            }
            if wrap {
                out.push(')');
            }
        }
        Expr::Binary(op, l, r) => {
            let prec = op.precedence();
            let wrap = prec < min_prec;
            if wrap {
                out.push('(');
            }
            write_expr(out, l, prec);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, r, prec + 1);
            if wrap {
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(&mut s, self, 1);
        f.write_str(&s)
    }
}

fn write_block(out: &mut String, c: &Command, depth: usize) {
    out.push_str("{\n");
    for item in c.items() {
        write_stmt(out, item, depth + 1);
    }
    out.push_str(&"    ".repeat(depth));
    out.push('}');
}

fn write_stmt(out: &mut String, c: &Command, depth: usize) {
    let indent = "    ".repeat(depth);
    match c {
        Command::Seq(items) => {
            for item in items {
                write_stmt(out, item, depth);
            }
        }
        Command::Assign { target, value } => {
            let _ = writeln!(out, "{indent}{target} = {value};");
        }
        Command::Skip => {
            let _ = writeln!(out, "{indent}skip;");
        }
        Command::Use(args) => {
            let _ = writeln!(out, "{indent}use({});", args.join(", "));
        }
        Command::While { cond, body } => {
            let _ = write!(out, "{indent}while ({cond}) ");
            write_block(out, body, depth);
            out.push('\n');
        }
        Command::If {
            cond,
            then_branch,
            else_branch,
        } => {
            let _ = write!(out, "{indent}if ({cond}) ");
            write_block(out, then_branch, depth);
            if let Some(e) = else_branch {
                out.push_str(" else ");
                write_block(out, e, depth);
            }
            out.push('\n');
        }
    }
}

/// Renders re-parseable source, one statement per line, four-space indent.
pub fn pretty(c: &Command) -> String {
    let mut out = String::new();
    write_stmt(&mut out, c, 0);
    out
}

/// Single-line rendering used in reports.
pub fn pretty_inline(c: &Command) -> String {
    pretty(c)
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty(self))
    }
}

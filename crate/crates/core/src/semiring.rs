//! The three-valued dependence semiring `{∅, 0, 1}` and dense square
//! matrices over it.
//!
//! A cell `(i, j)` of a [`DepMatrix`] describes how the output value of
//! variable `j` relates to the input value of variable `i`:
//!
//! * [`DepValue::Bot`] (`∅`): no relation,
//! * [`DepValue::Prop`] (`0`): the value is carried through unchanged,
//! * [`DepValue::Dep`] (`1`): the output is computed from the input.
//!
//! Addition joins alternatives (it is `max` under `Bot < Prop < Dep`),
//! multiplication chains two steps of a path.

use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemiringError {
    #[error("matrix dimension mismatch: {left}x{left} vs {right}x{right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("star of a {n}x{n} matrix did not stabilise within {cap} iterations")]
    StarDidNotConverge { n: usize, cap: usize },
}

/// One element of the dependence semiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DepValue {
    Bot,
    Prop,
    Dep,
}

impl DepValue {
    pub const ALL: [DepValue; 3] = [DepValue::Bot, DepValue::Prop, DepValue::Dep];

    /// Symbol used in JSON reports: `_` for ∅, `0` for propagation, `1` for dependence.
    pub fn symbol(self) -> &'static str {
        match self {
            DepValue::Bot => "_",
            DepValue::Prop => "0",
            DepValue::Dep => "1",
        }
    }

    pub fn from_symbol(s: &str) -> Option<DepValue> {
        match s {
            "_" | "∅" => Some(DepValue::Bot),
            "0" => Some(DepValue::Prop),
            "1" => Some(DepValue::Dep),
            _ => None,
        }
    }
}

impl fmt::Display for DepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepValue::Bot => "∅",
            DepValue::Prop => "0",
            DepValue::Dep => "1",
        })
    }
}

/// Semiring addition.
pub fn dep_add(a: DepValue, b: DepValue) -> DepValue {
    a.max(b)
}

/// Semiring multiplication: `Bot` annihilates, `Prop` is the identity.
pub fn dep_mul(a: DepValue, b: DepValue) -> DepValue {
    match (a, b) {
        (DepValue::Bot, _) | (_, DepValue::Bot) => DepValue::Bot,
        (DepValue::Prop, x) | (x, DepValue::Prop) => x,
        (DepValue::Dep, DepValue::Dep) => DepValue::Dep,
    }
}

impl Add for DepValue {
    type Output = DepValue;

    fn add(self, rhs: DepValue) -> DepValue {
        dep_add(self, rhs)
    }
}

impl Mul for DepValue {
    type Output = DepValue;

    fn mul(self, rhs: DepValue) -> DepValue {
        dep_mul(self, rhs)
    }
}

/// Dense `n x n` matrix over [`DepValue`]; rows are inputs, columns outputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DepMatrix {
    n: usize,
    cells: Vec<DepValue>,
}

impl DepMatrix {
    /// The all-`Bot` matrix, neutral for [`mat_add`].
    pub fn zero(n: usize) -> Self {
        DepMatrix {
            n,
            cells: vec![DepValue::Bot; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<DepValue>>) -> Result<Self, SemiringError> {
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(SemiringError::DimensionMismatch {
                    left: n,
                    right: row.len(),
                });
            }
            cells.extend(row);
        }
        Ok(DepMatrix { n, cells })
    }

    /// Builds a matrix from rows of `_`/`0`/`1` symbols, e.g. `["1__", "_0_", "__1"]`.
    ///
    /// Panics on malformed input; meant for tests and golden values.
    pub fn parse_rows(rows: &[&str]) -> Self {
        let parsed = rows
            .iter()
            .map(|r| {
                r.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| {
                        DepValue::from_symbol(&c.to_string())
                            .unwrap_or_else(|| panic!("bad matrix symbol {c:?}"))
                    })
                    .collect()
            })
            .collect();
        DepMatrix::from_rows(parsed).expect("matrix rows must be square")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> DepValue {
        assert!(
            row < self.n && col < self.n,
            "cell ({row},{col}) out of range"
        );
        self.cells[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: DepValue) {
        assert!(
            row < self.n && col < self.n,
            "cell ({row},{col}) out of range"
        );
        self.cells[row * self.n + col] = value;
    }

    pub fn row(&self, row: usize) -> &[DepValue] {
        &self.cells[row * self.n..(row + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[DepValue]> {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Cellwise `self >= other` in the `Bot < Prop < Dep` order.
    pub fn dominates(&self, other: &DepMatrix) -> bool {
        self.n == other.n && self.cells.iter().zip(&other.cells).all(|(a, b)| a >= b)
    }

    pub fn to_symbol_rows(&self) -> Vec<Vec<String>> {
        self.rows()
            .map(|r| r.iter().map(|v| v.symbol().to_string()).collect())
            .collect()
    }
}

impl fmt::Display for DepMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        Ok(())
    }
}

pub fn mat_identity(n: usize) -> DepMatrix {
    let mut m = DepMatrix::zero(n);
    for i in 0..n {
        m.set(i, i, DepValue::Prop);
    }
    m
}

fn check_dims(a: &DepMatrix, b: &DepMatrix) -> Result<(), SemiringError> {
    if a.n != b.n {
        return Err(SemiringError::DimensionMismatch {
            left: a.n,
            right: b.n,
        });
    }
    Ok(())
}

/// Cellwise sum.
pub fn mat_add(a: &DepMatrix, b: &DepMatrix) -> Result<DepMatrix, SemiringError> {
    check_dims(a, b)?;
    Ok(DepMatrix {
        n: a.n,
        cells: a.cells.iter().zip(&b.cells).map(|(&x, &y)| x + y).collect(),
    })
}

/// Semiring matrix product: `C[i][j] = ⊕_k A[i][k] ⊗ B[k][j]`.
///
/// Sequential composition of two commands corresponds to the product of
/// their matrices: every cell of the result summarises all two-step paths.
pub fn mat_mul(a: &DepMatrix, b: &DepMatrix) -> Result<DepMatrix, SemiringError> {
    check_dims(a, b)?;
    let n = a.n;
    let mut out = DepMatrix::zero(n);
    for i in 0..n {
        for k in 0..n {
            let left = a.get(i, k);
            if left == DepValue::Bot {
                continue;
            }
            for j in 0..n {
                let acc = out.cells[i * n + j];
                out.cells[i * n + j] = acc + left * b.get(k, j);
            }
        }
    }
    Ok(out)
}

/// Result of [`mat_star`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Star {
    pub matrix: DepMatrix,
    /// Least `k` with `S_k = S_{k+1}` where `S_k = A ⊕ A² ⊕ … ⊕ A^k`.
    pub fixpoint_index: usize,
}

/// Sum of all positive powers of `a`, together with the index at which the
/// partial sums stop changing.
///
/// The partial sums grow monotonically in a finite lattice, and once
/// `S_{k+1} = S_k` every later power is already below `S_k`, so the first
/// repeat is the limit.
pub fn mat_star(a: &DepMatrix) -> Result<Star, SemiringError> {
    let n = a.n;
    let cap = n * n + 1;
    let mut sum = a.clone();
    let mut power = a.clone();
    for k in 1..=cap {
        power = mat_mul(&power, a)?;
        let next = mat_add(&sum, &power)?;
        if next == sum {
            return Ok(Star {
                matrix: sum,
                fixpoint_index: k,
            });
        }
        sum = next;
    }
    Err(SemiringError::StarDidNotConverge { n, cap })
}

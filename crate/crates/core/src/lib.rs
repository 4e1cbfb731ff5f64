//! Loop quasi-invariant detection for a small imperative WHILE language.
//!
//! The crate builds data flow graphs of commands as matrices over a
//! three-valued semiring ([`semiring`], [`dfg`]), uses them to compute an
//! invariance degree for each top-level statement of every loop
//! ([`analysis`]), peels loops accordingly ([`transform`]) and checks the
//! result against a reference interpreter ([`interp`], [`harness`]).

pub mod analysis;
pub mod dfg;
pub mod harness;
pub mod interp;
pub mod lang;
pub mod semiring;
pub mod transform;

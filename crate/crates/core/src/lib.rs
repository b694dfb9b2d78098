//! A workbench for cryptographic constant time under compiler-resolved nondeterminism.
//!
//! - [`lang`]: the source language (parser, formatter, validation).
//! - [`trace`]: leakage and I/O events, oracles and compatibility.
//! - [`interp`]: big-step and small-step leakage-instrumented semantics.
//! - [`predict`]: predictors, leakage trees, trace tries.
//! - [`ctcheck`]: brute-force constant-time verdicts.
//! - [`compiler`]: a contract-carrying pipeline down to [`machine`] code.
//! - [`corpus`]: the bundled example programs.

pub mod lang;
pub mod trace;
pub mod interp;
pub mod corpus;
pub mod predict;
pub mod ctcheck;
pub mod machine;
pub mod compiler;

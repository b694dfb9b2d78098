//! The source language: a small Bedrock2-like imperative language over machine words.
//!
//! Addresses are plain words, memory is byte-addressed, and loads live in statements
//! rather than expressions so that evaluation order (and hence leakage order) is fixed.

pub mod ast;
pub mod format;
pub mod parse;
pub mod validate;
pub mod word;

pub use ast::{AccessSize, BinOp, Expr, FnDef, Program, Stmt};
pub use format::{format, format_expr};
pub use parse::{parse, parse_expr, ParseError};
pub use validate::{validate, validate_with, Diagnostic, ValidateOptions};
pub use word::{Width, Word};

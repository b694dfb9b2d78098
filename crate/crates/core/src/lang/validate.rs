//! Static checks: names, arities, allocation sizes and definite assignment.

use super::ast::{Expr, Program, Stmt};
use super::word::{Width, Word};
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Diagnostic {
    UndefinedFunction(String),
    /// A read of a variable that is not definitely assigned at that point.
    UndefinedVariable { func: String, var: String },
    ArityMismatch { callee: String, expected: usize, found: usize, what: &'static str },
    BadAllocSize(Word),
    DuplicateFunction(String),
    DuplicateName { func: String, name: String },
    MissingEntry(String),
    RandomDisabled { func: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UndefinedFunction(g) => write!(f, "call to undefined function `{g}`"),
            Diagnostic::UndefinedVariable { func, var } => {
                write!(f, "in `{func}`: variable `{var}` may be read before it is assigned")
            }
            Diagnostic::ArityMismatch { callee, expected, found, what } => {
                write!(f, "call to `{callee}` passes {found} {what}, expected {expected}")
            }
            Diagnostic::BadAllocSize(n) => write!(f, "stackalloc size {n} is not a positive multiple of the word size"),
            Diagnostic::DuplicateFunction(g) => write!(f, "function `{g}` defined twice"),
            Diagnostic::DuplicateName { func, name } => write!(f, "in `{func}`: name `{name}` bound twice"),
            Diagnostic::MissingEntry(e) => write!(f, "entry function `{e}` is not defined"),
            Diagnostic::RandomDisabled { func } => {
                write!(f, "in `{func}`: `random` requires demo constructs to be enabled")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidateOptions {
    pub width: Width,
    /// Permit the `random as x;` demo construct.
    pub demo_constructs: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { width: Width::W32, demo_constructs: false }
    }
}

/// Validates with default options (W = 32, no demo constructs).
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    validate_with(p, &ValidateOptions::default())
}

pub fn validate_with(p: &Program, opts: &ValidateOptions) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen = BTreeSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            diags.push(Diagnostic::DuplicateFunction(f.name.clone()));
        }
    }
    if p.function(&p.entry).is_none() {
        diags.push(Diagnostic::MissingEntry(p.entry.clone()));
    }
    for f in &p.functions {
        let mut cx = Checker { p, opts, func: &f.name, diags: &mut diags };
        cx.distinct(&f.params);
        cx.distinct(&f.returns);
        let mut defined: BTreeSet<String> = f.params.iter().cloned().collect();
        cx.stmt(&f.body, &mut defined);
        for r in &f.returns {
            if !defined.contains(r) {
                cx.undefined(r);
            }
        }
    }
    diags
}

struct Checker<'a> {
    p: &'a Program,
    opts: &'a ValidateOptions,
    func: &'a str,
    diags: &'a mut Vec<Diagnostic>,
}

impl Checker<'_> {
    fn undefined(&mut self, var: &str) {
        let d = Diagnostic::UndefinedVariable { func: self.func.to_string(), var: var.to_string() };
        if !self.diags.contains(&d) {
            self.diags.push(d);
        }
    }

    fn distinct(&mut self, names: &[String]) {
        let mut seen = BTreeSet::new();
        for n in names {
            if !seen.insert(n) {
                self.diags.push(Diagnostic::DuplicateName { func: self.func.to_string(), name: n.clone() });
            }
        }
    }

    fn expr(&mut self, e: &Expr, defined: &BTreeSet<String>) {
        let mut vs = Vec::new();
        e.vars(&mut vs);
        for v in vs {
            if !defined.contains(&v) {
                self.undefined(&v);
            }
        }
    }

    fn stmt(&mut self, s: &Stmt, defined: &mut BTreeSet<String>) {
        match s {
            Stmt::Skip => {}
            Stmt::Assign(x, e) | Stmt::Load(x, e, _) => {
                self.expr(e, defined);
                defined.insert(x.clone());
            }
            Stmt::Store(a, v, _) => {
                self.expr(v, defined);
                self.expr(a, defined);
            }
            Stmt::StackAlloc { size, var, body } => {
                let wb = self.opts.width.bytes();
                if *size == 0 || *size % wb != 0 {
                    self.diags.push(Diagnostic::BadAllocSize(*size));
                }
                defined.insert(var.clone());
                self.stmt(body, defined);
            }
            Stmt::Random(x) => {
                if !self.opts.demo_constructs {
                    self.diags.push(Diagnostic::RandomDisabled { func: self.func.to_string() });
                }
                defined.insert(x.clone());
            }
            Stmt::Input(x) => {
                defined.insert(x.clone());
            }
            Stmt::Output(e) => self.expr(e, defined),
            Stmt::If(c, t, e) => {
                self.expr(c, defined);
                let mut dt = defined.clone();
                let mut de = defined.clone();
                self.stmt(t, &mut dt);
                self.stmt(e, &mut de);
                *defined = dt.intersection(&de).cloned().collect();
            }
            Stmt::While(c, body) => {
                self.expr(c, defined);
                let mut db = defined.clone();
                self.stmt(body, &mut db);
            }
            Stmt::Call { results, func, args } => {
                for a in args {
                    self.expr(a, defined);
                }
                self.distinct(results);
                match self.p.function(func) {
                    None => self.diags.push(Diagnostic::UndefinedFunction(func.clone())),
                    Some(g) => {
                        if g.params.len() != args.len() {
                            self.diags.push(Diagnostic::ArityMismatch {
                                callee: func.clone(),
                                expected: g.params.len(),
                                found: args.len(),
                                what: "arguments",
                            });
                        }
                        if g.returns.len() != results.len() {
                            self.diags.push(Diagnostic::ArityMismatch {
                                callee: func.clone(),
                                expected: g.returns.len(),
                                found: results.len(),
                                what: "result names",
                            });
                        }
                    }
                }
                defined.extend(results.iter().cloned());
            }
            Stmt::Seq(a, b) => {
                self.stmt(a, defined);
                self.stmt(b, defined);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn diags(src: &str) -> Vec<Diagnostic> {
        validate(&parse(src).unwrap())
    }

    #[test]
    fn undefined_function() {
        assert_eq!(diags("fn main() { g(); }"), vec![Diagnostic::UndefinedFunction("g".into())]);
    }

    #[test]
    fn bad_alloc_size() {
        assert_eq!(diags("fn main() { stackalloc 3 as x { skip; } }"), vec![Diagnostic::BadAllocSize(3)]);
        assert_eq!(diags("fn main() { stackalloc 0 as x { skip; } }"), vec![Diagnostic::BadAllocSize(0)]);
        let p = parse("fn main() { stackalloc 3 as x { skip; } }").unwrap();
        let w8 = ValidateOptions { width: Width::W8, demo_constructs: false };
        assert!(validate_with(&p, &w8).is_empty());
    }

    #[test]
    fn definite_assignment() {
        assert!(diags("fn f(a) -> (r) { if (a) { r = 1; } else { r = 2; } }").is_empty());
        assert_eq!(
            diags("fn f(a) -> (r) { if (a) { r = 1; } }"),
            vec![Diagnostic::UndefinedVariable { func: "f".into(), var: "r".into() }]
        );
        assert_eq!(
            diags("fn f(a) -> (r) { while (a) { r = 1; a = 0; } output(r); r = 0; }"),
            vec![Diagnostic::UndefinedVariable { func: "f".into(), var: "r".into() }]
        );
        assert!(diags("fn f() { stackalloc 4 as p { x = 1; } output(x); output(p); }").is_empty());
    }

    #[test]
    fn arity() {
        let d = diags("fn main() { x = g(1, 2); } fn g(a) -> (b, c) { b = a; c = a; }");
        assert_eq!(d.len(), 2);
        assert!(matches!(&d[0], Diagnostic::ArityMismatch { expected: 1, found: 2, .. }));
        assert!(matches!(&d[1], Diagnostic::ArityMismatch { expected: 2, found: 1, .. }));
    }

    #[test]
    fn random_needs_demo_constructs() {
        let p = parse("fn p() { random as x; output(x); }").unwrap();
        assert_eq!(validate(&p), vec![Diagnostic::RandomDisabled { func: "p".into() }]);
        let demo = ValidateOptions { demo_constructs: true, ..Default::default() };
        assert!(validate_with(&p, &demo).is_empty());
    }

    #[test]
    fn duplicates_and_entry() {
        let d = diags("fn f(a, a) { skip; } fn f() { skip; }");
        assert!(d.contains(&Diagnostic::DuplicateFunction("f".into())));
        assert!(d.contains(&Diagnostic::DuplicateName { func: "f".into(), name: "a".into() }));
        let p = parse("fn f() { skip; }").unwrap().with_entry("main");
        assert_eq!(validate(&p), vec![Diagnostic::MissingEntry("main".into())]);
    }
}

//! Canonical pretty-printer. Output re-parses to the same AST.

use super::ast::{AccessSize, Expr, FnDef, Program, Stmt};
use std::fmt::Write;

pub fn format(p: &Program) -> String {
    let mut out = String::new();
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        format_fn(f, &mut out);
    }
    out
}

fn format_fn(f: &FnDef, out: &mut String) {
    write!(out, "fn {}({})", f.name, f.params.join(", ")).unwrap();
    if !f.returns.is_empty() {
        write!(out, " -> ({})", f.returns.join(", ")).unwrap();
    }
    out.push(' ');
    block(&f.body, 0, out);
    out.push('\n');
}

pub fn format_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(e, true, &mut s);
    s
}

fn expr(e: &Expr, top: bool, out: &mut String) {
    match e {
        Expr::Lit(n) => write!(out, "{n}").unwrap(),
        Expr::Var(x) => out.push_str(x),
        Expr::Bin(op, a, b) => match op.symbol() {
            None => {
                out.push_str("lts(");
                expr(a, true, out);
                out.push_str(", ");
                expr(b, true, out);
                out.push(')');
            }
            Some(sym) => {
                if !top {
                    out.push('(');
                }
                expr(a, false, out);
                write!(out, " {sym} ").unwrap();
                expr(b, false, out);
                if !top {
                    out.push(')');
                }
            }
        },
    }
}

fn is_simple(s: &Stmt) -> bool {
    !matches!(s, Stmt::StackAlloc { .. } | Stmt::If(..) | Stmt::While(..) | Stmt::Seq(..))
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

// A block holding one simple statement stays on one line.
fn block(body: &Stmt, level: usize, out: &mut String) {
    let stmts = body.flatten_seq();
    if stmts.len() == 1 && is_simple(stmts[0]) {
        out.push_str("{ ");
        stmt(stmts[0], level, out);
        out.push_str(" }");
        return;
    }
    out.push_str("{\n");
    for s in stmts {
        indent(level + 1, out);
        stmt(s, level + 1, out);
        out.push('\n');
    }
    indent(level, out);
    out.push('}');
}

fn stmt(s: &Stmt, level: usize, out: &mut String) {
    let load_kw = |sz: &AccessSize| if *sz == AccessSize::Word { "load" } else { "load1" };
    let store_kw = |sz: &AccessSize| if *sz == AccessSize::Word { "store" } else { "store1" };
    match s {
        Stmt::Skip => out.push_str("skip;"),
        Stmt::Assign(x, e) => {
            write!(out, "{x} = ").unwrap();
            expr(e, true, out);
            out.push(';');
        }
        Stmt::Load(x, a, sz) => {
            write!(out, "{x} = {}(", load_kw(sz)).unwrap();
            expr(a, true, out);
            out.push_str(");");
        }
        Stmt::Store(a, v, sz) => {
            write!(out, "{}(", store_kw(sz)).unwrap();
            expr(a, true, out);
            out.push_str(", ");
            expr(v, true, out);
            out.push_str(");");
        }
        Stmt::StackAlloc { size, var, body } => {
            write!(out, "stackalloc {size} as {var} ").unwrap();
            block(body, level, out);
        }
        Stmt::Random(x) => write!(out, "random as {x};").unwrap(),
        Stmt::Input(x) => write!(out, "{x} = input();").unwrap(),
        Stmt::Output(e) => {
            out.push_str("output(");
            expr(e, true, out);
            out.push_str(");");
        }
        Stmt::If(c, t, e) => {
            out.push_str("if (");
            expr(c, true, out);
            out.push_str(") ");
            block(t, level, out);
            if **e != Stmt::Skip {
                out.push_str(" else ");
                block(e, level, out);
            }
        }
        Stmt::While(c, body) => {
            out.push_str("while (");
            expr(c, true, out);
            out.push_str(") ");
            block(body, level, out);
        }
        Stmt::Call { results, func, args } => {
            if !results.is_empty() {
                write!(out, "{} = ", results.join(", ")).unwrap();
            }
            write!(out, "{func}(").unwrap();
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(a, true, out);
            }
            out.push_str(");");
        }
        Stmt::Seq(..) => block(s, level, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn canonical_skip() {
        let p = Program::new(vec![FnDef {
            name: "main".into(),
            params: vec![],
            returns: vec![],
            body: Stmt::Skip,
        }]);
        assert_eq!(format(&p).trim_end(), "fn main() { skip; }");
    }

    #[test]
    fn nested_blocks_round_trip() {
        let src = "fn f(a, b) -> (r) {
  r = 0;
  if (a < b) {
    while (a) { a = a - 1; }
  } else { r = lts(a, b) + ((a / b) % 3); }
}
";
        let p = parse(src).unwrap();
        let text = format(&p);
        assert_eq!(parse(&text).unwrap(), p);
        assert_eq!(format(&parse(&text).unwrap()), text);
    }

    #[test]
    fn empty_else_is_omitted() {
        let p = parse("fn f(x) { if (x) { output(x); } else { } }").unwrap();
        assert_eq!(format(&p), "fn f(x) {\n  if (x) { output(x); }\n}\n");
    }
}

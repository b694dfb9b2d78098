//! Source to three-address form. Temporaries are named `$0`, `$1`, … by nesting depth
//! within one statement, so they are reused across statements.

use super::flat::{FlatFn, FlatProgram, FlatStmt};
use super::CompileError;
use crate::lang::{validate, Expr, Program, Stmt};

fn temp(i: usize) -> String {
    format!("${i}")
}

/// Emits code computing `e` into `target`, using temporaries from `next` upward.
fn expr_into(e: &Expr, target: &str, next: usize, out: &mut Vec<FlatStmt>) {
    match e {
        Expr::Lit(k) => out.push(FlatStmt::Const(target.to_string(), *k)),
        Expr::Var(y) => out.push(FlatStmt::Copy(target.to_string(), y.clone())),
        Expr::Bin(op, a, b) => {
            let ra = operand(a, next, out);
            let rb = operand(b, next + 1, out);
            out.push(FlatStmt::Op(target.to_string(), *op, ra, rb));
        }
    }
}

/// Returns a variable holding `e`; compound values land in temporary `t`.
fn operand(e: &Expr, t: usize, out: &mut Vec<FlatStmt>) -> String {
    match e {
        Expr::Var(y) => y.clone(),
        _ => {
            let name = temp(t);
            expr_into(e, &name, t + 1, out);
            name
        }
    }
}

fn stmt(s: &Stmt, out: &mut Vec<FlatStmt>) -> Result<(), CompileError> {
    match s {
        Stmt::Skip => {}
        Stmt::Seq(a, b) => {
            stmt(a, out)?;
            stmt(b, out)?;
        }
        Stmt::Assign(x, e) => expr_into(e, x, 0, out),
        Stmt::Load(x, a, sz) => {
            let ra = operand(a, 0, out);
            out.push(FlatStmt::Load(x.clone(), ra, *sz));
        }
        Stmt::Store(a, v, sz) => {
            // Value first, then address, as the source evaluates them.
            let rv = operand(v, 0, out);
            let ra = operand(a, 1, out);
            out.push(FlatStmt::Store(ra, rv, *sz));
        }
        Stmt::StackAlloc { size, var, body } => {
            out.push(FlatStmt::StackAlloc { size: *size, var: var.clone(), body: block(body)? });
        }
        Stmt::Random(_) => return Err(CompileError::Unsupported("random has no lowering".into())),
        Stmt::Input(x) => out.push(FlatStmt::Input(x.clone())),
        Stmt::Output(e) => {
            let r = operand(e, 0, out);
            out.push(FlatStmt::Output(r));
        }
        Stmt::If(c, a, b) => {
            let rc = operand(c, 0, out);
            out.push(FlatStmt::If(rc, block(a)?, block(b)?));
        }
        Stmt::While(c, body) => {
            let mut prelude = Vec::new();
            let rc = operand(c, 0, &mut prelude);
            out.push(FlatStmt::While { prelude, cond: rc, body: block(body)? });
        }
        Stmt::Call { results, func, args } => {
            let names = args.iter().enumerate().map(|(i, a)| operand(a, i, out)).collect();
            out.push(FlatStmt::Call { results: results.clone(), func: func.clone(), args: names });
        }
    }
    Ok(())
}

fn block(s: &Stmt) -> Result<Vec<FlatStmt>, CompileError> {
    let mut out = Vec::new();
    stmt(s, &mut out)?;
    Ok(out)
}

/// Flattens a valid program; rejects programs that fail validation or use `random`.
pub fn flatten_program(p: &Program) -> Result<FlatProgram, CompileError> {
    let diags = validate(p);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(CompileError::Invalid(msgs.join("; ")));
    }
    let functions = p
        .functions
        .iter()
        .map(|f| {
            Ok(FlatFn { name: f.name.clone(), params: f.params.clone(), returns: f.returns.clone(), body: block(&f.body)? })
        })
        .collect::<Result<Vec<_>, CompileError>>()?;
    Ok(FlatProgram { functions, entry: p.entry.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse, BinOp};

    #[test]
    fn nested_expression_uses_a_temp() {
        let p = parse("fn main(a, b, c) -> (x) { x = (a + b) + c; }").unwrap();
        let fp = flatten_program(&p).unwrap();
        assert_eq!(
            fp.functions[0].body,
            vec![
                FlatStmt::Op("$0".into(), BinOp::Add, "a".into(), "b".into()),
                FlatStmt::Op("x".into(), BinOp::Add, "$0".into(), "c".into()),
            ]
        );
    }

    #[test]
    fn store_computes_value_before_address() {
        let p = parse("fn main(a) { store(a + 4, 7); }").unwrap();
        let fp = flatten_program(&p).unwrap();
        assert_eq!(
            fp.functions[0].body,
            vec![
                FlatStmt::Const("$0".into(), 7),
                FlatStmt::Const("$3".into(), 4),
                FlatStmt::Op("$1".into(), BinOp::Add, "a".into(), "$3".into()),
                FlatStmt::Store("$1".into(), "$0".into(), crate::lang::AccessSize::Word),
            ]
        );
    }

    #[test]
    fn random_is_rejected() {
        let p = parse("fn main() { random as x; }").unwrap();
        assert!(matches!(flatten_program(&p), Err(CompileError::Invalid(_) | CompileError::Unsupported(_))));
    }
}

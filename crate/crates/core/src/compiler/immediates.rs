//! Folds operands known to hold a constant into immediate forms.

use super::flat::{FlatFn, FlatProgram, FlatStmt};
use crate::lang::{BinOp, Word};
use std::collections::{BTreeMap, BTreeSet};

type Consts = BTreeMap<String, Word>;

fn commutes(op: BinOp) -> bool {
    matches!(op, BinOp::Add | BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor | BinOp::Eq | BinOp::Ne)
}

fn defined(b: &[FlatStmt], out: &mut BTreeSet<String>) {
    for s in b {
        if let Some(x) = s.def() {
            out.insert(x.to_string());
        }
        match s {
            FlatStmt::StackAlloc { var, body, .. } => {
                out.insert(var.clone());
                defined(body, out);
            }
            FlatStmt::If(_, a, b) => {
                defined(a, out);
                defined(b, out);
            }
            FlatStmt::While { prelude, body, .. } => {
                defined(prelude, out);
                defined(body, out);
            }
            FlatStmt::Call { results, .. } => out.extend(results.iter().cloned()),
            _ => {}
        }
    }
}

fn fold_block(b: &[FlatStmt], env: &mut Consts) -> Vec<FlatStmt> {
    b.iter().map(|s| fold(s, env)).collect()
}

fn fold(s: &FlatStmt, env: &mut Consts) -> FlatStmt {
    let out = match s {
        FlatStmt::Const(x, k) => {
            env.insert(x.clone(), *k);
            return s.clone();
        }
        FlatStmt::Copy(x, y) => match env.get(y).copied() {
            Some(k) => {
                env.insert(x.clone(), k);
                return FlatStmt::Const(x.clone(), k);
            }
            None => s.clone(),
        },
        FlatStmt::Op(x, op, y, z) => match (env.get(y).copied(), env.get(z).copied()) {
            (_, Some(k)) => FlatStmt::OpImm(x.clone(), *op, y.clone(), k),
            (Some(k), None) if commutes(*op) => FlatStmt::OpImm(x.clone(), *op, z.clone(), k),
            _ => s.clone(),
        },
        FlatStmt::StackAlloc { size, var, body } => {
            env.remove(var);
            let body = fold_block(body, env);
            return FlatStmt::StackAlloc { size: *size, var: var.clone(), body };
        }
        FlatStmt::If(c, a, b) => {
            let mut ea = env.clone();
            let mut eb = env.clone();
            let a = fold_block(a, &mut ea);
            let b = fold_block(b, &mut eb);
            *env = ea.into_iter().filter(|(x, k)| eb.get(x) == Some(k)).collect();
            return FlatStmt::If(c.clone(), a, b);
        }
        FlatStmt::While { prelude, cond, body } => {
            let mut changed = BTreeSet::new();
            defined(prelude, &mut changed);
            defined(body, &mut changed);
            env.retain(|x, _| !changed.contains(x));
            let prelude = fold_block(prelude, env);
            let mut eb = env.clone();
            let body = fold_block(body, &mut eb);
            return FlatStmt::While { prelude, cond: cond.clone(), body };
        }
        FlatStmt::Call { results, .. } => {
            for r in results {
                env.remove(r);
            }
            return s.clone();
        }
        _ => s.clone(),
    };
    if let Some(x) = out.def() {
        env.remove(x);
    }
    out
}

pub fn fold_immediates(p: &FlatProgram) -> FlatProgram {
    let functions = p
        .functions
        .iter()
        .map(|f| FlatFn { body: fold_block(&f.body, &mut Consts::new()), ..f.clone() })
        .collect();
    FlatProgram { functions, entry: p.entry.clone() }
}

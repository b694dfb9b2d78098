//! Three-address intermediate form. Every operand is a variable or an immediate.

use crate::lang::{AccessSize, BinOp, Expr, FnDef, Program, Stmt, Word};
use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlatStmt {
    Skip,
    Const(String, Word),
    Copy(String, String),
    Op(String, BinOp, String, String),
    OpImm(String, BinOp, String, Word),
    Load(String, String, AccessSize),
    /// `Store(address, value, size)`
    Store(String, String, AccessSize),
    StackAlloc {
        size: Word,
        var: String,
        body: Vec<FlatStmt>,
    },
    Input(String),
    Output(String),
    If(String, Vec<FlatStmt>, Vec<FlatStmt>),
    /// Runs `prelude`, then tests `cond`; the prelude reruns before every test.
    While {
        prelude: Vec<FlatStmt>,
        cond: String,
        body: Vec<FlatStmt>,
    },
    Call {
        results: Vec<String>,
        func: String,
        args: Vec<String>,
    },
}

impl FlatStmt {
    /// Number of statements in this subtree, counting itself; used for pre-order ids.
    pub fn count(&self) -> usize {
        1 + match self {
            FlatStmt::StackAlloc { body, .. } => block_count(body),
            FlatStmt::If(_, a, b) => block_count(a) + block_count(b),
            FlatStmt::While { prelude, body, .. } => block_count(prelude) + block_count(body),
            _ => 0,
        }
    }

    /// Variable defined by a primitive statement.
    pub fn def(&self) -> Option<&str> {
        match self {
            FlatStmt::Const(x, _)
            | FlatStmt::Copy(x, _)
            | FlatStmt::Op(x, ..)
            | FlatStmt::OpImm(x, ..)
            | FlatStmt::Load(x, ..)
            | FlatStmt::Input(x) => Some(x),
            _ => None,
        }
    }

    /// Variables read by a primitive statement (conditions and call arguments included).
    pub fn uses(&self) -> Vec<&str> {
        match self {
            FlatStmt::Copy(_, y) | FlatStmt::OpImm(_, _, y, _) | FlatStmt::Load(_, y, _) | FlatStmt::Output(y) => {
                vec![y]
            }
            FlatStmt::Op(_, _, y, z) | FlatStmt::Store(y, z, _) => vec![y, z],
            FlatStmt::If(c, ..) | FlatStmt::While { cond: c, .. } => vec![c],
            FlatStmt::Call { args, .. } => args.iter().map(String::as_str).collect(),
            _ => vec![],
        }
    }
}

pub fn block_count(b: &[FlatStmt]) -> usize {
    b.iter().map(FlatStmt::count).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlatFn {
    pub name: String,
    pub params: Vec<String>,
    pub returns: Vec<String>,
    pub body: Vec<FlatStmt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlatProgram {
    pub functions: Vec<FlatFn>,
    pub entry: String,
}

impl FlatProgram {
    pub fn function(&self, name: &str) -> Option<&FlatFn> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// The equivalent source program, used to execute flat code with the source
    /// interpreters. Leakage is preserved statement for statement.
    pub fn to_program(&self) -> Program {
        let functions = self
            .functions
            .iter()
            .map(|f| FnDef {
                name: f.name.clone(),
                params: f.params.clone(),
                returns: f.returns.clone(),
                body: lower_block(&f.body),
            })
            .collect();
        Program { functions, entry: self.entry.clone() }
    }
}

fn v(x: &str) -> Expr {
    Expr::var(x)
}

fn lower_block(b: &[FlatStmt]) -> Stmt {
    Stmt::seq(b.iter().map(lower).collect())
}

fn lower(s: &FlatStmt) -> Stmt {
    match s {
        FlatStmt::Skip => Stmt::Skip,
        FlatStmt::Const(x, k) => Stmt::Assign(x.clone(), Expr::Lit(*k)),
        FlatStmt::Copy(x, y) => Stmt::Assign(x.clone(), v(y)),
        FlatStmt::Op(x, op, y, z) => Stmt::Assign(x.clone(), Expr::bin(*op, v(y), v(z))),
        FlatStmt::OpImm(x, op, y, k) => Stmt::Assign(x.clone(), Expr::bin(*op, v(y), Expr::Lit(*k))),
        FlatStmt::Load(x, a, sz) => Stmt::Load(x.clone(), v(a), *sz),
        FlatStmt::Store(a, val, sz) => Stmt::Store(v(a), v(val), *sz),
        FlatStmt::StackAlloc { size, var, body } => {
            Stmt::StackAlloc { size: *size, var: var.clone(), body: Box::new(lower_block(body)) }
        }
        FlatStmt::Input(x) => Stmt::Input(x.clone()),
        FlatStmt::Output(y) => Stmt::Output(v(y)),
        FlatStmt::If(c, a, b) => Stmt::If(v(c), Box::new(lower_block(a)), Box::new(lower_block(b))),
        FlatStmt::While { prelude, cond, body } => {
            let mut looped: Vec<Stmt> = body.iter().map(lower).collect();
            looped.extend(prelude.iter().map(lower));
            let mut out: Vec<Stmt> = prelude.iter().map(lower).collect();
            out.push(Stmt::While(v(cond), Box::new(Stmt::seq(looped))));
            Stmt::seq(out)
        }
        FlatStmt::Call { results, func, args } => {
            Stmt::Call { results: results.clone(), func: func.clone(), args: args.iter().map(|a| v(a)).collect() }
        }
    }
}

fn op_text(op: BinOp) -> String {
    op.symbol().map(str::to_string).unwrap_or_else(|| op.name().to_string())
}

fn size_suffix(sz: AccessSize) -> &'static str {
    match sz {
        AccessSize::Byte => "1",
        AccessSize::Word => "",
    }
}

fn write_block(out: &mut String, b: &[FlatStmt], indent: usize) {
    let pad = "    ".repeat(indent);
    for s in b {
        let _ = match s {
            FlatStmt::Skip => writeln!(out, "{pad}skip"),
            FlatStmt::Const(x, k) => writeln!(out, "{pad}{x} = {k}"),
            FlatStmt::Copy(x, y) => writeln!(out, "{pad}{x} = {y}"),
            FlatStmt::Op(x, op, y, z) => writeln!(out, "{pad}{x} = {y} {} {z}", op_text(*op)),
            FlatStmt::OpImm(x, op, y, k) => writeln!(out, "{pad}{x} = {y} {} #{k}", op_text(*op)),
            FlatStmt::Load(x, a, sz) => writeln!(out, "{pad}{x} = load{}({a})", size_suffix(*sz)),
            FlatStmt::Store(a, val, sz) => writeln!(out, "{pad}store{}({a}, {val})", size_suffix(*sz)),
            FlatStmt::Input(x) => writeln!(out, "{pad}{x} = input()"),
            FlatStmt::Output(y) => writeln!(out, "{pad}output({y})"),
            FlatStmt::StackAlloc { size, var, body } => {
                let _ = writeln!(out, "{pad}stackalloc {size} as {var}:");
                write_block(out, body, indent + 1);
                Ok(())
            }
            FlatStmt::If(c, a, b) => {
                let _ = writeln!(out, "{pad}if {c}:");
                write_block(out, a, indent + 1);
                let _ = writeln!(out, "{pad}else:");
                write_block(out, b, indent + 1);
                Ok(())
            }
            FlatStmt::While { prelude, cond, body } => {
                let _ = writeln!(out, "{pad}loop:");
                write_block(out, prelude, indent + 1);
                let _ = writeln!(out, "{pad}while {cond}:");
                write_block(out, body, indent + 1);
                Ok(())
            }
            FlatStmt::Call { results, func, args } => {
                if results.is_empty() {
                    writeln!(out, "{pad}{func}({})", args.join(", "))
                } else {
                    writeln!(out, "{pad}{} = {func}({})", results.join(", "), args.join(", "))
                }
            }
        };
    }
}

impl fmt::Display for FlatProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for func in &self.functions {
            let _ = writeln!(out, "fn {}({}) -> ({}):", func.name, func.params.join(", "), func.returns.join(", "));
            write_block(&mut out, &func.body, 1);
        }
        f.write_str(&out)
    }
}

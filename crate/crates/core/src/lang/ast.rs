use super::word::{Width, Word};
use serde::{Deserialize, Serialize};

/// Binary operators. `Divu` and `Remu` are the only ones that leak.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Divu,
    Remu,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Eq,
    Ne,
    Ltu,
    Lts,
}

impl BinOp {
    pub const ALL: [BinOp; 14] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Divu,
        BinOp::Remu,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Ltu,
        BinOp::Lts,
    ];

    pub fn eval(self, w: Width, a: Word, b: Word) -> Word {
        match self {
            BinOp::Add => w.add(a, b),
            BinOp::Sub => w.sub(a, b),
            BinOp::Mul => w.mul(a, b),
            BinOp::Divu => w.divu(a, b),
            BinOp::Remu => w.remu(a, b),
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => w.shl(a, b),
            BinOp::Shr => w.shr(a, b),
            BinOp::Eq => (a == b) as Word,
            BinOp::Ne => (a != b) as Word,
            BinOp::Ltu => (a < b) as Word,
            BinOp::Lts => w.lts(a, b) as Word,
        }
    }

    /// Whether evaluating this operator appends `[Leak lhs, Leak rhs]`.
    pub fn leaks_operands(self) -> bool {
        matches!(self, BinOp::Divu | BinOp::Remu)
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Ltu | BinOp::Lts)
    }

    /// Infix spelling; `Lts` has none and is written `lts(a, b)`.
    pub fn symbol(self) -> Option<&'static str> {
        Some(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Divu => "/",
            BinOp::Remu => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Ltu => "<",
            BinOp::Lts => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Divu => "divu",
            BinOp::Remu => "remu",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Eq => "eq",
            BinOp::Ne => "ne",
            BinOp::Ltu => "ltu",
            BinOp::Lts => "lts",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Lit(Word),
    Var(String),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Variables read by the expression, in evaluation order (with repeats).
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(x) => out.push(x.clone()),
            Expr::Bin(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        match self {
            Expr::Lit(_) => false,
            Expr::Var(y) => y == x,
            Expr::Bin(_, a, b) => a.mentions(x) || b.mentions(x),
        }
    }

    /// Number of leak events evaluation appends (two per division node).
    pub fn leak_count(&self) -> usize {
        match self {
            Expr::Bin(op, a, b) => a.leak_count() + b.leak_count() + if op.leaks_operands() { 2 } else { 0 },
            _ => 0,
        }
    }
}

/// Access size of a load or store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessSize {
    Byte,
    Word,
}

impl AccessSize {
    pub fn bytes(self, w: Width) -> u32 {
        match self {
            AccessSize::Byte => 1,
            AccessSize::Word => w.bytes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stmt {
    Skip,
    Assign(String, Expr),
    Load(String, Expr, AccessSize),
    /// `Store(address, value, size)`
    Store(Expr, Expr, AccessSize),
    StackAlloc {
        size: Word,
        var: String,
        body: Box<Stmt>,
    },
    Random(String),
    Input(String),
    Output(Expr),
    If(Expr, Box<Stmt>, Box<Stmt>),
    While(Expr, Box<Stmt>),
    Call {
        results: Vec<String>,
        func: String,
        args: Vec<Expr>,
    },
    Seq(Box<Stmt>, Box<Stmt>),
}

impl Stmt {
    /// Right-nested sequence; the empty list is `Skip`.
    pub fn seq(mut stmts: Vec<Stmt>) -> Stmt {
        let Some(mut acc) = stmts.pop() else {
            return Stmt::Skip;
        };
        while let Some(s) = stmts.pop() {
            acc = Stmt::Seq(Box::new(s), Box::new(acc));
        }
        acc
    }

    /// Flattens nested `Seq`s into a statement list.
    pub fn flatten_seq(&self) -> Vec<&Stmt> {
        let mut out = Vec::new();
        fn go<'a>(s: &'a Stmt, out: &mut Vec<&'a Stmt>) {
            match s {
                Stmt::Seq(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                _ => out.push(s),
            }
        }
        go(self, &mut out);
        out
    }

    /// Whether any `StackAlloc` or `Random` occurs in the statement.
    pub fn has_compiler_nondet(&self) -> bool {
        match self {
            Stmt::StackAlloc { .. } | Stmt::Random(_) => true,
            Stmt::If(_, a, b) | Stmt::Seq(a, b) => a.has_compiler_nondet() || b.has_compiler_nondet(),
            Stmt::While(_, b) => b.has_compiler_nondet(),
            _ => false,
        }
    }

    pub fn calls(&self, out: &mut Vec<String>) {
        match self {
            Stmt::Call { func, .. } => out.push(func.clone()),
            Stmt::If(_, a, b) | Stmt::Seq(a, b) => {
                a.calls(out);
                b.calls(out);
            }
            Stmt::While(_, b) => b.calls(out),
            Stmt::StackAlloc { body, .. } => body.calls(out),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FnDef {
    pub name: String,
    pub params: Vec<String>,
    pub returns: Vec<String>,
    pub body: Stmt,
}

/// Functions in definition order plus the designated entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub functions: Vec<FnDef>,
    pub entry: String,
}

impl Program {
    /// Builds a program whose entry is `main` if defined, else the first function.
    pub fn new(functions: Vec<FnDef>) -> Program {
        let entry = if functions.iter().any(|f| f.name == "main") {
            "main".to_string()
        } else {
            functions.first().map(|f| f.name.clone()).unwrap_or_default()
        };
        Program { functions, entry }
    }

    pub fn function(&self, name: &str) -> Option<&FnDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry_fn(&self) -> Option<&FnDef> {
        self.function(&self.entry)
    }

    /// Same functions, different entry.
    pub fn with_entry(mut self, entry: &str) -> Program {
        self.entry = entry.to_string();
        self
    }

    /// Functions reachable from the entry through calls, entry first.
    pub fn reachable(&self) -> Vec<&FnDef> {
        let mut seen: Vec<&FnDef> = Vec::new();
        let mut todo = vec![self.entry.clone()];
        while let Some(name) = todo.pop() {
            if seen.iter().any(|f| f.name == name) {
                continue;
            }
            if let Some(f) = self.function(&name) {
                seen.push(f);
                let mut callees = Vec::new();
                f.body.calls(&mut callees);
                todo.extend(callees.into_iter().rev());
            }
        }
        seen
    }

    /// Whether any reachable function contains `StackAlloc` or `Random`.
    pub fn has_compiler_nondet(&self) -> bool {
        self.reachable().iter().any(|f| f.body.has_compiler_nondet())
    }
}

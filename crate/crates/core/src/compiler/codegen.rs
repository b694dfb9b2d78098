//! Code generation to the register machine.
//!
//! Each variable lives in a callee-saved register. A function's frame holds its stack
//! allocations at the bottom (`sp + stackoffset - n`, as allocations nest), then the saved
//! return address and registers. Arguments and results travel in `a0..a7`.
//!
//! Conditions compile to `sltu t0, x0, c; blt x0, t0, …` so the branch leaks exactly the
//! source's condition bit. Comparisons use branch-free `slt`/`sltu` sequences.

use super::flat::{FlatFn, FlatProgram, FlatStmt};
use super::{CompileError, ReplayError};
use crate::lang::{AccessSize, BinOp, Width, Word};
use crate::machine::{
    instr_leakage, FunctionLayout, Instr, MachineEvent, MachineProgram, MachineTrace, Reg, StackLayout, A0, ARG_REGS,
    RA, SP, T0, T1, T2, ZERO,
};
use crate::trace::LeakEvent;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Registers available to variables.
const POOL: [Reg; 18] = [8, 9, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 3, 4];

/// How the trace-guided walk treats an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    /// Leakage independent of data.
    Plain,
    /// `sp`-relative frame access.
    Frame,
    /// A source load or store; its address comes from the source trace.
    Src,
    /// A source division; both operands come from the source trace.
    Div,
    /// A source branch; the bit comes from the source trace.
    Branch,
    /// A source stack allocation; consumes the source's allocation answer.
    Alloc,
    Call,
    Ret,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineLayout {
    /// Position of the first instruction.
    pub base: Word,
    pub stack: StackLayout,
}

impl Default for MachineLayout {
    fn default() -> Self {
        MachineLayout { base: 4096, stack: StackLayout::default() }
    }
}

#[derive(Clone, Debug)]
pub struct CompiledMachine {
    pub program: MachineProgram,
    pub tags: Vec<Tag>,
    pub layout: MachineLayout,
}

struct Emit {
    instr: Instr,
    tag: Tag,
    callee: Option<String>,
}

fn e(instr: Instr, tag: Tag) -> Emit {
    Emit { instr, tag, callee: None }
}

fn alloc_depth(b: &[FlatStmt]) -> Word {
    b.iter()
        .map(|s| match s {
            FlatStmt::StackAlloc { size, body, .. } => size + alloc_depth(body),
            FlatStmt::If(_, a, b) => alloc_depth(a).max(alloc_depth(b)),
            FlatStmt::While { prelude, body, .. } => alloc_depth(prelude).max(alloc_depth(body)),
            _ => 0,
        })
        .max()
        .unwrap_or(0)
}

fn collect_vars(b: &[FlatStmt], out: &mut Vec<String>) {
    let add = |x: &str, out: &mut Vec<String>| {
        if !out.iter().any(|y| y == x) {
            out.push(x.to_string());
        }
    };
    for s in b {
        if let Some(x) = s.def() {
            add(x, out);
        }
        for u in s.uses() {
            add(u, out);
        }
        match s {
            FlatStmt::StackAlloc { var, body, .. } => {
                add(var, out);
                collect_vars(body, out);
            }
            FlatStmt::If(_, a, b) => {
                collect_vars(a, out);
                collect_vars(b, out);
            }
            FlatStmt::While { prelude, body, .. } => {
                collect_vars(prelude, out);
                collect_vars(body, out);
            }
            FlatStmt::Call { results, .. } => {
                for r in results {
                    add(r, out);
                }
            }
            _ => {}
        }
    }
}

struct FnGen<'a> {
    program: &'a FlatProgram,
    width: Width,
    regs: BTreeMap<String, Reg>,
}

impl FnGen<'_> {
    fn r(&self, x: &str) -> Reg {
        self.regs[x]
    }

    fn imm(&self, v: i64) -> Word {
        self.width.from_i64(v)
    }

    fn op(&self, rd: Reg, op: BinOp, a: Reg, b: Reg, out: &mut Vec<Emit>) {
        use Instr::*;
        let (rs1, rs2) = (a, b);
        let i = match op {
            BinOp::Add => Add { rd, rs1, rs2 },
            BinOp::Sub => Sub { rd, rs1, rs2 },
            BinOp::Mul => Mul { rd, rs1, rs2 },
            BinOp::And => And { rd, rs1, rs2 },
            BinOp::Or => Or { rd, rs1, rs2 },
            BinOp::Xor => Xor { rd, rs1, rs2 },
            BinOp::Shl => Sll { rd, rs1, rs2 },
            BinOp::Shr => Srl { rd, rs1, rs2 },
            BinOp::Ltu => Sltu { rd, rs1, rs2 },
            BinOp::Lts => Slt { rd, rs1, rs2 },
            BinOp::Divu => return out.push(e(Divu { rd, rs1, rs2 }, Tag::Div)),
            BinOp::Remu => return out.push(e(Remu { rd, rs1, rs2 }, Tag::Div)),
            BinOp::Eq => {
                out.push(e(Xor { rd: T0, rs1, rs2 }, Tag::Plain));
                out.push(e(Addi { rd: T2, rs: ZERO, imm: 1 }, Tag::Plain));
                Sltu { rd, rs1: T0, rs2: T2 }
            }
            BinOp::Ne => {
                out.push(e(Xor { rd: T0, rs1, rs2 }, Tag::Plain));
                Sltu { rd, rs1: ZERO, rs2: T0 }
            }
        };
        out.push(e(i, Tag::Plain));
    }

    fn block(&self, b: &[FlatStmt], stackoffset: Word) -> Result<Vec<Emit>, CompileError> {
        let mut out = Vec::new();
        for s in b {
            self.stmt(s, stackoffset, &mut out)?;
        }
        Ok(out)
    }

    fn stmt(&self, s: &FlatStmt, stackoffset: Word, out: &mut Vec<Emit>) -> Result<(), CompileError> {
        use Instr::*;
        match s {
            FlatStmt::Skip => {}
            FlatStmt::Const(x, k) => out.push(e(Addi { rd: self.r(x), rs: ZERO, imm: *k }, Tag::Plain)),
            FlatStmt::Copy(x, y) => out.push(e(Addi { rd: self.r(x), rs: self.r(y), imm: 0 }, Tag::Plain)),
            FlatStmt::Op(x, op, y, z) => self.op(self.r(x), *op, self.r(y), self.r(z), out),
            FlatStmt::OpImm(x, BinOp::Add, y, k) => out.push(e(Addi { rd: self.r(x), rs: self.r(y), imm: *k }, Tag::Plain)),
            FlatStmt::OpImm(x, op, y, k) => {
                out.push(e(Addi { rd: T1, rs: ZERO, imm: *k }, Tag::Plain));
                self.op(self.r(x), *op, self.r(y), T1, out);
            }
            FlatStmt::Load(x, a, sz) => {
                let (rd, rs1) = (self.r(x), self.r(a));
                let i = match sz {
                    AccessSize::Word => Lw { rd, rs1, imm: 0 },
                    AccessSize::Byte => Lb { rd, rs1, imm: 0 },
                };
                out.push(e(i, Tag::Src));
            }
            FlatStmt::Store(a, v, sz) => {
                let (rs1, rs2) = (self.r(a), self.r(v));
                let i = match sz {
                    AccessSize::Word => Sw { rs2, rs1, imm: 0 },
                    AccessSize::Byte => Sb { rs2, rs1, imm: 0 },
                };
                out.push(e(i, Tag::Src));
            }
            FlatStmt::StackAlloc { size, var, body } => {
                let so = stackoffset - size;
                out.push(e(Addi { rd: self.r(var), rs: SP, imm: so }, Tag::Alloc));
                out.extend(self.block(body, so)?);
            }
            FlatStmt::Input(x) => out.push(e(EIn { rd: self.r(x) }, Tag::Plain)),
            FlatStmt::Output(y) => out.push(e(EOut { rs: self.r(y) }, Tag::Plain)),
            FlatStmt::If(c, a, b) => {
                let ca = self.block(a, stackoffset)?;
                let cb = self.block(b, stackoffset)?;
                out.push(e(Sltu { rd: T0, rs1: ZERO, rs2: self.r(c) }, Tag::Plain));
                out.push(e(Blt { rs1: ZERO, rs2: T0, off: 4 * (cb.len() as i32 + 2) }, Tag::Branch));
                out.extend(cb);
                out.push(e(Jal { rd: ZERO, off: 4 * (ca.len() as i32 + 1) }, Tag::Plain));
                out.extend(ca);
            }
            FlatStmt::While { prelude, cond, body } => {
                let cp = self.block(prelude, stackoffset)?;
                let cb = self.block(body, stackoffset)?;
                let (p, n) = (cp.len() as i32, cb.len() as i32);
                out.extend(cp);
                out.push(e(Sltu { rd: T0, rs1: ZERO, rs2: self.r(cond) }, Tag::Plain));
                out.push(e(Blt { rs1: ZERO, rs2: T0, off: 8 }, Tag::Branch));
                out.push(e(Jal { rd: ZERO, off: 4 * (n + 2) }, Tag::Plain));
                out.extend(cb);
                out.push(e(Jal { rd: ZERO, off: -4 * (p + n + 3) }, Tag::Plain));
            }
            FlatStmt::Call { results, func, args } => {
                let callee = self
                    .program
                    .function(func)
                    .ok_or_else(|| CompileError::Invalid(format!("call to undefined function {func}")))?;
                if callee.params.len() != args.len() || callee.returns.len() != results.len() {
                    return Err(CompileError::Invalid(format!("arity mismatch calling {func}")));
                }
                for (i, a) in args.iter().enumerate() {
                    out.push(e(Addi { rd: A0 + i as u8, rs: self.r(a), imm: 0 }, Tag::Plain));
                }
                out.push(Emit { instr: Jal { rd: RA, off: 0 }, tag: Tag::Call, callee: Some(func.clone()) });
                for (j, r) in results.iter().enumerate() {
                    out.push(e(Addi { rd: self.r(r), rs: A0 + j as u8, imm: 0 }, Tag::Plain));
                }
            }
        }
        Ok(())
    }
}

fn compile_fn(p: &FlatProgram, f: &FlatFn, width: Width) -> Result<(Vec<Emit>, Word), CompileError> {
    use Instr::*;
    if f.params.len() > ARG_REGS || f.returns.len() > ARG_REGS {
        return Err(CompileError::Unsupported(format!("{}: more than {ARG_REGS} parameters or results", f.name)));
    }
    let mut vars: Vec<String> = f.params.iter().chain(&f.returns).cloned().collect();
    vars.dedup();
    collect_vars(&f.body, &mut vars);
    let mut uniq: Vec<String> = Vec::new();
    for v in vars {
        if !uniq.contains(&v) {
            uniq.push(v);
        }
    }
    if uniq.len() > POOL.len() {
        return Err(CompileError::Unsupported(format!(
            "{}: {} variables exceed the {} available registers",
            f.name,
            uniq.len(),
            POOL.len()
        )));
    }
    let regs: BTreeMap<String, Reg> = uniq.iter().cloned().zip(POOL).collect();
    let saved: Vec<Reg> = POOL[..uniq.len()].to_vec();
    let g = FnGen { program: p, width, regs };
    let wb = width.bytes();
    let n = alloc_depth(&f.body);
    let frame = n + wb * (1 + saved.len() as Word);
    let mut out = vec![e(Addi { rd: SP, rs: SP, imm: g.imm(-(frame as i64)) }, Tag::Plain)];
    out.push(e(Sw { rs2: RA, rs1: SP, imm: n }, Tag::Frame));
    for (i, r) in saved.iter().enumerate() {
        out.push(e(Sw { rs2: *r, rs1: SP, imm: n + wb * (1 + i as Word) }, Tag::Frame));
    }
    for (i, x) in f.params.iter().enumerate() {
        out.push(e(Addi { rd: g.r(x), rs: A0 + i as u8, imm: 0 }, Tag::Plain));
    }
    out.extend(g.block(&f.body, n)?);
    for (j, x) in f.returns.iter().enumerate() {
        out.push(e(Addi { rd: A0 + j as u8, rs: g.r(x), imm: 0 }, Tag::Plain));
    }
    out.push(e(Lw { rd: RA, rs1: SP, imm: n }, Tag::Frame));
    for (i, r) in saved.iter().enumerate() {
        out.push(e(Lw { rd: *r, rs1: SP, imm: n + wb * (1 + i as Word) }, Tag::Frame));
    }
    out.push(e(Addi { rd: SP, rs: SP, imm: frame }, Tag::Plain));
    out.push(e(Jalr { rd: ZERO, rs1: RA, imm: 0 }, Tag::Ret));
    Ok((out, frame))
}

/// Compiles every function, laid out in definition order from `layout.base`.
pub fn generate(p: &FlatProgram, width: Width, layout: MachineLayout) -> Result<CompiledMachine, CompileError> {
    if p.function(&p.entry).is_none() {
        return Err(CompileError::Invalid(format!("entry function {} is undefined", p.entry)));
    }
    let mut bodies = Vec::new();
    let mut functions = Vec::new();
    let mut at = layout.base;
    for f in &p.functions {
        let (code, frame_size) = compile_fn(p, f, width)?;
        functions.push(FunctionLayout {
            name: f.name.clone(),
            position: at,
            frame_size,
            params: f.params.len(),
            returns: f.returns.len(),
        });
        at += 4 * code.len() as Word;
        bodies.push(code);
    }
    let mut code = Vec::new();
    let mut tags = Vec::new();
    for em in bodies.into_iter().flatten() {
        let pc = layout.base + 4 * code.len() as Word;
        let instr = match (&em.callee, em.instr) {
            (Some(name), Instr::Jal { rd, .. }) => {
                let target = functions.iter().find(|f| &f.name == name).expect("callee compiled").position;
                Instr::Jal { rd, off: target as i32 - pc as i32 }
            }
            (_, i) => i,
        };
        code.push(instr);
        tags.push(em.tag);
    }
    let program = MachineProgram { width, base: layout.base, code, functions, entry: p.entry.clone() };
    Ok(CompiledMachine { program, tags, layout })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MachineWalkEnd {
    Complete,
    /// The source trace ran out; at an allocation, the address it must receive.
    Exhausted(Option<Word>),
}

/// Machine leakage of the compiled program along a source trace, given the entry frame
/// base `sp0`. Walks the code; data-dependent values come from the source trace.
pub fn machine_walk(
    c: &CompiledMachine,
    k: &[LeakEvent],
    sp0: Word,
    limit: u64,
) -> Result<(MachineTrace, MachineWalkEnd), ReplayError> {
    use Instr::*;
    let prog = &c.program;
    let w = prog.width;
    let halt = prog.halt_position();
    let mut sp = w.add(sp0, prog.entry_layout().frame_size);
    let mut pc = prog.entry_layout().position;
    let mut rets = vec![halt];
    let mut pos = 0usize;
    let mut out = Vec::new();
    let regs = [0; 32];
    for _ in 0..limit {
        if pc == halt {
            if pos < k.len() {
                return Err(ReplayError::Trailing { position: pos });
            }
            return Ok((out, MachineWalkEnd::Complete));
        }
        let idx = ((pc - prog.base) / 4) as usize;
        let ins = prog.fetch(pc).ok_or(ReplayError::BadTarget(pc))?;
        let tag = c.tags[idx];
        let need = match tag {
            Tag::Src | Tag::Branch | Tag::Alloc => 1,
            Tag::Div => 2,
            _ => 0,
        };
        if pos + need > k.len() {
            let answer = match ins {
                Addi { imm, .. } if tag == Tag::Alloc => Some(w.add(sp, imm)),
                _ => None,
            };
            return Ok((out, MachineWalkEnd::Exhausted(answer)));
        }
        let leak_at = |i: usize| match k[i] {
            LeakEvent::Leak(v) => Ok(v),
            e => Err(ReplayError::Mismatch { position: i, expected: "Leak", found: e }),
        };
        out.push(MachineEvent::Fetch(pc));
        let mut next = pc + 4;
        match tag {
            Tag::Plain => {
                out.extend(instr_leakage(&ins, &regs, w));
                match ins {
                    Addi { rd: SP, rs: SP, imm } => sp = w.add(sp, imm),
                    Jal { off, .. } => next = (pc as i64 + off as i64) as Word,
                    _ => {}
                }
            }
            Tag::Frame => out.push(match ins {
                Lw { imm, .. } => MachineEvent::LeakLw(w.add(sp, imm)),
                Sw { imm, .. } => MachineEvent::LeakSw(w.add(sp, imm)),
                other => unreachable!("frame tag on {other}"),
            }),
            Tag::Src => {
                let a = leak_at(pos)?;
                pos += 1;
                out.push(match ins {
                    Lw { .. } => MachineEvent::LeakLw(a),
                    Lb { .. } => MachineEvent::LeakLb(a),
                    Sw { .. } => MachineEvent::LeakSw(a),
                    Sb { .. } => MachineEvent::LeakSb(a),
                    other => unreachable!("source tag on {other}"),
                });
            }
            Tag::Div => {
                let (a, b) = (leak_at(pos)?, leak_at(pos + 1)?);
                pos += 2;
                out.push(MachineEvent::LeakDiv(a, b));
            }
            Tag::Branch => {
                let b = leak_at(pos)?;
                if b > 1 {
                    return Err(ReplayError::Mismatch { position: pos, expected: "branch bit", found: k[pos] });
                }
                pos += 1;
                out.push(MachineEvent::LeakBlt(b == 1));
                if let (Blt { off, .. }, 1) = (ins, b) {
                    next = (pc as i64 + off as i64) as Word;
                }
            }
            Tag::Alloc => {
                match k[pos] {
                    LeakEvent::CompNonDet(_) => {}
                    e => return Err(ReplayError::Mismatch { position: pos, expected: "CompNonDet", found: e }),
                }
                pos += 1;
                out.push(MachineEvent::LeakOp);
            }
            Tag::Call => {
                if rets.len() > 4096 {
                    return Err(ReplayError::TooDeep);
                }
                rets.push(pc + 4);
                if let Jal { off, .. } = ins {
                    next = (pc as i64 + off as i64) as Word;
                }
            }
            Tag::Ret => {
                let t = rets.pop().ok_or(ReplayError::BadTarget(pc))?;
                out.push(MachineEvent::LeakJalr(t));
                next = t;
            }
        }
        pc = next;
    }
    Err(ReplayError::TooDeep)
}

//! A small leakage-instrumented register machine, RISC-V flavored.
//!
//! Addresses and branch decisions leak; data values never do. Every executed instruction
//! first leaks its fetch address. Code lives outside data memory at 4-byte positions.

use crate::interp::MemState;
use crate::lang::{Width, Word};
use crate::trace::{IoEvent, IoTrace};
use serde::{Deserialize, Serialize};
use std::fmt;

pub type Reg = u8;

pub const ZERO: Reg = 0;
pub const RA: Reg = 1;
pub const SP: Reg = 2;
pub const T0: Reg = 5;
pub const T1: Reg = 6;
pub const T2: Reg = 7;
/// First argument/return register; `A0..A0+8` carry arguments and results.
pub const A0: Reg = 10;
pub const ARG_REGS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Instr {
    Addi { rd: Reg, rs: Reg, imm: Word },
    Add { rd: Reg, rs1: Reg, rs2: Reg },
    Sub { rd: Reg, rs1: Reg, rs2: Reg },
    And { rd: Reg, rs1: Reg, rs2: Reg },
    Or { rd: Reg, rs1: Reg, rs2: Reg },
    Xor { rd: Reg, rs1: Reg, rs2: Reg },
    Mul { rd: Reg, rs1: Reg, rs2: Reg },
    Sll { rd: Reg, rs1: Reg, rs2: Reg },
    Srl { rd: Reg, rs1: Reg, rs2: Reg },
    Sltu { rd: Reg, rs1: Reg, rs2: Reg },
    Slt { rd: Reg, rs1: Reg, rs2: Reg },
    Divu { rd: Reg, rs1: Reg, rs2: Reg },
    Remu { rd: Reg, rs1: Reg, rs2: Reg },
    Lw { rd: Reg, rs1: Reg, imm: Word },
    Lb { rd: Reg, rs1: Reg, imm: Word },
    Sw { rs2: Reg, rs1: Reg, imm: Word },
    Sb { rs2: Reg, rs1: Reg, imm: Word },
    Beq { rs1: Reg, rs2: Reg, off: i32 },
    Bne { rs1: Reg, rs2: Reg, off: i32 },
    Blt { rs1: Reg, rs2: Reg, off: i32 },
    Jal { rd: Reg, off: i32 },
    Jalr { rd: Reg, rs1: Reg, imm: Word },
    EIn { rd: Reg },
    EOut { rs: Reg },
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instr::*;
        match *self {
            Addi { rd, rs, imm } => write!(f, "addi x{rd}, x{rs}, {}", imm as i32),
            Add { rd, rs1, rs2 } => write!(f, "add x{rd}, x{rs1}, x{rs2}"),
            Sub { rd, rs1, rs2 } => write!(f, "sub x{rd}, x{rs1}, x{rs2}"),
            And { rd, rs1, rs2 } => write!(f, "and x{rd}, x{rs1}, x{rs2}"),
            Or { rd, rs1, rs2 } => write!(f, "or x{rd}, x{rs1}, x{rs2}"),
            Xor { rd, rs1, rs2 } => write!(f, "xor x{rd}, x{rs1}, x{rs2}"),
            Mul { rd, rs1, rs2 } => write!(f, "mul x{rd}, x{rs1}, x{rs2}"),
            Sll { rd, rs1, rs2 } => write!(f, "sll x{rd}, x{rs1}, x{rs2}"),
            Srl { rd, rs1, rs2 } => write!(f, "srl x{rd}, x{rs1}, x{rs2}"),
            Sltu { rd, rs1, rs2 } => write!(f, "sltu x{rd}, x{rs1}, x{rs2}"),
            Slt { rd, rs1, rs2 } => write!(f, "slt x{rd}, x{rs1}, x{rs2}"),
            Divu { rd, rs1, rs2 } => write!(f, "divu x{rd}, x{rs1}, x{rs2}"),
            Remu { rd, rs1, rs2 } => write!(f, "remu x{rd}, x{rs1}, x{rs2}"),
            Lw { rd, rs1, imm } => write!(f, "lw x{rd}, {}(x{rs1})", imm as i32),
            Lb { rd, rs1, imm } => write!(f, "lb x{rd}, {}(x{rs1})", imm as i32),
            Sw { rs2, rs1, imm } => write!(f, "sw x{rs2}, {}(x{rs1})", imm as i32),
            Sb { rs2, rs1, imm } => write!(f, "sb x{rs2}, {}(x{rs1})", imm as i32),
            Beq { rs1, rs2, off } => write!(f, "beq x{rs1}, x{rs2}, {off}"),
            Bne { rs1, rs2, off } => write!(f, "bne x{rs1}, x{rs2}, {off}"),
            Blt { rs1, rs2, off } => write!(f, "blt x{rs1}, x{rs2}, {off}"),
            Jal { rd, off } => write!(f, "jal x{rd}, {off}"),
            Jalr { rd, rs1, imm } => write!(f, "jalr x{rd}, {}(x{rs1})", imm as i32),
            EIn { rd } => write!(f, "ein x{rd}"),
            EOut { rs } => write!(f, "eout x{rs}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MachineEvent {
    Fetch(Word),
    LeakAdd,
    LeakOp,
    LeakLw(Word),
    LeakLb(Word),
    LeakSw(Word),
    LeakSb(Word),
    LeakBeq(bool),
    LeakBne(bool),
    LeakBlt(bool),
    LeakDiv(Word, Word),
    LeakJalr(Word),
}

impl fmt::Display for MachineEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use MachineEvent::*;
        match self {
            Fetch(a) => write!(f, "Fetch {a}"),
            LeakAdd => write!(f, "LeakAdd"),
            LeakOp => write!(f, "LeakOp"),
            LeakLw(a) => write!(f, "LeakLw {a}"),
            LeakLb(a) => write!(f, "LeakLb {a}"),
            LeakSw(a) => write!(f, "LeakSw {a}"),
            LeakSb(a) => write!(f, "LeakSb {a}"),
            LeakBeq(b) => write!(f, "LeakBeq {b}"),
            LeakBne(b) => write!(f, "LeakBne {b}"),
            LeakBlt(b) => write!(f, "LeakBlt {b}"),
            LeakDiv(a, b) => write!(f, "LeakDiv {a} {b}"),
            LeakJalr(t) => write!(f, "LeakJalr {t}"),
        }
    }
}

pub type MachineTrace = Vec<MachineEvent>;

/// Where a function's code starts and what its frame looks like.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionLayout {
    pub name: String,
    pub position: Word,
    /// Bytes the function's prologue subtracts from `sp`.
    pub frame_size: Word,
    pub params: usize,
    pub returns: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineProgram {
    pub width: Width,
    pub base: Word,
    pub code: Vec<Instr>,
    pub functions: Vec<FunctionLayout>,
    pub entry: String,
}

impl MachineProgram {
    /// Position one past the last instruction; the entry returns there to halt.
    pub fn halt_position(&self) -> Word {
        self.base + 4 * self.code.len() as Word
    }

    pub fn position(&self, index: usize) -> Word {
        self.base + 4 * index as Word
    }

    pub fn fetch(&self, pc: Word) -> Option<Instr> {
        if pc < self.base || (pc - self.base) % 4 != 0 {
            return None;
        }
        self.code.get(((pc - self.base) / 4) as usize).copied()
    }

    pub fn function(&self, name: &str) -> Option<&FunctionLayout> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry_layout(&self) -> &FunctionLayout {
        self.function(&self.entry).expect("entry has a layout")
    }

    /// Assembly listing with positions and function labels.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for (i, ins) in self.code.iter().enumerate() {
            let pos = self.position(i);
            for f in self.functions.iter().filter(|f| f.position == pos) {
                out.push_str(&format!("{}:\n", f.name));
            }
            out.push_str(&format!("  {pos:#06x}  {ins}\n"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MachineState {
    pub regs: [Word; 32],
    pub mem: MemState,
    pub pc: Word,
    pub io: IoTrace,
    pub leak: MachineTrace,
}

impl MachineState {
    pub fn new(mem: MemState, pc: Word) -> MachineState {
        MachineState { regs: [0; 32], mem, pc, io: Vec::new(), leak: Vec::new() }
    }

    fn set(&mut self, r: Reg, v: Word) {
        if r != ZERO {
            self.regs[r as usize] = v;
        }
    }

    fn get(&self, r: Reg) -> Word {
        self.regs[r as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum MachineStatus {
    Terminated,
    /// Ran out of scripted input.
    BenignStuck,
    ErrorStuck(String),
    FuelExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MachineOutcome {
    pub status: MachineStatus,
    pub state: MachineState,
    pub steps: u64,
}

fn addr(w: Width, base: Word, imm: Word) -> Word {
    w.add(base, imm)
}

/// Events an instruction leaks besides its fetch, given the register file before it runs.
pub fn instr_leakage(i: &Instr, regs: &[Word; 32], w: Width) -> Vec<MachineEvent> {
    use Instr::*;
    use MachineEvent::*;
    let r = |x: Reg| regs[x as usize];
    match *i {
        Add { .. } => vec![LeakAdd],
        Addi { .. } | Sub { .. } | And { .. } | Or { .. } | Xor { .. } | Mul { .. } | Sll { .. } | Srl { .. }
        | Sltu { .. } | Slt { .. } => vec![LeakOp],
        Divu { rs1, rs2, .. } | Remu { rs1, rs2, .. } => vec![LeakDiv(r(rs1), r(rs2))],
        Lw { rs1, imm, .. } => vec![LeakLw(addr(w, r(rs1), imm))],
        Lb { rs1, imm, .. } => vec![LeakLb(addr(w, r(rs1), imm))],
        Sw { rs1, imm, .. } => vec![LeakSw(addr(w, r(rs1), imm))],
        Sb { rs1, imm, .. } => vec![LeakSb(addr(w, r(rs1), imm))],
        Beq { rs1, rs2, .. } => vec![LeakBeq(r(rs1) == r(rs2))],
        Bne { rs1, rs2, .. } => vec![LeakBne(r(rs1) != r(rs2))],
        Blt { rs1, rs2, .. } => vec![LeakBlt(w.lts(r(rs1), r(rs2)))],
        Jal { .. } | EIn { .. } | EOut { .. } => vec![],
        Jalr { rs1, imm, .. } => vec![LeakJalr(addr(w, r(rs1), imm) & !1)],
    }
}

fn rel(pc: Word, off: i32) -> Word {
    (pc as i64 + off as i64) as Word
}

enum Step {
    Continue,
    NoInput,
    /// The flag records whether the faulting instruction was fetched.
    Fault(String, bool),
}

fn step(prog: &MachineProgram, s: &mut MachineState, inputs: &[Word], next_input: &mut usize) -> Step {
    use Instr::*;
    let w = prog.width;
    let pc = s.pc;
    let Some(ins) = prog.fetch(pc) else {
        return Step::Fault(format!("no instruction at {pc:#x}"), false);
    };
    if let EIn { .. } = ins {
        if *next_input >= inputs.len() {
            return Step::NoInput;
        }
    }
    s.leak.push(MachineEvent::Fetch(pc));
    let events = instr_leakage(&ins, &s.regs, w);
    s.leak.extend(events);
    let mut next = pc.wrapping_add(4);
    let alu = |s: &mut MachineState, rd: Reg, a: Reg, b: Reg, f: &dyn Fn(Word, Word) -> Word| {
        let v = f(s.get(a), s.get(b));
        s.set(rd, v);
    };
    match ins {
        Addi { rd, rs, imm } => {
            let v = w.add(s.get(rs), imm);
            s.set(rd, v);
        }
        Add { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.add(a, b)),
        Sub { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.sub(a, b)),
        And { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| a & b),
        Or { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| a | b),
        Xor { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| a ^ b),
        Mul { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.mul(a, b)),
        Sll { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.shl(a, b)),
        Srl { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.shr(a, b)),
        Sltu { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| (a < b) as Word),
        Slt { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.lts(a, b) as Word),
        Divu { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.divu(a, b)),
        Remu { rd, rs1, rs2 } => alu(s, rd, rs1, rs2, &|a, b| w.remu(a, b)),
        Lw { rd, rs1, imm } | Lb { rd, rs1, imm } => {
            let a = addr(w, s.get(rs1), imm);
            let n = if matches!(ins, Lw { .. }) { w.bytes() } else { 1 };
            match s.mem.load(a, n, w) {
                Some(v) => s.set(rd, v),
                None => return Step::Fault(format!("load from unmapped address {a}"), true),
            }
        }
        Sw { rs2, rs1, imm } | Sb { rs2, rs1, imm } => {
            let a = addr(w, s.get(rs1), imm);
            let n = if matches!(ins, Sw { .. }) { w.bytes() } else { 1 };
            let v = s.get(rs2);
            if !s.mem.store(a, n, v, w) {
                return Step::Fault(format!("store to unmapped address {a}"), true);
            }
        }
        Beq { rs1, rs2, off } => {
            if s.get(rs1) == s.get(rs2) {
                next = rel(pc, off);
            }
        }
        Bne { rs1, rs2, off } => {
            if s.get(rs1) != s.get(rs2) {
                next = rel(pc, off);
            }
        }
        Blt { rs1, rs2, off } => {
            if w.lts(s.get(rs1), s.get(rs2)) {
                next = rel(pc, off);
            }
        }
        Jal { rd, off } => {
            s.set(rd, pc.wrapping_add(4));
            next = rel(pc, off);
        }
        Jalr { rd, rs1, imm } => {
            let t = addr(w, s.get(rs1), imm) & !1;
            s.set(rd, pc.wrapping_add(4));
            next = t;
        }
        EIn { rd } => {
            let v = w.wrap(inputs[*next_input] as u64);
            *next_input += 1;
            s.io.push(IoEvent::In(v));
            s.set(rd, v);
        }
        EOut { rs } => s.io.push(IoEvent::Out(s.get(rs))),
    }
    if next % 4 != 0 {
        return Step::Fault(format!("unaligned pc {next:#x}"), true);
    }
    s.pc = next;
    Step::Continue
}

/// Runs until the pc reaches the halt position, the machine faults, input runs out, or
/// `fuel` instructions have executed.
pub fn mrun(prog: &MachineProgram, s0: MachineState, inputs: &[Word], fuel: u64) -> MachineOutcome {
    let halt = prog.halt_position();
    let mut s = s0;
    let mut next_input = 0;
    let mut steps = 0;
    loop {
        if s.pc == halt {
            return MachineOutcome { status: MachineStatus::Terminated, state: s, steps };
        }
        if steps == fuel {
            return MachineOutcome { status: MachineStatus::FuelExhausted, state: s, steps };
        }
        match step(prog, &mut s, inputs, &mut next_input) {
            Step::Continue => steps += 1,
            Step::NoInput => return MachineOutcome { status: MachineStatus::BenignStuck, state: s, steps },
            Step::Fault(m, fetched) => {
                steps += fetched as u64;
                return MachineOutcome { status: MachineStatus::ErrorStuck(m), state: s, steps };
            }
        }
    }
}

/// Placement of the stack and of a compiled program's entry frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackLayout {
    /// Value of `sp` inside the entry function's body, i.e. the base of its frame.
    pub sp0: Word,
    /// Bytes of stack mapped below `sp0`.
    pub reserve: Word,
}

impl Default for StackLayout {
    fn default() -> Self {
        StackLayout { sp0: 1024, reserve: 512 }
    }
}

/// Initial state for calling the entry function: arguments in `a0..`, `ra` at the halt
/// position, `sp` just above the entry frame, the stack region mapped as zero bytes
/// wherever `mem` leaves it unmapped.
pub fn entry_state(prog: &MachineProgram, mem: &MemState, args: &[Word], stack: StackLayout) -> MachineState {
    let w = prog.width;
    let entry = prog.entry_layout();
    let mut mem = mem.clone();
    let lo = stack.sp0.saturating_sub(stack.reserve);
    let hi = stack.sp0 + entry.frame_size;
    for a in lo..hi {
        if !mem.contains(a) {
            mem.poke(a, &[0], w);
        }
    }
    let mut s = MachineState::new(mem, entry.position);
    for (i, a) in args.iter().enumerate().take(ARG_REGS) {
        s.set(A0 + i as u8, w.wrap(*a as u64));
    }
    s.set(RA, prog.halt_position());
    s.set(SP, hi);
    s
}

/// Return values of a terminated run of a compiled program.
pub fn returns_of(prog: &MachineProgram, s: &MachineState) -> Vec<Word> {
    (0..prog.entry_layout().returns).map(|i| s.regs[A0 as usize + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use MachineEvent::*;

    fn prog(code: Vec<Instr>) -> MachineProgram {
        MachineProgram {
            width: Width::W32,
            base: 0x100,
            functions: vec![FunctionLayout { name: "main".into(), position: 0x100, frame_size: 0, params: 0, returns: 0 }],
            code,
            entry: "main".into(),
        }
    }

    #[test]
    fn leakage_examples() {
        let mut regs = [0; 32];
        regs[2] = 40;
        let w = Width::W32;
        assert_eq!(instr_leakage(&Instr::Add { rd: 1, rs1: 2, rs2: 3 }, &regs, w), vec![LeakAdd]);
        assert_eq!(instr_leakage(&Instr::Lw { rd: 5, rs1: 2, imm: 8 }, &regs, w), vec![LeakLw(48)]);
        regs[1] = 3;
        regs[2] = 7;
        assert_eq!(
            instr_leakage(&Instr::Blt { rs1: 1, rs2: 2, off: -8 }, &regs, w),
            vec![LeakBlt(true)]
        );
    }

    #[test]
    fn addi_then_halt() {
        let p = prog(vec![Instr::Addi { rd: 1, rs: 0, imm: 5 }, Instr::Jalr { rd: 0, rs1: 7, imm: 0 }]);
        let mut s = MachineState::new(MemState::new(), 0x100);
        s.regs[7] = p.halt_position();
        let o = mrun(&p, s, &[], 100);
        assert_eq!(o.status, MachineStatus::Terminated);
        assert_eq!(o.state.regs[1], 5);
        assert_eq!(o.state.leak, vec![Fetch(0x100), LeakOp, Fetch(0x104), LeakJalr(0x108)]);
        assert_eq!(o.steps, 2);
    }

    #[test]
    fn output_and_faults() {
        let p = prog(vec![Instr::Addi { rd: 3, rs: 0, imm: 15 }, Instr::EOut { rs: 3 }]);
        let o = mrun(&p, MachineState::new(MemState::new(), 0x100), &[], 100);
        assert_eq!(o.state.io, vec![IoEvent::Out(15)]);
        assert_eq!(o.status, MachineStatus::Terminated);
        let p = prog(vec![Instr::Lw { rd: 3, rs1: 0, imm: 16 }]);
        let o = mrun(&p, MachineState::new(MemState::new(), 0x100), &[], 100);
        assert!(matches!(o.status, MachineStatus::ErrorStuck(_)));
        let p = prog(vec![Instr::EIn { rd: 3 }]);
        let o = mrun(&p, MachineState::new(MemState::new(), 0x100), &[], 100);
        assert_eq!(o.status, MachineStatus::BenignStuck);
        let p = prog(vec![Instr::Jal { rd: 0, off: 0 }]);
        let o = mrun(&p, MachineState::new(MemState::new(), 0x100), &[], 10);
        assert_eq!(o.status, MachineStatus::FuelExhausted);
    }
}

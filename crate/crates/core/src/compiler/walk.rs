//! Trace-guided replay of flat programs.
//!
//! Control flow of a flat program is fully determined by its leakage: branch bits, load
//! and store addresses, division operands and allocation answers are all in the trace.
//! Walking the program along a trace therefore recovers which statements ran, without
//! any memory, locals or secrets. Transformation functions are folds over that walk.

use super::flat::{block_count, FlatFn, FlatProgram, FlatStmt};
use super::ReplayError;
use crate::lang::Word;
use crate::predict::{Predictor, PredictorOut};
use crate::trace::{LeakEvent, LeakTrace};

const MAX_DEPTH: usize = 256;

/// Statement identity: function name and pre-order index in its body.
pub type Site<'p> = (&'p str, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item<'p> {
    Enter(&'p FlatFn),
    Exit(&'p FlatFn),
    /// A primitive statement together with the events it leaked.
    Prim(Site<'p>, Vec<LeakEvent>),
    Alloc(Site<'p>, Word),
    Branch(Site<'p>, Word),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WalkEnd<'p> {
    Complete,
    /// The trace ran out; if the walk stopped at an allocation, its site.
    Exhausted(Option<Site<'p>>),
}

#[derive(Clone, Debug)]
pub struct Walk<'p> {
    pub items: Vec<Item<'p>>,
    pub end: WalkEnd<'p>,
}

enum Stop<'p> {
    Exhausted(Option<Site<'p>>),
    Error(ReplayError),
}

impl From<ReplayError> for Stop<'_> {
    fn from(e: ReplayError) -> Self {
        Stop::Error(e)
    }
}

struct Walker<'p, 'k> {
    program: &'p FlatProgram,
    trace: &'k [LeakEvent],
    pos: usize,
    depth: usize,
    items: Vec<Item<'p>>,
}

impl<'p> Walker<'p, '_> {
    fn leak(&mut self, site: Option<Site<'p>>) -> Result<Word, Stop<'p>> {
        match self.trace.get(self.pos) {
            None => Err(Stop::Exhausted(site)),
            Some(LeakEvent::Leak(w)) => {
                self.pos += 1;
                Ok(*w)
            }
            Some(e) => Err(ReplayError::Mismatch { position: self.pos, expected: "Leak", found: *e }.into()),
        }
    }

    fn nondet(&mut self, site: Site<'p>) -> Result<Word, Stop<'p>> {
        match self.trace.get(self.pos) {
            None => Err(Stop::Exhausted(Some(site))),
            Some(LeakEvent::CompNonDet(w)) => {
                self.pos += 1;
                Ok(*w)
            }
            Some(e) => Err(ReplayError::Mismatch { position: self.pos, expected: "CompNonDet", found: *e }.into()),
        }
    }

    fn bit(&mut self) -> Result<Word, Stop<'p>> {
        let at = self.pos;
        let b = self.leak(None)?;
        if b > 1 {
            return Err(ReplayError::Mismatch { position: at, expected: "branch bit", found: LeakEvent::Leak(b) }.into());
        }
        Ok(b)
    }

    fn block(&mut self, f: &'p FlatFn, b: &'p [FlatStmt], base: usize) -> Result<(), Stop<'p>> {
        let mut id = base;
        for s in b {
            self.stmt(f, s, id)?;
            id += s.count();
        }
        Ok(())
    }

    fn stmt(&mut self, f: &'p FlatFn, s: &'p FlatStmt, id: usize) -> Result<(), Stop<'p>> {
        let site = (f.name.as_str(), id);
        match s {
            FlatStmt::Op(_, op, ..) | FlatStmt::OpImm(_, op, ..) if op.leaks_operands() => {
                let a = self.leak(None)?;
                let b = self.leak(None)?;
                self.items.push(Item::Prim(site, vec![LeakEvent::Leak(a), LeakEvent::Leak(b)]));
            }
            FlatStmt::Load(..) | FlatStmt::Store(..) => {
                let a = self.leak(None)?;
                self.items.push(Item::Prim(site, vec![LeakEvent::Leak(a)]));
            }
            FlatStmt::StackAlloc { body, .. } => {
                let a = self.nondet(site)?;
                self.items.push(Item::Alloc(site, a));
                self.block(f, body, id + 1)?;
            }
            FlatStmt::If(_, a, b) => {
                let bit = self.bit()?;
                self.items.push(Item::Branch(site, bit));
                if bit == 1 {
                    self.block(f, a, id + 1)?;
                } else {
                    self.block(f, b, id + 1 + block_count(a))?;
                }
            }
            FlatStmt::While { prelude, body, .. } => loop {
                self.block(f, prelude, id + 1)?;
                let bit = self.bit()?;
                self.items.push(Item::Branch(site, bit));
                if bit == 0 {
                    break;
                }
                self.block(f, body, id + 1 + block_count(prelude))?;
            },
            FlatStmt::Call { func, .. } => self.call(func)?,
            _ => self.items.push(Item::Prim(site, vec![])),
        }
        Ok(())
    }

    fn call(&mut self, name: &str) -> Result<(), Stop<'p>> {
        let program = self.program;
        let f = program.function(name).ok_or_else(|| ReplayError::UnknownFunction(name.to_string()))?;
        if self.depth >= MAX_DEPTH {
            return Err(ReplayError::TooDeep.into());
        }
        self.depth += 1;
        self.items.push(Item::Enter(f));
        self.block(f, &f.body, 0)?;
        self.items.push(Item::Exit(f));
        self.depth -= 1;
        Ok(())
    }
}

/// Walks the entry function along `k`. A trace that runs out is a prefix, not an error;
/// events left over after the entry returns are.
pub fn walk<'p>(p: &'p FlatProgram, k: &[LeakEvent]) -> Result<Walk<'p>, ReplayError> {
    let mut w = Walker { program: p, trace: k, pos: 0, depth: 0, items: Vec::new() };
    let end = match w.call(&p.entry) {
        Ok(()) if w.pos < k.len() => return Err(ReplayError::Trailing { position: w.pos }),
        Ok(()) => WalkEnd::Complete,
        Err(Stop::Exhausted(site)) => WalkEnd::Exhausted(site),
        Err(Stop::Error(e)) => return Err(e),
    };
    Ok(Walk { items: w.items, end })
}

/// Result of lowering a (possibly partial) source trace to a target trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lowered {
    pub out: LeakTrace,
    pub status: LowStatus,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LowStatus {
    Complete,
    /// The target needs a nondeterministic answer the low side could not supply.
    NeedLow,
    /// The source trace ran out. `answer` is what the source oracle must answer if the
    /// source is at an allocation; `None` means the answer is copied from the target.
    NeedSource { at_alloc: bool, answer: Option<Word> },
}

/// Answers target-level queries given the target prefix; `None` when unknown.
pub type LowAnswer<'a> = dyn FnMut(&[LeakEvent]) -> Option<Word> + 'a;

/// A pass whose transformation functions are folds over a flat walk.
pub trait Replayer: Send + Sync {
    fn lower(&self, k: &[LeakEvent], low: &mut LowAnswer<'_>) -> Result<Lowered, ReplayError>;
}

fn classify(e: LeakEvent) -> PredictorOut {
    match e {
        LeakEvent::Leak(w) => PredictorOut::PLeak(w),
        LeakEvent::CompNonDet(_) => PredictorOut::PBranch,
    }
}

/// What a lowering says about target event `n` of `kl`, if it decides it.
fn decide(l: &Lowered, kl: &[LeakEvent]) -> Option<PredictorOut> {
    let n = kl.len();
    let m = l.out.len().min(n);
    if l.out[..m] != kl[..m] {
        return Some(PredictorOut::PEnd);
    }
    if l.out.len() > n {
        return Some(classify(l.out[n]));
    }
    match l.status {
        LowStatus::NeedLow => Some(PredictorOut::PBranch),
        LowStatus::Complete => Some(PredictorOut::PEnd),
        LowStatus::NeedSource { .. } => None,
    }
}

/// The target predictor induced by a source predictor: grows a source prefix with the
/// source predictor's answers until its lowering decides the target's next event.
/// Runs of predicted leaks are appended in one go; if the replay rejects the extended
/// prefix, it is cut back to the rejected event.
pub fn transformed_predict(r: &dyn Replayer, p: &Predictor, kl: &[LeakEvent]) -> PredictorOut {
    let n = kl.len();
    let mut low = |prefix: &[LeakEvent]| match kl.get(prefix.len()) {
        None => None,
        Some(LeakEvent::CompNonDet(x)) => Some(*x),
        Some(LeakEvent::Leak(_)) => Some(0),
    };
    let mut kh: LeakTrace = Vec::new();
    let limit = 256 * (n + 8);
    while kh.len() <= limit {
        let l = match r.lower(&kh, &mut low) {
            Ok(l) => l,
            Err(e) => {
                let Some(at) = e.position().filter(|&at| at < kh.len()) else {
                    return PredictorOut::PEnd;
                };
                kh.truncate(at);
                return match r.lower(&kh, &mut low) {
                    Ok(l) => decide(&l, kl).unwrap_or(PredictorOut::PEnd),
                    Err(_) => PredictorOut::PEnd,
                };
            }
        };
        if let Some(out) = decide(&l, kl) {
            return out;
        }
        let LowStatus::NeedSource { answer, .. } = l.status else { unreachable!("decided above") };
        match p.predict(&kh) {
            PredictorOut::PLeak(w) => {
                kh.push(LeakEvent::Leak(w));
                while kh.len() <= limit {
                    match p.predict(&kh) {
                        PredictorOut::PLeak(w) => kh.push(LeakEvent::Leak(w)),
                        _ => break,
                    }
                }
            }
            PredictorOut::PEnd => return PredictorOut::PEnd,
            PredictorOut::PBranch => {
                let x = match answer {
                    Some(x) => x,
                    None => match kl.get(l.out.len()) {
                        None => return PredictorOut::PBranch,
                        Some(LeakEvent::CompNonDet(x)) => *x,
                        Some(LeakEvent::Leak(_)) => return PredictorOut::PEnd,
                    },
                };
                kh.push(LeakEvent::CompNonDet(x));
            }
        }
    }
    PredictorOut::PEnd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::flatten::flatten_program;
    use crate::lang::parse;
    use LeakEvent::*;

    #[test]
    fn walk_follows_branches_and_calls() {
        let p = parse("fn main(a) { if (a) { x = load(a); } else { skip; } f(); } fn f() { stackalloc 4 as s { skip; } }")
            .unwrap();
        let fp = flatten_program(&p).unwrap();
        let w = walk(&fp, &[Leak(1), Leak(16), CompNonDet(64)]).unwrap();
        assert_eq!(w.end, WalkEnd::Complete);
        assert!(w.items.iter().any(|i| matches!(i, Item::Alloc((name, 0), 64) if *name == "f")));
        let w = walk(&fp, &[Leak(0)]).unwrap();
        assert_eq!(w.end, WalkEnd::Exhausted(Some(("f", 0))));
        assert!(walk(&fp, &[Leak(2)]).is_err());
        assert!(matches!(walk(&fp, &[Leak(0), CompNonDet(64), Leak(3)]), Err(ReplayError::Trailing { position: 2 })));
    }
}

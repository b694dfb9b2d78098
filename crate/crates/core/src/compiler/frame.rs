//! Frame allocation: every function's stack allocations move into one frame allocated on
//! entry, and each original allocation becomes the frame pointer plus a static offset.

use super::flat::{block_count, FlatFn, FlatProgram, FlatStmt};
use super::walk::{walk, Item, LowAnswer, LowStatus, Lowered, Replayer, WalkEnd};
use super::ReplayError;
use crate::lang::{BinOp, Word};
use crate::trace::LeakEvent;
use std::collections::BTreeMap;

pub const FRAME_VAR: &str = "$fp";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameLayout {
    pub size: Word,
    /// Offset of each allocation site (pre-order id) inside the frame.
    pub offsets: BTreeMap<usize, Word>,
}

/// Assigns offsets in pre-order; branches share space, sequential allocations do not.
fn layout_block(b: &[FlatStmt], base: usize, mut cur: Word, offsets: &mut BTreeMap<usize, Word>) -> Word {
    let mut id = base;
    for s in b {
        cur = layout_stmt(s, id, cur, offsets);
        id += s.count();
    }
    cur
}

fn layout_stmt(s: &FlatStmt, id: usize, cur: Word, offsets: &mut BTreeMap<usize, Word>) -> Word {
    match s {
        FlatStmt::StackAlloc { size, body, .. } => {
            offsets.insert(id, cur);
            layout_block(body, id + 1, cur + size, offsets)
        }
        FlatStmt::If(_, a, b) => {
            let ea = layout_block(a, id + 1, cur, offsets);
            let eb = layout_block(b, id + 1 + block_count(a), cur, offsets);
            ea.max(eb)
        }
        FlatStmt::While { prelude, body, .. } => {
            let e = layout_block(prelude, id + 1, cur, offsets);
            layout_block(body, id + 1 + block_count(prelude), e, offsets)
        }
        _ => cur,
    }
}

fn rewrite(b: &[FlatStmt], base: usize, layout: &FrameLayout) -> Vec<FlatStmt> {
    let mut out = Vec::new();
    let mut id = base;
    for s in b {
        match s {
            FlatStmt::StackAlloc { var, body, .. } => {
                out.push(FlatStmt::OpImm(var.clone(), BinOp::Add, FRAME_VAR.into(), layout.offsets[&id]));
                out.extend(rewrite(body, id + 1, layout));
            }
            FlatStmt::If(c, a, e) => {
                out.push(FlatStmt::If(c.clone(), rewrite(a, id + 1, layout), rewrite(e, id + 1 + block_count(a), layout)))
            }
            FlatStmt::While { prelude, cond, body } => out.push(FlatStmt::While {
                prelude: rewrite(prelude, id + 1, layout),
                cond: cond.clone(),
                body: rewrite(body, id + 1 + block_count(prelude), layout),
            }),
            other => out.push(other.clone()),
        }
        id += s.count();
    }
    out
}

pub fn allocate_frames(p: &FlatProgram) -> (FlatProgram, BTreeMap<String, FrameLayout>) {
    let mut layouts = BTreeMap::new();
    let functions = p
        .functions
        .iter()
        .map(|f| {
            let mut layout = FrameLayout::default();
            layout.size = layout_block(&f.body, 0, 0, &mut layout.offsets);
            let body = if layout.size == 0 {
                f.body.clone()
            } else {
                vec![FlatStmt::StackAlloc { size: layout.size, var: FRAME_VAR.into(), body: rewrite(&f.body, 0, &layout) }]
            };
            layouts.insert(f.name.clone(), layout);
            FlatFn { body, ..f.clone() }
        })
        .collect();
    (FlatProgram { functions, entry: p.entry.clone() }, layouts)
}

/// Replays the source program; on each function entry with a frame, asks the low side
/// for the frame pointer and emits it, and drops the source's per-allocation events.
pub struct FrameReplay {
    pub source: FlatProgram,
    pub layouts: BTreeMap<String, FrameLayout>,
}

impl Replayer for FrameReplay {
    fn lower(&self, k: &[LeakEvent], low: &mut LowAnswer<'_>) -> Result<Lowered, ReplayError> {
        let w = walk(&self.source, k)?;
        let mut out = Vec::new();
        let mut frames: Vec<Option<Word>> = Vec::new();
        for item in &w.items {
            match item {
                Item::Enter(f) => {
                    if self.layouts.get(&f.name).is_some_and(|l| l.size > 0) {
                        let Some(fp) = low(&out) else {
                            return Ok(Lowered { out, status: LowStatus::NeedLow });
                        };
                        out.push(LeakEvent::CompNonDet(fp));
                        frames.push(Some(fp));
                    } else {
                        frames.push(None);
                    }
                }
                Item::Exit(_) => {
                    frames.pop();
                }
                Item::Prim(_, events) => out.extend(events.iter().copied()),
                Item::Branch(_, b) => out.push(LeakEvent::Leak(*b)),
                Item::Alloc(..) => {}
            }
        }
        let status = match w.end {
            WalkEnd::Complete => LowStatus::Complete,
            WalkEnd::Exhausted(None) => LowStatus::NeedSource { at_alloc: false, answer: None },
            WalkEnd::Exhausted(Some((f, id))) => {
                let fp = frames.last().copied().flatten().unwrap_or(0);
                let off = self.layouts.get(f).and_then(|l| l.offsets.get(&id).copied()).unwrap_or(0);
                LowStatus::NeedSource { at_alloc: true, answer: Some(fp.wrapping_add(off)) }
            }
        };
        Ok(Lowered { out, status })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::flatten::flatten_program;
    use crate::lang::parse;

    #[test]
    fn sequential_allocations_get_distinct_offsets() {
        let p = parse("fn main() { stackalloc 4 as a { skip; } stackalloc 4 as b { skip; } }").unwrap();
        let fp = flatten_program(&p).unwrap();
        let (q, layouts) = allocate_frames(&fp);
        assert_eq!(layouts["main"].size, 8);
        assert_eq!(layouts["main"].offsets.values().copied().collect::<Vec<_>>(), vec![0, 4]);
        assert!(matches!(&q.functions[0].body[..], [FlatStmt::StackAlloc { size: 8, .. }]));
    }

    #[test]
    fn branches_share_space() {
        let p = parse("fn main(c) { if (c) { stackalloc 8 as a { skip; } } else { stackalloc 4 as b { skip; } } }").unwrap();
        let (_, layouts) = allocate_frames(&flatten_program(&p).unwrap());
        assert_eq!(layouts["main"].size, 8);
        assert_eq!(layouts["main"].offsets.values().copied().collect::<Vec<_>>(), vec![0, 0]);
    }

    #[test]
    fn no_allocation_no_frame() {
        let p = parse("fn main(a) -> (b) { b = a + 1; }").unwrap();
        let fp = flatten_program(&p).unwrap();
        let (q, layouts) = allocate_frames(&fp);
        assert_eq!(q, fp);
        assert_eq!(layouts["main"].size, 0);
    }
}

//! Dead-code elimination: drops assignments and loads whose results are never read.

use super::flat::{block_count, FlatFn, FlatProgram, FlatStmt};
use super::walk::{walk, Item, LowAnswer, LowStatus, Lowered, Replayer, WalkEnd};
use super::ReplayError;
use crate::trace::LeakEvent;
use std::collections::{BTreeMap, BTreeSet};

type Live = BTreeSet<String>;

fn removable(s: &FlatStmt) -> bool {
    matches!(s, FlatStmt::Const(..) | FlatStmt::Copy(..) | FlatStmt::Op(..) | FlatStmt::OpImm(..) | FlatStmt::Load(..))
}

/// Live variables before `b` given those live after it. With `dead` set, records the
/// pre-order ids of removable statements whose result is dead.
fn live_block(b: &[FlatStmt], base: usize, mut live: Live, dead: &mut Option<&mut BTreeSet<usize>>) -> Live {
    let mut ids = Vec::with_capacity(b.len());
    let mut id = base;
    for s in b {
        ids.push(id);
        id += s.count();
    }
    for (s, id) in b.iter().zip(ids).rev() {
        live = live_stmt(s, id, live, dead);
    }
    live
}

fn live_stmt(s: &FlatStmt, id: usize, mut live: Live, dead: &mut Option<&mut BTreeSet<usize>>) -> Live {
    match s {
        FlatStmt::StackAlloc { var, body, .. } => {
            let mut l = live_block(body, id + 1, live, dead);
            l.remove(var);
            l
        }
        FlatStmt::If(c, a, b) => {
            let la = live_block(a, id + 1, live.clone(), dead);
            let lb = live_block(b, id + 1 + block_count(a), live, dead);
            let mut l: Live = la.union(&lb).cloned().collect();
            l.insert(c.clone());
            l
        }
        FlatStmt::While { prelude, cond, body } => {
            let body_base = id + 1 + block_count(prelude);
            // Fixpoint on the liveness at the loop head, then one marking pass.
            let mut head = Live::new();
            loop {
                let after_body = head.clone();
                let at_body = live_block(body, body_base, after_body, &mut None);
                let mut at_test: Live = live.union(&at_body).cloned().collect();
                at_test.insert(cond.clone());
                let new_head = live_block(prelude, id + 1, at_test, &mut None);
                if new_head == head {
                    break;
                }
                head = new_head;
            }
            let at_body = live_block(body, body_base, head.clone(), dead);
            let mut at_test: Live = live.union(&at_body).cloned().collect();
            at_test.insert(cond.clone());
            live_block(prelude, id + 1, at_test, dead)
        }
        FlatStmt::Call { results, args, .. } => {
            for r in results {
                live.remove(r);
            }
            live.extend(args.iter().cloned());
            live
        }
        _ => {
            if let Some(x) = s.def() {
                if removable(s) && !live.contains(x) {
                    if let Some(d) = dead.as_deref_mut() {
                        d.insert(id);
                    }
                    return live;
                }
                live.remove(x);
            }
            live.extend(s.uses().into_iter().map(str::to_string));
            live
        }
    }
}

fn prune(b: &[FlatStmt], base: usize, dead: &BTreeSet<usize>) -> Vec<FlatStmt> {
    let mut out = Vec::new();
    let mut id = base;
    for s in b {
        if !dead.contains(&id) {
            out.push(match s {
                FlatStmt::StackAlloc { size, var, body } => {
                    FlatStmt::StackAlloc { size: *size, var: var.clone(), body: prune(body, id + 1, dead) }
                }
                FlatStmt::If(c, a, e) => FlatStmt::If(c.clone(), prune(a, id + 1, dead), prune(e, id + 1 + block_count(a), dead)),
                FlatStmt::While { prelude, cond, body } => FlatStmt::While {
                    prelude: prune(prelude, id + 1, dead),
                    cond: cond.clone(),
                    body: prune(body, id + 1 + block_count(prelude), dead),
                },
                other => other.clone(),
            });
        }
        id += s.count();
    }
    out
}

/// Dead statement ids per function of `p`.
pub type DeadSet = BTreeMap<String, BTreeSet<usize>>;

pub fn eliminate(p: &FlatProgram) -> (FlatProgram, DeadSet) {
    let mut all = DeadSet::new();
    let functions = p
        .functions
        .iter()
        .map(|f| {
            let mut dead = BTreeSet::new();
            let ret: Live = f.returns.iter().cloned().collect();
            live_block(&f.body, 0, ret, &mut Some(&mut dead));
            let body = prune(&f.body, 0, &dead);
            all.insert(f.name.clone(), dead);
            FlatFn { body, ..f.clone() }
        })
        .collect();
    (FlatProgram { functions, entry: p.entry.clone() }, all)
}

/// Replays the source program and keeps the leakage of surviving statements.
pub struct DceReplay {
    pub source: FlatProgram,
    pub dead: DeadSet,
}

impl Replayer for DceReplay {
    fn lower(&self, k: &[LeakEvent], _low: &mut LowAnswer<'_>) -> Result<Lowered, ReplayError> {
        let w = walk(&self.source, k)?;
        let mut out = Vec::new();
        for item in &w.items {
            match item {
                Item::Prim((f, id), events) => {
                    if !self.dead.get(*f).is_some_and(|d| d.contains(id)) {
                        out.extend(events.iter().copied());
                    }
                }
                Item::Alloc(_, a) => out.push(LeakEvent::CompNonDet(*a)),
                Item::Branch(_, b) => out.push(LeakEvent::Leak(*b)),
                Item::Enter(_) | Item::Exit(_) => {}
            }
        }
        let status = match w.end {
            WalkEnd::Complete => LowStatus::Complete,
            WalkEnd::Exhausted(site) => LowStatus::NeedSource { at_alloc: site.is_some(), answer: None },
        };
        Ok(Lowered { out, status })
    }
}

//! Moves a `random` past the statement that follows it when that statement does not touch
//! the random variable. Admits a predictor transformation but no oracle transformation:
//! the target queries its oracle after leakage the source has not produced yet.

use super::CompileError;
use crate::lang::{FnDef, Program, Stmt};
use crate::predict::{Predictor, PredictorOut};
use crate::trace::{LeakEvent, LeakTrace, Oracle};
use crate::lang::Width;

/// Where the swap happened, in leakage terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReorderSite {
    /// Events leaked before the `random`.
    pub before: usize,
    /// Events leaked by the statement moved in front of it.
    pub moved: usize,
}

/// Leak count of a straight-line statement, or `None` for anything else.
fn straight_line_leaks(s: &Stmt) -> Option<usize> {
    match s {
        Stmt::Skip | Stmt::Input(_) => Some(0),
        Stmt::Assign(_, e) | Stmt::Output(e) => Some(e.leak_count()),
        Stmt::Load(_, e, _) => Some(e.leak_count() + 1),
        Stmt::Store(a, v, _) => Some(a.leak_count() + v.leak_count() + 1),
        _ => None,
    }
}

fn touches(s: &Stmt, x: &str) -> bool {
    match s {
        Stmt::Assign(y, e) | Stmt::Load(y, e, _) => y == x || e.mentions(x),
        Stmt::Input(y) => y == x,
        Stmt::Output(e) => e.mentions(x),
        Stmt::Store(a, v, _) => a.mentions(x) || v.mentions(x),
        _ => true,
    }
}

/// Finds the first `random as x; S` in the entry body, preceded only by straight-line
/// statements, with `S` straight-line and independent of `x`; returns the swapped program.
pub fn reorder_program(p: &Program) -> Result<(Program, ReorderSite), CompileError> {
    let mismatch = |why: &str| CompileError::PatternMismatch(why.to_string());
    let f = p.entry_fn().ok_or_else(|| mismatch("no entry function"))?;
    let stmts: Vec<Stmt> = f.body.flatten_seq().into_iter().cloned().collect();
    let mut before = 0;
    for i in 0..stmts.len() {
        if let Stmt::Random(x) = &stmts[i] {
            let next = stmts.get(i + 1).ok_or_else(|| mismatch("random is the last statement"))?;
            let moved = straight_line_leaks(next).ok_or_else(|| mismatch("statement after random is not straight-line"))?;
            if touches(next, x) {
                return Err(mismatch("statement after random uses the random variable"));
            }
            let mut swapped = stmts.clone();
            swapped.swap(i, i + 1);
            let g = FnDef { body: Stmt::seq(swapped), ..f.clone() };
            let functions = p.functions.iter().map(|h| if h.name == f.name { g.clone() } else { h.clone() }).collect();
            return Ok((Program { functions, entry: p.entry.clone() }, ReorderSite { before, moved }));
        }
        before += straight_line_leaks(&stmts[i]).ok_or_else(|| mismatch("random is preceded by control flow"))?;
    }
    Err(mismatch("no random in the entry function"))
}

/// Source trace to target trace. The target's random answer comes from `low`, or is the
/// source's when no low oracle is given.
pub fn reorder_gamma(site: ReorderSite, k: &[LeakEvent], low: Option<&Oracle>, width: Width) -> Option<LeakTrace> {
    let ReorderSite { before, moved } = site;
    let x = match k.get(before)? {
        LeakEvent::CompNonDet(x) => *x,
        LeakEvent::Leak(_) => return None,
    };
    let moved_end = before + 1 + moved;
    if k.len() < moved_end {
        return None;
    }
    let mut out: LeakTrace = k[..before].to_vec();
    out.extend_from_slice(&k[before + 1..moved_end]);
    let x2 = low.map(|a| a.query(&out, width)).unwrap_or(x);
    out.push(LeakEvent::CompNonDet(x2));
    out.extend_from_slice(&k[moved_end..]);
    Some(out)
}

/// The target predictor: before the random is reached the source predictor is consulted
/// as if the random had answered 0, since the moved statement's leakage cannot depend on it.
pub fn reorder_predictor(site: ReorderSite, p: &Predictor, kl: &[LeakEvent]) -> PredictorOut {
    let ReorderSite { before, moved } = site;
    let m = kl.len();
    if m < before {
        return p.predict(kl);
    }
    let src = |x: u32, tail: &[LeakEvent]| {
        let mut k: LeakTrace = kl[..before].to_vec();
        k.push(LeakEvent::CompNonDet(x));
        k.extend_from_slice(&kl[before..(before + moved).min(m)]);
        k.extend_from_slice(tail);
        k
    };
    if m < before + moved {
        return p.predict(&src(0, &[]));
    }
    if m == before + moved {
        return PredictorOut::PBranch;
    }
    match kl[before + moved] {
        LeakEvent::CompNonDet(x) => p.predict(&src(x, &kl[before + moved + 1..])),
        LeakEvent::Leak(_) => PredictorOut::PEnd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::predict::{trie_from_traces, Predictor};
    use std::sync::Arc;
    use LeakEvent::*;

    #[test]
    fn swaps_the_corpus_pair() {
        let (q, site) = reorder_program(&corpus::program("reorder_p")).unwrap();
        assert_eq!(q.functions[0].body, corpus::program("reorder_p_prime").functions[0].body);
        assert_eq!(site, ReorderSite { before: 0, moved: 1 });
    }

    #[test]
    fn gamma_moves_the_branch() {
        let site = ReorderSite { before: 0, moved: 1 };
        let a = Oracle::table([(vec![Leak(16)], 7)], 3);
        assert_eq!(reorder_gamma(site, &[CompNonDet(5), Leak(16)], Some(&a), Width::W32), Some(vec![Leak(16), CompNonDet(7)]));
        assert_eq!(reorder_gamma(site, &[CompNonDet(5), Leak(16)], None, Width::W32), Some(vec![Leak(16), CompNonDet(5)]));
    }

    #[test]
    fn predictor_examples() {
        let site = ReorderSite { before: 0, moved: 1 };
        let traces = vec![vec![CompNonDet(0), Leak(16)], vec![CompNonDet(1), Leak(16)]];
        let p = Predictor::FromTrie(Arc::new(trie_from_traces(&traces)));
        assert_eq!(reorder_predictor(site, &p, &[]), PredictorOut::PLeak(16));
        assert_eq!(reorder_predictor(site, &p, &[Leak(16)]), PredictorOut::PBranch);
        assert_eq!(reorder_predictor(site, &p, &[Leak(16), CompNonDet(1)]), PredictorOut::PEnd);
    }

    #[test]
    fn dependent_statement_is_rejected() {
        let p = crate::lang::parse("fn main(w) { random as x; z = load(x); }").unwrap();
        assert!(matches!(reorder_program(&p), Err(CompileError::PatternMismatch(_))));
    }
}

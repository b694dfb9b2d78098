//! Predictors, leakage trees and trace tries.
//!
//! A predictor maps a trace prefix to the class of the next event. A trace is predicted
//! when every event matches what the predictor says about the prefix before it and the
//! predictor answers `PEnd` on the whole trace. Leakage trees are the inductive special
//! case; tries built from finitely many traces are the bridge from enumeration to trees.

use crate::lang::{Width, Word};
use crate::trace::{LeakEvent, LeakTrace, Oracle};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictorOut {
    PLeak(Word),
    PBranch,
    PEnd,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageTree {
    Leaf {},
    Leak { w: Word, then: Box<LeakageTree> },
    Branch { cases: BTreeMap<Word, LeakageTree>, default: Box<LeakageTree> },
}

impl LeakageTree {
    pub fn leaf() -> LeakageTree {
        LeakageTree::Leaf {}
    }

    pub fn leak(w: Word, then: LeakageTree) -> LeakageTree {
        LeakageTree::Leak { w, then: Box::new(then) }
    }

    pub fn branch(cases: impl IntoIterator<Item = (Word, LeakageTree)>, default: LeakageTree) -> LeakageTree {
        LeakageTree::Branch { cases: cases.into_iter().collect(), default: Box::new(default) }
    }

    /// A chain of `Leak` nodes ending in a leaf.
    pub fn chain(ws: &[Word]) -> LeakageTree {
        ws.iter().rev().fold(LeakageTree::leaf(), |t, w| LeakageTree::leak(*w, t))
    }

    pub fn depth(&self) -> usize {
        match self {
            LeakageTree::Leaf {} => 0,
            LeakageTree::Leak { then, .. } => 1 + then.depth(),
            LeakageTree::Branch { cases, default } => {
                1 + cases.values().map(|t| t.depth()).max().unwrap_or(0).max(default.depth())
            }
        }
    }

    /// Words appearing in the tree, as leak payloads or branch keys.
    pub fn alphabet(&self) -> BTreeSet<Word> {
        let mut out = BTreeSet::new();
        fn go(t: &LeakageTree, out: &mut BTreeSet<Word>) {
            match t {
                LeakageTree::Leaf {} => {}
                LeakageTree::Leak { w, then } => {
                    out.insert(*w);
                    go(then, out);
                }
                LeakageTree::Branch { cases, default } => {
                    for (k, c) in cases {
                        out.insert(*k);
                        go(c, out);
                    }
                    go(default, out);
                }
            }
        }
        go(self, &mut out);
        out
    }
}

/// Prefix tree of traces; `end` marks nodes where an inserted trace stops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceTrie {
    pub end: bool,
    pub children: BTreeMap<LeakEvent, TraceTrie>,
}

impl TraceTrie {
    pub fn new() -> TraceTrie {
        TraceTrie::default()
    }

    pub fn insert(&mut self, k: &[LeakEvent]) {
        let mut node = self;
        for e in k {
            node = node.children.entry(*e).or_default();
        }
        node.end = true;
    }

    pub fn contains(&self, k: &[LeakEvent]) -> bool {
        self.node(k).is_some_and(|n| n.end)
    }

    pub fn node(&self, k: &[LeakEvent]) -> Option<&TraceTrie> {
        let mut node = self;
        for e in k {
            node = node.children.get(e)?;
        }
        Some(node)
    }

    pub fn is_empty(&self) -> bool {
        !self.end && self.children.is_empty()
    }

    /// The marked traces, in lexicographic order.
    pub fn traces(&self) -> Vec<LeakTrace> {
        let mut out = Vec::new();
        fn go(n: &TraceTrie, prefix: &mut LeakTrace, out: &mut Vec<LeakTrace>) {
            if n.end {
                out.push(prefix.clone());
            }
            for (e, c) in &n.children {
                prefix.push(*e);
                go(c, prefix, out);
                prefix.pop();
            }
        }
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// What the trie says follows `k`: `PEnd` when `k` is a marked leaf or off the trie,
    /// `PBranch` when any `CompNonDet` edge leaves `k`, and `PLeak` for a single `Leak` edge.
    pub fn predict(&self, k: &[LeakEvent]) -> PredictorOut {
        let Some(n) = self.node(k) else {
            return PredictorOut::PEnd;
        };
        if n.children.keys().any(|e| matches!(e, LeakEvent::CompNonDet(_))) {
            return PredictorOut::PBranch;
        }
        match (n.end, n.children.keys().next(), n.children.len()) {
            (false, Some(LeakEvent::Leak(w)), 1) => PredictorOut::PLeak(*w),
            _ => PredictorOut::PEnd,
        }
    }
}

impl Serialize for TraceTrie {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.traces().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TraceTrie {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(trie_from_traces(&Vec::<LeakTrace>::deserialize(d)?))
    }
}

type PredictFn = dyn Fn(&[LeakEvent]) -> PredictorOut + Send + Sync;

#[derive(Clone)]
pub enum Predictor {
    FromTree(Arc<LeakageTree>),
    FromTrie(Arc<TraceTrie>),
    Derived(Arc<PredictFn>),
}

impl Predictor {
    pub fn derived(f: impl Fn(&[LeakEvent]) -> PredictorOut + Send + Sync + 'static) -> Predictor {
        Predictor::Derived(Arc::new(f))
    }

    /// Predicts only the empty trace.
    pub fn constant_end() -> Predictor {
        Predictor::derived(|_| PredictorOut::PEnd)
    }

    pub fn predict(&self, k: &[LeakEvent]) -> PredictorOut {
        match self {
            Predictor::FromTree(t) => tree_predict(t, k),
            Predictor::FromTrie(t) => t.predict(k),
            Predictor::Derived(f) => f(k),
        }
    }
}

impl fmt::Debug for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::FromTree(t) => f.debug_tuple("FromTree").field(t).finish(),
            Predictor::FromTrie(t) => f.debug_tuple("FromTrie").field(&t.traces()).finish(),
            Predictor::Derived(_) => f.write_str("Derived"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PredictorDesc {
    Tree(LeakageTree),
    Trie(TraceTrie),
}

impl Serialize for Predictor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Predictor::FromTree(t) => PredictorDesc::Tree((**t).clone()).serialize(s),
            Predictor::FromTrie(t) => PredictorDesc::Trie((**t).clone()).serialize(s),
            Predictor::Derived(_) => Err(serde::ser::Error::custom("derived predictors have no serialized form")),
        }
    }
}

impl<'de> Deserialize<'de> for Predictor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match PredictorDesc::deserialize(d)? {
            PredictorDesc::Tree(t) => Predictor::FromTree(Arc::new(t)),
            PredictorDesc::Trie(t) => Predictor::FromTrie(Arc::new(t)),
        })
    }
}

/// Whether `p` predicts exactly `k`: each event matches `p` on its prefix and `p(k) = PEnd`.
pub fn predicts(p: &Predictor, k: &[LeakEvent]) -> bool {
    k.iter().enumerate().all(|(i, e)| match (e, p.predict(&k[..i])) {
        (LeakEvent::Leak(x), PredictorOut::PLeak(y)) => *x == y,
        (LeakEvent::CompNonDet(_), PredictorOut::PBranch) => true,
        _ => false,
    }) && p.predict(k) == PredictorOut::PEnd
}

/// The unique trace predicted by `p` and compatible with `a`, found by following the
/// predictor and asking the oracle at each branch. `None` if `fuel` events are not enough.
pub fn run_predictor(p: &Predictor, a: &Oracle, width: Width, fuel: usize) -> Option<LeakTrace> {
    let mut k = Vec::new();
    for _ in 0..=fuel {
        match p.predict(&k) {
            PredictorOut::PEnd => return Some(k),
            PredictorOut::PLeak(x) => k.push(LeakEvent::Leak(x)),
            PredictorOut::PBranch => {
                let x = a.query(&k, width);
                k.push(LeakEvent::CompNonDet(x));
            }
        }
    }
    None
}

/// Inductive path membership.
pub fn tree_member(k: &[LeakEvent], t: &LeakageTree) -> bool {
    match (t, k.split_first()) {
        (LeakageTree::Leaf {}, None) => true,
        (LeakageTree::Leak { w, then }, Some((LeakEvent::Leak(x), rest))) => w == x && tree_member(rest, then),
        (LeakageTree::Branch { cases, default }, Some((LeakEvent::CompNonDet(x), rest))) => {
            tree_member(rest, cases.get(x).unwrap_or(default))
        }
        _ => false,
    }
}

fn tree_predict(t: &LeakageTree, k: &[LeakEvent]) -> PredictorOut {
    match (t, k.split_first()) {
        (LeakageTree::Leaf {}, None) => PredictorOut::PEnd,
        (LeakageTree::Leak { w, .. }, None) => PredictorOut::PLeak(*w),
        (LeakageTree::Branch { .. }, None) => PredictorOut::PBranch,
        (LeakageTree::Leak { w, then }, Some((LeakEvent::Leak(x), rest))) if w == x => tree_predict(then, rest),
        (LeakageTree::Branch { cases, default }, Some((LeakEvent::CompNonDet(x), rest))) => {
            tree_predict(cases.get(x).unwrap_or(default), rest)
        }
        _ => PredictorOut::PEnd,
    }
}

/// The predictor that walks `t` along its argument.
pub fn tree_to_predictor(t: &LeakageTree) -> Predictor {
    Predictor::FromTree(Arc::new(t.clone()))
}

pub fn trie_from_traces<'a>(ks: impl IntoIterator<Item = &'a LeakTrace>) -> TraceTrie {
    let mut t = TraceTrie::new();
    for k in ks {
        t.insert(k);
    }
    t
}

/// What may follow a trie node: an event or the end of the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NextEvent {
    End,
    Event(LeakEvent),
}

/// The trace set has no leakage tree: at `prefix`, two or more incompatible continuations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub prefix: LeakTrace,
    pub events: Vec<NextEvent>,
}

/// Rebuilds a leakage tree whose paths include every trace of the trie. Branch nodes get a
/// `Leaf` default, so `CompNonDet` payloads never seen lead nowhere. The empty trie gives a leaf.
pub fn trie_to_tree(tr: &TraceTrie) -> Result<LeakageTree, Conflict> {
    fn go(n: &TraceTrie, prefix: &mut LeakTrace) -> Result<LeakageTree, Conflict> {
        if n.children.is_empty() {
            return Ok(LeakageTree::leaf());
        }
        let all_branch = n.children.keys().all(|e| matches!(e, LeakEvent::CompNonDet(_)));
        let single_leak = n.children.len() == 1 && matches!(n.children.keys().next(), Some(LeakEvent::Leak(_)));
        if n.end || !(all_branch || single_leak) {
            let mut events: Vec<NextEvent> = n.children.keys().map(|e| NextEvent::Event(*e)).collect();
            if n.end {
                events.insert(0, NextEvent::End);
            }
            return Err(Conflict { prefix: prefix.clone(), events });
        }
        if single_leak {
            let (e, c) = n.children.iter().next().unwrap();
            prefix.push(*e);
            let then = go(c, prefix)?;
            prefix.pop();
            return Ok(LeakageTree::leak(e.payload(), then));
        }
        let mut cases = BTreeMap::new();
        for (e, c) in &n.children {
            prefix.push(*e);
            cases.insert(e.payload(), go(c, prefix)?);
            prefix.pop();
        }
        Ok(LeakageTree::branch(cases, LeakageTree::leaf()))
    }
    go(tr, &mut Vec::new())
}

/// `p1 ++ p2`: follows `p1` until it ends on some prefix `k1`, then asks `p2(k1)` about the rest.
pub fn predictor_concat(p1: Predictor, p2: Arc<dyn Fn(&[LeakEvent]) -> Predictor + Send + Sync>) -> Predictor {
    Predictor::derived(move |k| {
        for i in 0..=k.len() {
            if p1.predict(&k[..i]) == PredictorOut::PEnd {
                return p2(&k[..i]).predict(&k[i..]);
            }
        }
        p1.predict(k)
    })
}

/// The traces a predictor accepts when every branch takes a value from `alphabet`, explored
/// up to `max_len` events. Fails with the first prefix still unfinished at the bound.
pub fn predictor_traces(p: &Predictor, alphabet: &[Word], max_len: usize) -> Result<Vec<LeakTrace>, LeakTrace> {
    let mut out = Vec::new();
    let mut todo = vec![Vec::new()];
    while let Some(k) = todo.pop() {
        let next = p.predict(&k);
        if next == PredictorOut::PEnd {
            out.push(k);
            continue;
        }
        if k.len() >= max_len {
            return Err(k);
        }
        match next {
            PredictorOut::PLeak(x) => {
                let mut k2 = k.clone();
                k2.push(LeakEvent::Leak(x));
                todo.push(k2);
            }
            PredictorOut::PBranch => {
                for x in alphabet.iter().rev() {
                    let mut k2 = k.clone();
                    k2.push(LeakEvent::CompNonDet(*x));
                    todo.push(k2);
                }
            }
            PredictorOut::PEnd => unreachable!(),
        }
    }
    Ok(out)
}

/// The hand-written predictor for `stack_swap`: branch, then leak `x, x+1, x, x+1`.
pub fn stack_swap_predictor(width: Width) -> Predictor {
    Predictor::derived(move |k| {
        let Some(LeakEvent::CompNonDet(x)) = k.first() else {
            return if k.is_empty() { PredictorOut::PBranch } else { PredictorOut::PEnd };
        };
        match k.len() {
            1 | 3 => PredictorOut::PLeak(*x),
            2 | 4 => PredictorOut::PLeak(width.add(*x, 1)),
            _ => PredictorOut::PEnd,
        }
    })
}

/// The `stack_swap` leakage tree, with one case per base in `xs` and a leaf default.
pub fn stack_swap_tree(xs: &[Word], width: Width) -> LeakageTree {
    let case = |x: Word| LeakageTree::chain(&[x, width.add(x, 1), x, width.add(x, 1)]);
    LeakageTree::branch(xs.iter().map(|x| (*x, case(*x))), LeakageTree::leaf())
}

/// All traces of length at most `max_len` over `Leak`/`CompNonDet` events with payloads in `alphabet`.
pub fn all_traces(alphabet: &[Word], max_len: usize) -> Vec<LeakTrace> {
    let events: Vec<LeakEvent> =
        alphabet.iter().flat_map(|w| [LeakEvent::Leak(*w), LeakEvent::CompNonDet(*w)]).collect();
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|k: &LeakTrace| {
                events.iter().map(move |e| {
                    let mut k2 = k.clone();
                    k2.push(*e);
                    k2
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Gives each branch node whose cases all agree that common subtree as its default, so
/// choices never observed are predicted like the observed ones.
pub fn widen_branches(t: &LeakageTree) -> LeakageTree {
    match t {
        LeakageTree::Leaf {} => LeakageTree::leaf(),
        LeakageTree::Leak { w, then } => LeakageTree::leak(*w, widen_branches(then)),
        LeakageTree::Branch { cases, default } => {
            let cases: BTreeMap<Word, LeakageTree> = cases.iter().map(|(x, c)| (*x, widen_branches(c))).collect();
            let mut subtrees = cases.values();
            let default = match subtrees.next() {
                Some(first) if subtrees.all(|c| c == first) => first.clone(),
                _ => widen_branches(default),
            };
            LeakageTree::branch(cases, default)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use LeakEvent::*;
    const W: Width = Width::W32;

    fn ss_trace(x: Word) -> LeakTrace {
        vec![CompNonDet(x), Leak(x), Leak(x + 1), Leak(x), Leak(x + 1)]
    }

    #[test]
    fn predicts_examples() {
        assert!(predicts(&Predictor::constant_end(), &[]));
        let p = stack_swap_predictor(W);
        assert!(predicts(&p, &ss_trace(5)));
        assert!(!predicts(&p, &[CompNonDet(5), Leak(9)]));
    }

    #[test]
    fn run_predictor_examples() {
        let bump = Oracle::Bump { base: 64, stride: 16 };
        assert_eq!(run_predictor(&Predictor::constant_end(), &bump, W, 10), Some(vec![]));
        assert_eq!(run_predictor(&stack_swap_predictor(W), &bump, W, 10), Some(ss_trace(64)));
        let forever = Predictor::derived(|_| PredictorOut::PLeak(0));
        assert_eq!(run_predictor(&forever, &bump, W, 100), None);
    }

    #[test]
    fn tree_membership_examples() {
        assert!(tree_member(&[], &LeakageTree::leaf()));
        assert!(tree_member(&ss_trace(5), &stack_swap_tree(&[5, 6, 7], W)));
        assert!(!tree_member(&[Leak(1)], &LeakageTree::leaf()));
        let t = LeakageTree::leak(7, LeakageTree::leaf());
        let p = tree_to_predictor(&t);
        assert_eq!(p.predict(&[]), PredictorOut::PLeak(7));
        assert_eq!(p.predict(&[Leak(7)]), PredictorOut::PEnd);
        assert_eq!(tree_to_predictor(&LeakageTree::leaf()).predict(&[]), PredictorOut::PEnd);
    }

    #[test]
    fn tree_and_listing_predict_the_same_traces() {
        let alphabet = [5, 6, 7];
        let listing = stack_swap_predictor(W);
        let tree = tree_to_predictor(&stack_swap_tree(&alphabet, W));
        for k in all_traces(&alphabet, 5) {
            assert_eq!(predicts(&listing, &k), predicts(&tree, &k), "{k:?}");
        }
    }

    #[test]
    fn trie_examples() {
        assert!(trie_from_traces(&[]).is_empty());
        let t = trie_from_traces(&[vec![Leak(1)], vec![Leak(1)]]);
        assert_eq!(t.traces(), vec![vec![Leak(1)]]);
        assert_eq!(t.children.len(), 1);

        let conflict = trie_to_tree(&trie_from_traces(&[vec![Leak(1)], vec![Leak(2)]])).unwrap_err();
        assert_eq!(conflict.prefix, vec![]);
        assert_eq!(conflict.events, vec![NextEvent::Event(Leak(1)), NextEvent::Event(Leak(2))]);

        let tree = trie_to_tree(&trie_from_traces(&[ss_trace(64), ss_trace(128)])).unwrap();
        assert_eq!(tree, stack_swap_tree(&[64, 128], W));
        assert_eq!(trie_to_tree(&TraceTrie::new()), Ok(LeakageTree::leaf()));
        let end_vs_leak = trie_to_tree(&trie_from_traces(&[vec![], vec![Leak(3)]])).unwrap_err();
        assert_eq!(end_vs_leak.events, vec![NextEvent::End, NextEvent::Event(Leak(3))]);
    }

    #[test]
    fn concat_examples() {
        let p1 = tree_to_predictor(&LeakageTree::chain(&[1]));
        let p2: Arc<dyn Fn(&[LeakEvent]) -> Predictor + Send + Sync> = Arc::new(|k1: &[LeakEvent]| {
            let first = k1.iter().find_map(|e| if let Leak(w) = e { Some(*w) } else { None }).unwrap_or(0);
            tree_to_predictor(&LeakageTree::chain(&[first]))
        });
        let q = predictor_concat(p1, p2);
        assert!(predicts(&q, &[Leak(1), Leak(1)]));
        assert!(!predicts(&q, &[Leak(1)]));

        let p = stack_swap_predictor(W);
        let p_for_left = p.clone();
        let left = predictor_concat(Predictor::constant_end(), Arc::new(move |_: &[LeakEvent]| p_for_left.clone()));
        let right = predictor_concat(p.clone(), Arc::new(|_: &[LeakEvent]| Predictor::constant_end()));
        for k in all_traces(&[5, 6], 5) {
            assert_eq!(predicts(&left, &k), predicts(&p, &k));
            assert_eq!(predicts(&right, &k), predicts(&p, &k));
        }
    }

    #[test]
    fn a_predictor_without_a_tree() {
        // Ends right after `CompNonDet 0`, keeps branching otherwise.
        let p = Predictor::derived(|k| match k.last() {
            Some(CompNonDet(0)) => PredictorOut::PEnd,
            _ => PredictorOut::PBranch,
        });
        for bound in 1..8 {
            let stuck = predictor_traces(&p, &[0, 1], bound).unwrap_err();
            assert_eq!(stuck, vec![CompNonDet(1); bound]);
        }
        let ok = predictor_traces(&stack_swap_predictor(W), &[5, 6], 5).unwrap();
        assert_eq!(trie_to_tree(&trie_from_traces(&ok)).unwrap(), stack_swap_tree(&[5, 6], W));
    }

    #[test]
    fn tree_json() {
        let t = LeakageTree::branch([(64, LeakageTree::chain(&[64]))], LeakageTree::leaf());
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"branch":{"cases":{"64":{"leak":{"w":64,"then":{"leaf":{}}}}},"default":{"leaf":{}}}}"#);
        assert_eq!(serde_json::from_str::<LeakageTree>(&s).unwrap(), t);
    }
}

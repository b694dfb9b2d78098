//! Brute-force constant-time verdicts over finite secret spaces.
//!
//! Every notion groups executions by a public key (public arguments, a projection of the
//! I/O trace, and optionally a declassified predicate of the secret state) and demands that
//! some observation be a function of that key alone.

use crate::interp::{
    enumerate_runs, enumerate_with, replay, ChoiceUniverse, ExecEnv, InputPolicy, MemState, Outcome, Resolution, Run,
};
use crate::lang::Word;
use crate::predict::{trie_from_traces, trie_to_tree, LeakageTree, NextEvent};
use crate::trace::{inputs_of, outputs_of, split_events, IoEvent, LeakEvent, LeakTrace, Oracle};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

type IoKeyFn = dyn Fn(&[IoEvent]) -> Vec<Word> + Send + Sync;
type DeclassifyFn = dyn Fn(&[Word], &MemState, &[IoEvent]) -> Vec<Word> + Send + Sync;

/// Which parts of an execution an observer is entitled to.
#[derive(Clone)]
pub struct PublicProjection {
    /// Indices of the public entry arguments.
    pub public_args: Vec<usize>,
    /// The public part of the I/O trace.
    pub io_key: Arc<IoKeyFn>,
    /// A predicate of the secret state the leakage may depend on, e.g. an equality bit.
    pub declassify: Option<Arc<DeclassifyFn>>,
}

impl PublicProjection {
    /// Public arguments only; I/O carries nothing public.
    pub fn args(public_args: &[usize]) -> PublicProjection {
        PublicProjection { public_args: public_args.to_vec(), io_key: Arc::new(|_| Vec::new()), declassify: None }
    }

    pub fn with_io_key(mut self, f: impl Fn(&[IoEvent]) -> Vec<Word> + Send + Sync + 'static) -> Self {
        self.io_key = Arc::new(f);
        self
    }

    /// The values of the `In` events at the given positions are public.
    pub fn with_public_inputs(self, positions: &[usize]) -> Self {
        let positions = positions.to_vec();
        self.with_io_key(move |io| {
            let ins = inputs_of(io);
            positions.iter().map(|i| ins.get(*i).copied().unwrap_or(Word::MAX)).collect()
        })
    }

    /// Only the number of `In` events is public.
    pub fn with_input_count(self) -> Self {
        self.with_io_key(|io| vec![inputs_of(io).len() as Word])
    }

    /// Only the length of the input line is public: the number of inputs before the first
    /// `terminator`, or all of them when none arrives.
    pub fn with_line_length(self, terminator: Word) -> Self {
        self.with_io_key(move |io| {
            let ins = inputs_of(io);
            vec![ins.iter().position(|c| *c == terminator).unwrap_or(ins.len()) as Word]
        })
    }

    pub fn with_declassify(
        mut self,
        f: impl Fn(&[Word], &MemState, &[IoEvent]) -> Vec<Word> + Send + Sync + 'static,
    ) -> Self {
        self.declassify = Some(Arc::new(f));
        self
    }

    pub fn key(&self, args: &[Word], mem: &MemState, io: &[IoEvent]) -> PublicKey {
        PublicKey {
            args: self.public_args.iter().map(|i| args.get(*i).copied().unwrap_or(0)).collect(),
            io: (self.io_key)(io),
            declassified: self.declassify.as_ref().map(|f| f(args, mem, io)).unwrap_or_default(),
            oracle: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PublicKey {
    pub args: Vec<Word>,
    pub io: Vec<Word>,
    pub declassified: Vec<Word>,
    /// Index of the oracle, for the oracle-indexed notions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<usize>,
}

/// One point of the secret space: complete entry arguments, initial memory and inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SecretAssignment {
    pub args: Vec<Word>,
    pub memory: MemState,
    pub inputs: InputPolicy,
}

impl SecretAssignment {
    pub fn env(&self, base: &ExecEnv) -> ExecEnv {
        base.clone().with_memory(self.memory.clone()).with_inputs(self.inputs.clone())
    }
}

pub type SecretSpace = Vec<SecretAssignment>;

/// Secret spaces where every byte of the given regions ranges over `values`.
pub fn memory_fills(
    args: &[Word],
    base: &MemState,
    inputs: &InputPolicy,
    regions: &[(Word, u32)],
    values: &[u8],
) -> SecretSpace {
    let addrs: Vec<Word> = regions.iter().flat_map(|(a, n)| (0..*n).map(move |i| a + i)).collect();
    let mut fills: Vec<MemState> = vec![base.clone()];
    for a in addrs {
        fills = fills
            .into_iter()
            .flat_map(|m| {
                values.iter().map(move |v| {
                    let mut m = m.clone();
                    m.poke(a, &[*v], crate::lang::Width::W32);
                    m
                })
            })
            .collect();
    }
    fills
        .into_iter()
        .map(|memory| SecretAssignment { args: args.to_vec(), memory, inputs: inputs.clone() })
        .collect()
}

/// A replayable execution: which assignment, which oracle (if any), which choices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Execution {
    pub assignment: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<usize>,
    pub choices: Vec<usize>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Evidence {
    Trace(LeakTrace),
    Tree(LeakageTree),
    /// Graph of the map from `CompNonDet` payloads to `Leak` payloads.
    Function(Vec<(Vec<Word>, Vec<Word>)>),
    Outputs(Vec<Word>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub key: PublicKey,
    pub evidence: Evidence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CtVerdict {
    ConstantTime { witnesses: Vec<Witness> },
    Leaky { key: PublicKey, reason: String, left: Box<Execution>, right: Box<Execution> },
    Inconclusive { reason: String, witness: Option<Box<Execution>> },
}

impl CtVerdict {
    pub fn is_constant_time(&self) -> bool {
        matches!(self, CtVerdict::ConstantTime { .. })
    }

    pub fn is_leaky(&self) -> bool {
        matches!(self, CtVerdict::Leaky { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CtVerdict::ConstantTime { .. } => "constant_time",
            CtVerdict::Leaky { .. } => "leaky",
            CtVerdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// How executions of a check were resolved; needed to replay them.
#[derive(Clone, Copy, Debug)]
pub enum Resolver<'a> {
    Oracles(&'a [Oracle]),
    Universe(&'a ChoiceUniverse),
}

/// Re-runs a recorded execution.
pub fn replay_execution(
    base: &ExecEnv,
    secrets: &[SecretAssignment],
    resolver: Resolver<'_>,
    ex: &Execution,
) -> Outcome {
    let a = &secrets[ex.assignment];
    let env = a.env(base);
    let res = match (resolver, ex.oracle) {
        (Resolver::Oracles(os), Some(j)) => Resolution::Oracle(&os[j]),
        (Resolver::Universe(u), _) => Resolution::Universe(u),
        (Resolver::Oracles(_), None) => panic!("execution was not oracle-driven"),
    };
    replay(&env, &a.args, res, &ex.choices)
}

struct Grouped {
    classes: BTreeMap<PublicKey, Vec<Execution>>,
}

/// Runs every assignment (under each oracle, if any) and groups terminated runs by key.
fn collect(
    base: &ExecEnv,
    publics: &PublicProjection,
    secrets: &[SecretAssignment],
    resolver: Resolver<'_>,
) -> Result<Grouped, CtVerdict> {
    if secrets.is_empty() {
        return Err(CtVerdict::Inconclusive { reason: "empty secret space".into(), witness: None });
    }
    let mut classes: BTreeMap<PublicKey, Vec<Execution>> = BTreeMap::new();
    let mut benign_keys: Vec<PublicKey> = Vec::new();
    let oracle_count = match resolver {
        Resolver::Oracles(os) => os.len(),
        Resolver::Universe(_) => 1,
    };
    for j in 0..oracle_count {
        for (i, a) in secrets.iter().enumerate() {
            let env = a.env(base);
            let (runs, oracle): (Vec<Run>, Option<usize>) = match resolver {
                Resolver::Oracles(os) => (enumerate_with(&env, &a.args, Resolution::Oracle(&os[j])), Some(j)),
                Resolver::Universe(u) => (enumerate_runs(&env, &a.args, u), None),
            };
            for r in runs {
                let ex = Execution { assignment: i, oracle, choices: r.choices, outcome: r.outcome };
                let mut key = publics.key(&a.args, &a.memory, ex.outcome.io());
                key.oracle = oracle;
                if ex.outcome.is_failure() {
                    let reason = format!("an execution ended {}", ex.outcome.status());
                    return Err(CtVerdict::Inconclusive { reason, witness: Some(Box::new(ex)) });
                }
                if ex.outcome.is_benign() {
                    benign_keys.push(key);
                    continue;
                }
                classes.entry(key).or_default().push(ex);
            }
        }
    }
    if let Some(k) = benign_keys.into_iter().find(|k| !classes.contains_key(k)) {
        return Err(CtVerdict::Inconclusive {
            reason: format!("every execution of public class {k:?} got stuck for benign reasons"),
            witness: None,
        });
    }
    Ok(Grouped { classes })
}

/// Requires `observe` to be constant on every class.
fn uniform<T: PartialEq + Clone>(
    g: Grouped,
    what: &str,
    observe: impl Fn(&Outcome) -> T,
    evidence: impl Fn(T) -> Evidence,
) -> CtVerdict {
    let mut witnesses = Vec::new();
    for (key, exs) in g.classes {
        let first = &exs[0];
        let v = observe(&first.outcome);
        if let Some(other) = exs.iter().find(|e| observe(&e.outcome) != v) {
            return CtVerdict::Leaky {
                key,
                reason: format!("two executions in one public class differ in {what}"),
                left: Box::new(first.clone()),
                right: Box::new(other.clone()),
            };
        }
        witnesses.push(Witness { key, evidence: evidence(v) });
    }
    CtVerdict::ConstantTime { witnesses }
}

/// Leakage must be a function of the public key. Only for programs without
/// compiler-resolved nondeterminism.
pub fn check_naive_ct(env: &ExecEnv, publics: &PublicProjection, secrets: &[SecretAssignment]) -> CtVerdict {
    if env.program.has_compiler_nondet() {
        return CtVerdict::Inconclusive {
            reason: "program uses stackalloc or random; naive constant time does not apply".into(),
            witness: None,
        };
    }
    let u = ChoiceUniverse::default();
    match collect(env, publics, secrets, Resolver::Universe(&u)) {
        Ok(g) => uniform(g, "leakage", |o| o.leak().clone(), Evidence::Trace),
        Err(v) => v,
    }
}

/// Leakage must be a function of the oracle and the public key.
pub fn check_oracle_ct(
    env: &ExecEnv,
    publics: &PublicProjection,
    secrets: &[SecretAssignment],
    oracles: &[Oracle],
) -> CtVerdict {
    match collect(env, publics, secrets, Resolver::Oracles(oracles)) {
        Ok(g) => uniform(g, "leakage", |o| o.leak().clone(), Evidence::Trace),
        Err(v) => v,
    }
}

/// Printed values must be a function of the oracle and the public key.
pub fn check_output_independence(
    env: &ExecEnv,
    publics: &PublicProjection,
    secrets: &[SecretAssignment],
    oracles: &[Oracle],
) -> CtVerdict {
    match collect(env, publics, secrets, Resolver::Oracles(oracles)) {
        Ok(g) => uniform(g, "outputs", |o| outputs_of(o.io()), Evidence::Outputs),
        Err(v) => v,
    }
}

/// The pooled traces of each public class must form a leakage tree.
pub fn check_predictor_ct(
    env: &ExecEnv,
    publics: &PublicProjection,
    secrets: &[SecretAssignment],
    u: &ChoiceUniverse,
) -> CtVerdict {
    let g = match collect(env, publics, secrets, Resolver::Universe(u)) {
        Ok(g) => g,
        Err(v) => return v,
    };
    let mut witnesses = Vec::new();
    for (key, exs) in g.classes {
        let traces: Vec<LeakTrace> = exs.iter().map(|e| e.outcome.leak().clone()).collect();
        match trie_to_tree(&trie_from_traces(&traces)) {
            Ok(tree) => witnesses.push(Witness { key, evidence: Evidence::Tree(tree) }),
            Err(c) => {
                let follows = |e: &Execution, next: &NextEvent| {
                    let k = e.outcome.leak();
                    k.starts_with(&c.prefix)
                        && match next {
                            NextEvent::End => k.len() == c.prefix.len(),
                            NextEvent::Event(ev) => k.get(c.prefix.len()) == Some(ev),
                        }
                };
                let left = exs.iter().find(|e| follows(e, &c.events[0])).expect("conflict comes from a trace");
                let right = exs.iter().find(|e| follows(e, &c.events[1])).expect("conflict comes from a trace");
                let shown: Vec<String> = c
                    .events
                    .iter()
                    .map(|e| match e {
                        NextEvent::End => "End".to_string(),
                        NextEvent::Event(ev) => ev.to_string(),
                    })
                    .collect();
                return CtVerdict::Leaky {
                    key,
                    reason: format!(
                        "no leakage tree: after {} the traces continue with {}",
                        crate::trace::show_trace(&c.prefix),
                        shown.join(" / ")
                    ),
                    left: Box::new(left.clone()),
                    right: Box::new(right.clone()),
                };
            }
        }
    }
    CtVerdict::ConstantTime { witnesses }
}

/// A deliberately flawed notion: the `Leak` payloads must be a function of the
/// `CompNonDet` payloads, ignoring their interleaving. Accepts programs that leak secrets
/// through the number of allocations.
pub fn check_flawed_ct(
    env: &ExecEnv,
    publics: &PublicProjection,
    secrets: &[SecretAssignment],
    u: &ChoiceUniverse,
) -> CtVerdict {
    let g = match collect(env, publics, secrets, Resolver::Universe(u)) {
        Ok(g) => g,
        Err(v) => return v,
    };
    let mut witnesses = Vec::new();
    for (key, exs) in g.classes {
        let mut graph: BTreeMap<Vec<Word>, (Vec<Word>, &Execution)> = BTreeMap::new();
        for e in &exs {
            let (b, l) = split_events(e.outcome.leak());
            match graph.get(&b) {
                Some((l0, e0)) if *l0 != l => {
                    return CtVerdict::Leaky {
                        key,
                        reason: "equal CompNonDet payloads, different Leak payloads".into(),
                        left: Box::new((*e0).clone()),
                        right: Box::new(e.clone()),
                    }
                }
                Some(_) => {}
                None => {
                    graph.insert(b, (l, e));
                }
            }
        }
        let table = graph.into_iter().map(|(b, (l, _))| (b, l)).collect();
        witnesses.push(Witness { key, evidence: Evidence::Function(table) });
    }
    CtVerdict::ConstantTime { witnesses }
}

/// Convenience: the leak traces of a witness set, keyed by public key.
pub fn witness_traces(v: &CtVerdict) -> Vec<(PublicKey, LeakTrace)> {
    match v {
        CtVerdict::ConstantTime { witnesses } => witnesses
            .iter()
            .filter_map(|w| match &w.evidence {
                Evidence::Trace(k) => Some((w.key.clone(), k.clone())),
                _ => None,
            })
            .collect(),
        _ => vec![],
    }
}

/// Whether `k` has the given leak payloads and nondet payloads (used by reports).
pub fn has_shape(k: &[LeakEvent], branches: &[Word], leaks: &[Word]) -> bool {
    split_events(k) == (branches.to_vec(), leaks.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::lang::{parse, Width};
    use crate::trace::LeakEvent::*;

    #[test]
    fn swap_is_naive_constant_time() {
        let sc = corpus::scenario("swap");
        let secrets = memory_fills(&sc.args, &MemState::new(), &sc.env.inputs, &[(16, 4), (20, 4)], &[0]);
        let mut space = Vec::new();
        for a in [0u32, 1] {
            for b in [0u32, 1] {
                let mut m = MemState::new();
                m.poke_word(16, 4, a, Width::W32);
                m.poke_word(20, 4, b, Width::W32);
                space.push(SecretAssignment { memory: m, ..secrets[0].clone() });
            }
        }
        let v = check_naive_ct(&sc.env, &PublicProjection::args(&[0, 1]), &space);
        assert_eq!(witness_traces(&v).len(), 1);
        assert_eq!(witness_traces(&v)[0].1, vec![Leak(16), Leak(20), Leak(16), Leak(20)]);
    }

    #[test]
    fn password_checker_depends_only_on_line_length() {
        let sc = corpus::scenario("password_checker");
        let secrets: Vec<SecretAssignment> = [*corpus::PASSWORD, [b'h'; 8]]
            .iter()
            .map(|pw| {
                let mut m = MemState::new();
                m.poke(corpus::PASSWORD_ADDR, pw, Width::W32);
                SecretAssignment { args: sc.args.clone(), memory: m, inputs: sc.env.inputs.clone() }
            })
            .collect();
        let u = ChoiceUniverse::with_bases(vec![64]);
        let by_length = PublicProjection::args(&[0]).with_line_length(10);
        assert!(check_predictor_ct(&sc.env, &by_length, &secrets, &u).is_constant_time());
        let by_count = PublicProjection::args(&[0]).with_input_count();
        assert!(check_predictor_ct(&sc.env, &by_count, &secrets, &u).is_leaky());
    }

    #[test]
    fn printing_a_secret_is_leaky() {
        let p = parse("fn main(a) { x = load(a); output(x); }").unwrap();
        let env = ExecEnv::new(p);
        let space = memory_fills(&[16], &MemState::new(), &InputPolicy::default(), &[(16, 4)], &[0, 1]);
        let v = check_output_independence(&env, &PublicProjection::args(&[0]), &space, &[Oracle::Seeded(0)]);
        assert!(v.is_leaky());
    }

    #[test]
    fn leaky_witnesses_replay() {
        let sc = corpus::scenario("countdown");
        let space: SecretSpace = [1, 2]
            .iter()
            .map(|x| SecretAssignment { args: vec![*x], memory: MemState::new(), inputs: InputPolicy::default() })
            .collect();
        let oracles = [Oracle::Bump { base: 64, stride: 16 }];
        let v = check_oracle_ct(&sc.env, &PublicProjection::args(&[]), &space, &oracles);
        let CtVerdict::Leaky { left, right, .. } = v else { panic!("expected leaky") };
        for e in [left, right] {
            assert_eq!(replay_execution(&sc.env, &space, Resolver::Oracles(&oracles), &e), e.outcome);
        }
    }

    #[test]
    fn naive_rejects_allocation() {
        let sc = corpus::scenario("stack_swap");
        let space = vec![SecretAssignment { args: vec![], memory: MemState::new(), inputs: InputPolicy::default() }];
        assert!(matches!(
            check_naive_ct(&sc.env, &PublicProjection::args(&[]), &space),
            CtVerdict::Inconclusive { .. }
        ));
    }
}

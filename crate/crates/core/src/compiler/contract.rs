//! Differential checks of pass contracts over enumerated executions.
//!
//! Every terminated source execution is replayed at the target level with the same
//! inputs; the target must produce the same I/O and exactly the leakage that the pass's
//! gamma computes from the source leakage and the context alone.

use super::{Level, LowContext, LowPredictor, LowTrace, PassArtifact};
use crate::interp::{exec_oracle, exec_oracle_all, ContentPolicy, ExecEnv, InputPolicy, Outcome};
use crate::lang::{Program, Word};
use crate::machine::{entry_state, mrun, MachineStatus};
use crate::predict::{predicts, trie_from_traces, trie_to_tree, tree_to_predictor, widen_branches};
use crate::trace::{inputs_of, outputs_of, IoTrace, LeakEvent, LeakTrace, Oracle};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

const MACHINE_FUEL: u64 = 1 << 22;
/// Failures kept verbatim in a report.
const KEEP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Contract {
    Leakage,
    Oracle,
    Predictor,
}

impl FromStr for Contract {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "leakage" => Ok(Contract::Leakage),
            "oracle" => Ok(Contract::Oracle),
            "predictor" => Ok(Contract::Predictor),
            other => Err(format!("unknown contract `{other}` (leakage, oracle, predictor)")),
        }
    }
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Contract::Leakage => "leakage",
            Contract::Oracle => "oracle",
            Contract::Predictor => "predictor",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractReport {
    pub pass: String,
    pub contract: Contract,
    /// Executions (or query points, or predictor groups) compared.
    pub cases: usize,
    /// Source executions that did not terminate, or whose target run ran out of input.
    pub skipped: usize,
    pub failed: usize,
    pub failures: Vec<String>,
}

impl ContractReport {
    fn new(pass: &str, contract: Contract) -> ContractReport {
        ContractReport { pass: pass.to_string(), contract, cases: 0, skipped: 0, failed: 0, failures: Vec::new() }
    }

    fn fail(&mut self, msg: String) {
        self.failed += 1;
        if self.failures.len() < KEEP {
            self.failures.push(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0
    }

    pub fn merge(&mut self, other: ContractReport) {
        self.cases += other.cases;
        self.skipped += other.skipped;
        self.failed += other.failed;
        for f in other.failures {
            if self.failures.len() < KEEP {
                self.failures.push(f);
            }
        }
    }
}

impl fmt::Display for ContractReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "pass" } else { "FAIL" };
        write!(
            f,
            "{} {} contract: {verdict} ({} cases, {} skipped, {} failed)",
            self.pass, self.contract, self.cases, self.skipped, self.failed
        )?;
        if let Some(first) = self.failures.first() {
            write!(f, "\n  first failure: {first}")?;
        }
        Ok(())
    }
}

/// What a contract check ranges over.
#[derive(Clone, Debug)]
pub struct Setup {
    /// Environment of the original program; its program is replaced by each pass's source.
    pub env: ExecEnv,
    pub args: Vec<Vec<Word>>,
    /// Low-level oracles.
    pub contexts: Vec<Oracle>,
}

pub fn default_contexts() -> Vec<Oracle> {
    vec![Oracle::Bump { base: 64, stride: 16 }, Oracle::Seeded(7)]
}

/// The context a pass sees for low oracle `a`: machine targets also get the layout.
pub fn low_context(art: &PassArtifact, a: &Oracle) -> LowContext {
    let mut ctx = LowContext::with_oracle(a.clone());
    if let Some(l) = art.layout() {
        ctx.sp = Some(l.stack.sp0);
        ctx.position = Some(l.base);
    }
    ctx
}

/// The oracle the source runs under: the transformed low oracle, or the low oracle itself
/// for a pass without an oracle transformation.
fn source_oracle(art: &PassArtifact, ctx: &LowContext) -> Result<Oracle, String> {
    match art.transform_oracle(ctx) {
        Some(Ok(a)) => Ok(a),
        Some(Err(e)) => Err(format!("oracle transformation failed: {e}")),
        None => ctx.oracle.clone().ok_or_else(|| "no low oracle".to_string()),
    }
}

fn level_env(base: &ExecEnv, level: &Level) -> Option<ExecEnv> {
    level.as_program().map(|p| ExecEnv { program: Arc::new(p), ..base.clone() })
}

#[derive(Clone, Debug)]
pub struct TargetRun {
    pub status: String,
    pub benign: bool,
    pub terminated: bool,
    pub io: IoTrace,
    pub leak: LowTrace,
    pub returns: Option<Vec<Word>>,
}

/// Runs the pass's target with scripted `inputs` under low oracle `a`. Fresh stack memory
/// is zero at both target levels.
pub fn run_target(art: &PassArtifact, env: &ExecEnv, args: &[Word], inputs: &[Word], a: &Oracle) -> TargetRun {
    match &art.target {
        Level::Machine(m) => {
            let layout = art.layout().expect("machine targets carry a layout");
            let out = mrun(m, entry_state(m, &env.memory, args, layout.stack), inputs, MACHINE_FUEL);
            let returns = (out.status == MachineStatus::Terminated).then(|| crate::machine::returns_of(m, &out.state));
            TargetRun {
                status: format!("{:?}", out.status),
                benign: out.status == MachineStatus::BenignStuck,
                terminated: out.status == MachineStatus::Terminated,
                io: out.state.io,
                leak: LowTrace::Machine(out.state.leak),
                returns,
            }
        }
        level => {
            let mut tenv = level_env(env, level).expect("interpretable level");
            tenv.inputs = InputPolicy::Script(inputs.to_vec());
            tenv.contents = ContentPolicy::Constant(0);
            let o = exec_oracle(&tenv, args, a);
            TargetRun {
                status: o.status().to_string(),
                benign: o.is_benign(),
                terminated: o.is_terminated(),
                io: o.io().clone(),
                leak: LowTrace::Leak(o.leak().clone()),
                returns: o.returns().map(<[Word]>::to_vec),
            }
        }
    }
}

struct Pair {
    ctx: usize,
    args: Vec<Word>,
    source: Outcome,
    target: TargetRun,
}

/// Terminated source executions under each context, paired with their target runs.
fn paired_runs(art: &PassArtifact, setup: &Setup, report: &mut ContractReport) -> Vec<Pair> {
    let Some(src_env) = level_env(&setup.env, &art.source) else {
        report.fail("pass source is not interpretable".into());
        return Vec::new();
    };
    let mut out = Vec::new();
    for (ci, a) in setup.contexts.iter().enumerate() {
        let ctx = low_context(art, a);
        let src_oracle = match source_oracle(art, &ctx) {
            Ok(o) => o,
            Err(e) => {
                report.fail(format!("under {a:?}: {e}"));
                continue;
            }
        };
        for args in &setup.args {
            for run in exec_oracle_all(&src_env, args, &src_oracle) {
                if !run.outcome.is_terminated() {
                    report.skipped += 1;
                    continue;
                }
                let target = run_target(art, &setup.env, args, &inputs_of(run.outcome.io()), a);
                if target.benign {
                    report.skipped += 1;
                    continue;
                }
                out.push(Pair { ctx: ci, args: args.clone(), source: run.outcome, target });
            }
        }
    }
    out
}

/// Target I/O equals source I/O and target leakage equals gamma of the source leakage.
pub fn check_leakage(art: &PassArtifact, setup: &Setup) -> ContractReport {
    let mut report = ContractReport::new(&art.name, Contract::Leakage);
    for pair in paired_runs(art, setup, &mut report) {
        report.cases += 1;
        let a = &setup.contexts[pair.ctx];
        let ctx = low_context(art, a);
        let where_ = format!("args {:?} under {a:?}, inputs {:?}", pair.args, inputs_of(pair.source.io()));
        if !pair.target.terminated {
            report.fail(format!("{where_}: target {}", pair.target.status));
            continue;
        }
        if &pair.target.io != pair.source.io() {
            report.fail(format!(
                "{where_}: target outputs {:?}, source outputs {:?}",
                outputs_of(&pair.target.io),
                outputs_of(pair.source.io())
            ));
            continue;
        }
        match art.gamma(pair.source.leak(), &ctx) {
            Ok(expected) if expected == pair.target.leak => {}
            Ok(expected) => report.fail(format!(
                "{where_}: target leak ({} events) differs from gamma of the source leak ({} events)",
                pair.target.leak.len(),
                expected.len()
            )),
            Err(e) => report.fail(format!("{where_}: gamma failed: {e}")),
        }
    }
    report
}

/// The leakage contract with the source under the transformed oracle, plus: the
/// transformed oracle's answers are a function of the low oracle and the queried prefix.
pub fn check_oracle(art: &PassArtifact, setup: &Setup) -> ContractReport {
    let mut report = ContractReport::new(&art.name, Contract::Oracle);
    if art.oracle_transform.is_none() {
        report.fail("the pass has no oracle transformation".into());
        return report;
    }
    let mut leakage = check_leakage(art, setup);
    leakage.contract = Contract::Oracle;
    report.merge(leakage);
    let Some(src_env) = level_env(&setup.env, &art.source) else {
        return report;
    };
    for a in &setup.contexts {
        let ctx = low_context(art, a);
        let (Ok(first), Ok(second)) = (source_oracle(art, &ctx), source_oracle(art, &ctx)) else {
            continue;
        };
        let mut points: Vec<LeakTrace> = Vec::new();
        for args in &setup.args {
            for run in exec_oracle_all(&src_env, args, &first) {
                let k = run.outcome.leak();
                points.extend((0..=k.len()).map(|i| k[..i].to_vec()));
            }
        }
        points.sort();
        points.dedup();
        for k in points {
            report.cases += 1;
            let (x, y) = (first.query(&k, art.width), second.query(&k, art.width));
            if x != y {
                report.fail(format!("under {a:?}: transformed oracle answers {x} and {y} at the same prefix"));
            }
        }
    }
    report
}

fn low_predicts(p: &LowPredictor, k: &LowTrace) -> bool {
    match (p, k) {
        (LowPredictor::Leak(p), LowTrace::Leak(k)) => predicts(p, k),
        (LowPredictor::Machine(t), LowTrace::Machine(m)) => t == m,
        _ => false,
    }
}

/// Pools the source traces of each input vector into one predictor; its transformation
/// must predict every corresponding target trace. Pools with no single leakage tree fall
/// back to one predictor per source trace.
pub fn check_predictor(art: &PassArtifact, setup: &Setup) -> ContractReport {
    let mut report = ContractReport::new(&art.name, Contract::Predictor);
    if art.predictor_transform.is_none() {
        report.fail("the pass has no predictor transformation".into());
        return report;
    }
    let pairs = paired_runs(art, setup, &mut report);
    let mut groups: BTreeMap<(Vec<Word>, Vec<Word>), Vec<&Pair>> = BTreeMap::new();
    for p in &pairs {
        groups.entry((p.args.clone(), inputs_of(p.source.io()))).or_default().push(p);
    }
    let contexts: Vec<LowContext> = setup.contexts.iter().map(|a| low_context(art, a)).collect();
    for ((args, inputs), members) in groups {
        let traces: Vec<LeakTrace> = members.iter().map(|p| p.source.leak().clone()).collect();
        let pools: Vec<(Vec<LeakTrace>, Vec<&Pair>)> = match trie_to_tree(&trie_from_traces(&traces)) {
            Ok(_) => vec![(traces.clone(), members.clone())],
            Err(_) => members.iter().map(|p| (vec![p.source.leak().clone()], vec![*p])).collect(),
        };
        for (pool, targets) in pools {
            let tree = trie_to_tree(&trie_from_traces(&pool)).expect("pool has a tree");
            let source_pred = tree_to_predictor(&widen_branches(&tree));
            debug_assert!(pool.iter().all(|k| predicts(&source_pred, k)));
            let mut lowered: BTreeMap<usize, Option<LowPredictor>> = BTreeMap::new();
            for p in targets {
                report.cases += 1;
                let where_ = format!("args {args:?}, inputs {inputs:?} under {:?}", setup.contexts[p.ctx]);
                let lp = lowered.entry(p.ctx).or_insert_with(|| {
                    art.transform_predictor(&source_pred, &contexts[p.ctx]).and_then(Result::ok)
                });
                match lp {
                    Some(lp) if low_predicts(lp, &p.target.leak) => {}
                    Some(_) => report.fail(format!("{where_}: transformed predictor does not predict the target trace")),
                    None => report.fail(format!("{where_}: predictor transformation failed")),
                }
            }
        }
    }
    report
}

pub fn check_contract(art: &PassArtifact, setup: &Setup, c: Contract) -> ContractReport {
    match c {
        Contract::Leakage => check_leakage(art, setup),
        Contract::Oracle => check_oracle(art, setup),
        Contract::Predictor => check_predictor(art, setup),
    }
}

/// Why no oracle transformation exists for the reordering pass: two runs whose source
/// queries its oracle at the same prefix, while the target prints different answers.
#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub oracle: Vec<(LeakTrace, Word)>,
    pub default: Word,
    pub runs: Vec<CounterexampleRun>,
    /// The derived contradiction, if the runs exhibit one.
    pub contradiction: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleRun {
    pub args: Vec<Word>,
    /// Prefix at which the source queried its oracle.
    pub source_query: Option<LeakTrace>,
    pub source_outputs: Vec<Word>,
    pub target_outputs: Vec<Word>,
}

fn first_query(k: &[LeakEvent]) -> Option<LeakTrace> {
    k.iter().position(|e| matches!(e, LeakEvent::CompNonDet(_))).map(|i| k[..i].to_vec())
}

fn answer_printed(k: &[LeakEvent], outputs: &[Word]) -> bool {
    let answer = k.iter().find_map(|e| match e {
        LeakEvent::CompNonDet(x) => Some(*x),
        LeakEvent::Leak(_) => None,
    });
    answer.is_some() && outputs == [answer.unwrap()]
}

/// Runs source `p` and target `q` under the same table oracle for each argument vector.
/// Preserving I/O would force a transformed oracle to answer every target output at the
/// source's common query prefix; two different target outputs make that impossible.
pub fn reorder_counterexample(env: &ExecEnv, p: &Program, q: &Program, args: &[Vec<Word>], table: &[(LeakTrace, Word)], default: Word) -> Counterexample {
    let a = Oracle::table(table.iter().cloned(), default);
    let senv = ExecEnv { program: Arc::new(p.clone()), ..env.clone() };
    let tenv = ExecEnv { program: Arc::new(q.clone()), ..env.clone() };
    let mut runs = Vec::new();
    let mut printed = true;
    for v in args {
        let s = exec_oracle(&senv, v, &a);
        let t = exec_oracle(&tenv, v, &a);
        printed &= answer_printed(s.leak(), &outputs_of(s.io())) && answer_printed(t.leak(), &outputs_of(t.io()));
        runs.push(CounterexampleRun {
            args: v.clone(),
            source_query: first_query(s.leak()),
            source_outputs: outputs_of(s.io()),
            target_outputs: outputs_of(t.io()),
        });
    }
    let mut contradiction = None;
    'outer: for (i, r1) in runs.iter().enumerate() {
        for r2 in &runs[i + 1..] {
            if r1.source_query.is_some() && r1.source_query == r2.source_query && r1.target_outputs != r2.target_outputs && printed {
                let at = crate::trace::show_trace(r1.source_query.as_deref().unwrap_or_default());
                contradiction = Some(format!(
                    "the source prints its oracle's answer at {at} for both {:?} and {:?}, but the target prints {:?} and {:?}: \
                     any transformed oracle must answer two different words at {at}",
                    r1.args, r2.args, r1.target_outputs, r2.target_outputs
                ));
                break 'outer;
            }
        }
    }
    Counterexample { oracle: table.to_vec(), default, runs, contradiction }
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries: Vec<String> =
            self.oracle.iter().map(|(k, w)| format!("{} -> {w}", crate::trace::show_trace(k))).collect();
        writeln!(f, "oracle: {}, otherwise {}", entries.join(", "), self.default)?;
        for r in &self.runs {
            writeln!(
                f,
                "args {:?}: source prints {:?}, target prints {:?}",
                r.args, r.source_outputs, r.target_outputs
            )?;
        }
        match &self.contradiction {
            Some(c) => write!(f, "contradiction: {c}"),
            None => write!(f, "no contradiction"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{pipeline_stages, reorder_random, MachineLayout};
    use crate::corpus;
    use crate::lang::Width;
    use LeakEvent::*;

    fn setup(name: &str) -> Setup {
        let s = corpus::scenario(name);
        Setup { env: s.env, args: vec![s.args], contexts: default_contexts() }
    }

    #[test]
    fn pipeline_contracts_on_stack_swap() {
        let st = setup("stack_swap");
        for art in pipeline_stages(&st.env.program, Width::W32, MachineLayout::default()).unwrap() {
            for c in [Contract::Leakage, Contract::Oracle, Contract::Predictor] {
                let r = check_contract(&art, &st, c);
                assert!(r.passed() && r.cases > 0, "{r}");
            }
        }
    }

    #[test]
    fn reorder_separates_predictor_from_oracle() {
        let mut st = setup("reorder_p");
        st.args = vec![vec![16], vec![20]];
        let art = reorder_random(&st.env.program, Width::W32).unwrap();
        assert!(check_predictor(&art, &st).passed());
        assert!(!check_oracle(&art, &st).passed());
        let q = art.target.as_program().unwrap();
        let table = [(vec![Leak(16)], 7), (vec![Leak(20)], 9)];
        let cx = reorder_counterexample(&st.env, &st.env.program, &q, &st.args, &table, 3);
        assert_eq!(cx.runs[0].source_outputs, vec![3]);
        assert_eq!(cx.runs[1].source_outputs, vec![3]);
        assert_eq!(cx.runs[0].target_outputs, vec![7]);
        assert_eq!(cx.runs[1].target_outputs, vec![9]);
        assert!(cx.contradiction.is_some());
    }
}

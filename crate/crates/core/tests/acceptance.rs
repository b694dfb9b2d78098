//! The acceptance suite: fourteen criteria, one pass/fail line each.

use ctleak::compiler::contract::{
    check_contract, check_predictor, default_contexts, reorder_counterexample, Contract, Setup,
};
use ctleak::compiler::{compose_pipeline, pipeline_stages, reorder_random, LowContext, LowTrace, MachineLayout};
use ctleak::corpus;
use ctleak::ctcheck::{
    check_flawed_ct, check_naive_ct, check_oracle_ct, check_predictor_ct, memory_fills, CtVerdict, Evidence,
    PublicProjection, SecretAssignment,
};
use ctleak::interp::{
    exec_enumerate, exec_oracle, small_step_outcomes, universe_oracles, ChoiceUniverse, ExecEnv, Explorer,
    InputPolicy, MemState, Outcome, PostMode, Resolution,
};
use ctleak::lang::{Width, Word};
use ctleak::machine::{
    entry_state, mrun, returns_of, FunctionLayout, Instr, MachineEvent, MachineProgram, MachineStatus, StackLayout,
};
use ctleak::predict::{
    all_traces, predictor_concat, predicts, run_predictor, stack_swap_predictor, tree_member, tree_to_predictor,
    LeakageTree, Predictor,
};
use ctleak::trace::{compatible, inputs_of, outputs_of, IoEvent, LeakEvent, LeakTrace, Oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};
use LeakEvent::*;

const W: Width = Width::W32;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn word_fills(pairs: &[(Word, Word)], addrs: (Word, Word), args: &[Word], inputs: &InputPolicy) -> Vec<SecretAssignment> {
    pairs
        .iter()
        .map(|(a, b)| {
            let mut m = MemState::new();
            m.poke_word(addrs.0, 4, *a, W);
            m.poke_word(addrs.1, 4, *b, W);
            SecretAssignment { args: args.to_vec(), memory: m, inputs: inputs.clone() }
        })
        .collect()
}

fn trace_witnesses(v: &CtVerdict) -> Vec<LeakTrace> {
    match v {
        CtVerdict::ConstantTime { witnesses } => witnesses
            .iter()
            .filter_map(|w| match &w.evidence {
                Evidence::Trace(k) => Some(k.clone()),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn c1_swap() -> Check {
    let s = corpus::scenario("swap");
    let secrets = word_fills(&[(0, 0), (0, 1), (1, 0), (1, 1)], (16, 20), &s.args, &s.env.inputs);
    let v = check_naive_ct(&s.env, &PublicProjection::args(&[0, 1]), &secrets);
    let ks = trace_witnesses(&v);
    ensure(ks == vec![vec![Leak(16), Leak(20), Leak(16), Leak(20)]], || format!("verdict {}: {ks:?}", v.name()))?;
    Ok("4 secret pairs, leak [Leak 16, Leak 20, Leak 16, Leak 20]".into())
}

fn stack_swap_oracles() -> Vec<Oracle> {
    vec![
        Oracle::Bump { base: 64, stride: 16 },
        Oracle::Bump { base: 128, stride: 16 },
        Oracle::Seeded(1),
        Oracle::Seeded(2),
    ]
}

fn c2_stack_swap() -> Check {
    let s = corpus::scenario("stack_swap");
    let secrets = memory_fills(&s.args, &s.env.memory, &s.env.inputs, &[(16, 2)], &[0x00, 0xAA]);
    let oracles = stack_swap_oracles();
    let v = check_oracle_ct(&s.env, &PublicProjection::args(&[]), &secrets, &oracles);
    let CtVerdict::ConstantTime { witnesses } = &v else { return Err(format!("verdict {}", v.name())) };
    ensure(witnesses.len() == oracles.len(), || format!("{} classes", witnesses.len()))?;
    for w in witnesses {
        let a = &oracles[w.key.oracle.expect("oracle-indexed")];
        let x = a.query(&[], W);
        let expected = vec![CompNonDet(x), Leak(x), Leak(x + 1), Leak(x), Leak(x + 1)];
        ensure(w.evidence == Evidence::Trace(expected.clone()), || format!("under {a:?}: {:?}", w.evidence))?;
    }
    Ok(format!("{} oracles x {} secret fills", oracles.len(), secrets.len()))
}

fn c3_countdown() -> Check {
    let s = corpus::scenario("countdown");
    let secrets: Vec<SecretAssignment> = (1..=2)
        .map(|x| SecretAssignment { args: vec![x], memory: MemState::new(), inputs: InputPolicy::default() })
        .collect();
    let u = ChoiceUniverse::default();
    let publics = PublicProjection::args(&[]);
    let pv = check_predictor_ct(&s.env, &publics, &secrets, &u);
    ensure(pv.is_leaky(), || format!("predictor notion said {}", pv.name()))?;
    let fv = check_flawed_ct(&s.env, &publics, &secrets, &u);
    let CtVerdict::ConstantTime { witnesses } = &fv else { return Err(format!("flawed notion said {}", fv.name())) };
    let mut points = 0;
    for w in witnesses {
        let Evidence::Function(graph) = &w.evidence else { return Err("flawed witness is not a function".into()) };
        for (b, l) in graph {
            let mut expected = vec![1; b.len()];
            expected.push(0);
            ensure(*l == expected, || format!("f({b:?}) = {l:?}"))?;
            points += 1;
        }
    }
    Ok(format!("predictor notion Leaky, flawed notion ConstantTime, f checked on {points} points"))
}

fn c4_login() -> Check {
    let s = corpus::scenario("login");
    let inputs = InputPolicy::Domains(vec![vec![0, 1], vec![7, 9]]);
    let secrets = word_fills(&[(7, 7), (7, 9), (9, 7), (9, 9)], (16, 20), &s.args, &inputs);
    let by_user = PublicProjection::args(&[]).with_public_inputs(&[0]);
    let v1 = check_naive_ct(&s.env, &by_user, &secrets);
    ensure(v1.is_leaky(), || format!("public (u): {}", v1.name()))?;
    let with_bit = by_user.with_declassify(|args, mem, io| {
        let ins = inputs_of(io);
        let (u, a) = (ins[0], ins[1]);
        let stored = mem.load(args[0] + 4 * u, 4, W);
        vec![(stored == Some(a)) as Word]
    });
    let v2 = check_naive_ct(&s.env, &with_bit, &secrets);
    ensure(v2.is_constant_time(), || format!("public (u, a == L(m, u)): {}", v2.name()))?;
    Ok("(u) Leaky, (u, equality bit) ConstantTime".into())
}

type PostFamily = (&'static str, fn(&Oracle, &Outcome) -> bool);

fn post_families() -> [PostFamily; 3] {
    [
        ("outputs avoid the first answer", |a, o| !outputs_of(o.io()).contains(&a.query(&[], W))),
        ("leak is compatible", |a, o| compatible(o.leak(), a, W)),
        ("no leak is the first answer plus one", |a, o| {
            let x = a.query(&[], W).wrapping_add(1);
            !o.leak().iter().any(|e| *e == Leak(x))
        }),
    ]
}

fn c5_oracle_equivalence() -> Check {
    let u = ChoiceUniverse::with_bases(vec![64, 128, 192]);
    let mut cases = 0;
    let mut summary = Vec::new();
    for name in corpus::names() {
        let s = corpus::scenario(name);
        let oracles = universe_oracles(&s.env, &s.args, &u, 3);
        let ex = Explorer::new(s.env.clone(), s.args.clone(), u.clone());
        for (fname, post) in post_families() {
            let mut run_all = true;
            let mut star_all = true;
            for a in &oracles {
                let p = |o: &Outcome| post(a, o);
                run_all &= ex.check(&p, PostMode::OracleRun(a)).holds;
                star_all &= ex.check(&p, PostMode::OracleStar(a)).holds;
                cases += 1;
            }
            ensure(run_all == star_all, || format!("{name}, {fname}: OracleRun {run_all}, OracleStar {star_all}"))?;
            summary.push(run_all);
        }
    }
    let held = summary.iter().filter(|h| **h).count();
    Ok(format!("{cases} oracle cases; verdicts agree ({held} hold, {} fail)", summary.len() - held))
}

fn c6_fp_soundness() -> Check {
    let p = stack_swap_predictor(W);
    let mut checked = 0usize;
    for a in stack_swap_oracles() {
        let k = run_predictor(&p, &a, W, 64).ok_or_else(|| format!("no trace under {a:?}"))?;
        ensure(predicts(&p, &k) && compatible(&k, &a, W), || format!("{k:?} under {a:?}"))?;
        let x = a.query(&[], W);
        for t in all_traces(&[x, x + 1, x + 2], 6) {
            let both = predicts(&p, &t) && compatible(&t, &a, W);
            ensure(both == (t == k), || format!("under {a:?}: {t:?} predicted and compatible = {both}"))?;
            checked += 1;
        }
    }
    Ok(format!("4 oracles, {checked} bounded traces"))
}

fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> LeakageTree {
    if depth == 0 {
        return LeakageTree::leaf();
    }
    match rng.gen_range(0..3) {
        0 => LeakageTree::leaf(),
        1 => LeakageTree::leak(rng.gen_range(0..3), random_tree(rng, depth - 1)),
        _ => {
            let n = rng.gen_range(1..=3);
            let keys: BTreeSet<Word> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let cases: Vec<(Word, LeakageTree)> = keys.into_iter().map(|k| (k, random_tree(rng, depth - 1))).collect();
            LeakageTree::branch(cases, random_tree(rng, depth - 1))
        }
    }
}

fn c7_tree_predictor() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0usize;
    for i in 0..50 {
        let t = random_tree(&mut rng, 4);
        let mut alphabet: Vec<Word> = t.alphabet().into_iter().collect();
        if alphabet.is_empty() {
            alphabet.push(0);
        }
        let p = tree_to_predictor(&t);
        for k in all_traces(&alphabet, 6) {
            ensure(tree_member(&k, &t) == predicts(&p, &k), || format!("tree {i}: disagreement on {k:?}"))?;
            checked += 1;
        }
    }
    Ok(format!("50 trees, {checked} traces"))
}

/// Paths of a tree; each branch default is taken with a key outside its cases.
fn tree_paths(t: &LeakageTree) -> Vec<LeakTrace> {
    match t {
        LeakageTree::Leaf {} => vec![vec![]],
        LeakageTree::Leak { w, then } => tree_paths(then)
            .into_iter()
            .map(|mut k| {
                k.insert(0, Leak(*w));
                k
            })
            .collect(),
        LeakageTree::Branch { cases, default } => {
            let fresh = cases.keys().max().map_or(0, |m| m + 1);
            cases
                .iter()
                .map(|(x, c)| (*x, c))
                .chain([(fresh, &**default)])
                .flat_map(|(x, c)| {
                    tree_paths(c).into_iter().map(move |mut k| {
                        k.insert(0, CompNonDet(x));
                        k
                    })
                })
                .collect()
        }
    }
}

fn c8_concat() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0usize;
    for i in 0..100 {
        let t1 = random_tree(&mut rng, 3);
        let seconds: Arc<Vec<LeakageTree>> = Arc::new((0..3).map(|_| random_tree(&mut rng, 3)).collect());
        let pick = {
            let seconds = seconds.clone();
            move |k1: &[LeakEvent]| -> usize { k1.iter().map(|e| e.payload() as usize + 1).sum::<usize>() % seconds.len() }
        };
        let p1 = tree_to_predictor(&t1);
        let p2 = {
            let (seconds, pick) = (seconds.clone(), pick.clone());
            Arc::new(move |k1: &[LeakEvent]| tree_to_predictor(&seconds[pick(k1)]))
                as Arc<dyn Fn(&[LeakEvent]) -> Predictor + Send + Sync>
        };
        let cat = predictor_concat(p1.clone(), p2.clone());
        for k1 in tree_paths(&t1) {
            ensure(predicts(&p1, &k1), || format!("pair {i}: p1 misses its own path {k1:?}"))?;
            let second = p2(&k1);
            for k2 in tree_paths(&seconds[pick(&k1)]) {
                ensure(predicts(&second, &k2), || format!("pair {i}: p2 misses its own path {k2:?}"))?;
                let k: LeakTrace = k1.iter().chain(&k2).copied().collect();
                ensure(predicts(&cat, &k), || format!("pair {i}: concatenation misses {k:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("100 pairs, {checked} concatenated traces"))
}

fn c9_contracts() -> Check {
    let mut reports = 0;
    let mut cases = 0;
    for name in corpus::names().filter(|n| !corpus::entry(n).expect("listed").demo) {
        let s = corpus::scenario(name);
        let setup = Setup { env: s.env.clone(), args: vec![s.args.clone()], contexts: default_contexts() };
        let stages = pipeline_stages(&s.env.program, W, MachineLayout::default()).map_err(|e| format!("{name}: {e}"))?;
        for art in &stages {
            for c in [Contract::Leakage, Contract::Oracle, Contract::Predictor] {
                let r = check_contract(art, &setup, c);
                ensure(r.passed() && r.cases > 0, || format!("{name}: {r}"))?;
                reports += 1;
                cases += r.cases;
            }
        }
    }
    Ok(format!("{reports} program x pass x contract checks, {cases} cases"))
}

fn c10_reorder() -> Check {
    let s = corpus::scenario("reorder_p");
    let args = vec![vec![16], vec![20]];
    let setup = Setup { env: s.env.clone(), args: args.clone(), contexts: default_contexts() };
    let art = reorder_random(&s.env.program, W).map_err(|e| e.to_string())?;
    ensure(art.oracle_transform.is_none(), || "reordering exposes an oracle transformation".into())?;
    let r = check_predictor(&art, &setup);
    ensure(r.passed() && r.cases > 0, || r.to_string())?;
    let q = art.target.as_program().expect("source-level target");
    let table = [(vec![Leak(16)], 7), (vec![Leak(20)], 9)];
    let cx = reorder_counterexample(&s.env, &s.env.program, &q, &args, &table, 3);
    let src: Vec<Vec<Word>> = cx.runs.iter().map(|r| r.source_outputs.clone()).collect();
    let tgt: Vec<Vec<Word>> = cx.runs.iter().map(|r| r.target_outputs.clone()).collect();
    ensure(src == vec![vec![3], vec![3]], || format!("p printed {src:?}"))?;
    ensure(tgt == vec![vec![7], vec![9]], || format!("p' printed {tgt:?}"))?;
    let c = cx.contradiction.ok_or("no contradiction derived")?;
    ensure(c.contains("two different words at []"), || c.clone())?;
    Ok(format!("predictor contract {} cases; {c}", r.cases))
}

fn c11_memequal() -> Check {
    let p = corpus::program("memequal");
    let layout = MachineLayout::default();
    let art = compose_pipeline(&p, W, layout).map_err(|e| e.to_string())?;
    let m = art.target_machine().expect("machine target");
    let ctx = LowContext::machine(layout.stack.sp0, layout.base);
    let src_oracle = art.transform_oracle(&ctx).expect("pipeline has an oracle transformation").map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut runs = 0;
    for n in 1..=3u32 {
        let pairs: Vec<(Vec<u8>, Vec<u8>)> = if n == 1 {
            let v = [0x00, 0xAA];
            v.iter().flat_map(|a| v.iter().map(move |b| (vec![*a], vec![*b]))).collect()
        } else {
            (0..64)
                .map(|_| {
                    let a: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
                    let b = if rng.gen_bool(0.5) { a.clone() } else { (0..n).map(|_| rng.gen()).collect() };
                    (a, b)
                })
                .collect()
        };
        let mut first: Option<Vec<MachineEvent>> = None;
        for (a, b) in pairs {
            let mut mem = MemState::new();
            mem.poke(16, &a, W);
            mem.poke(48, &b, W);
            let args = [16, 48, n];
            let out = mrun(m, entry_state(m, &mem, &args, layout.stack), &[], 1 << 22);
            ensure(out.status == MachineStatus::Terminated, || format!("n={n}: {:?}", out.status))?;
            let r = returns_of(m, &out.state)[0];
            ensure(r == (a == b) as Word, || format!("n={n}, {a:?} vs {b:?}: returned {r}"))?;
            let env = ExecEnv::new(p.clone()).with_memory(mem);
            let src = exec_oracle(&env, &args, &src_oracle);
            let gamma = art.gamma(src.leak(), &ctx).map_err(|e| e.to_string())?;
            ensure(gamma == LowTrace::Machine(out.state.leak.clone()), || format!("n={n}: gamma differs from the machine"))?;
            match &first {
                None => first = Some(out.state.leak),
                Some(k) => ensure(*k == out.state.leak, || format!("n={n}: machine leak depends on contents"))?,
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} content pairs; leak content-independent and equal to composed gamma"))
}

fn random_machine(rng: &mut ChaCha8Rng) -> MachineProgram {
    use Instr::*;
    let len = rng.gen_range(4..24usize);
    let reg = |rng: &mut ChaCha8Rng| rng.gen_range(0..8u8) + 5;
    let code = (0..len)
        .map(|i| {
            let (rd, rs1, rs2) = (reg(rng), reg(rng), reg(rng));
            let off = 4 * (rng.gen_range(-(i as i32)..=(len - i) as i32));
            match rng.gen_range(0..14) {
                0 => Addi { rd, rs: rs1, imm: rng.gen_range(0..8) },
                1 => Add { rd, rs1, rs2 },
                2 => Sub { rd, rs1, rs2 },
                3 => Xor { rd, rs1, rs2 },
                4 => Sltu { rd, rs1, rs2 },
                5 => Divu { rd, rs1, rs2 },
                6 => Lw { rd, rs1: 0, imm: 4 * rng.gen_range(0..8) },
                7 => Sb { rs2, rs1: 0, imm: rng.gen_range(0..32) },
                8 => Lb { rd, rs1, imm: rng.gen_range(0..32) },
                9 => Blt { rs1, rs2, off },
                10 => Bne { rs1, rs2, off },
                11 => Jal { rd: 0, off },
                12 => EIn { rd },
                _ => EOut { rs: rs1 },
            }
        })
        .collect();
    let layout = FunctionLayout { name: "main".into(), position: 0, frame_size: 0, params: 2, returns: 1 };
    MachineProgram { width: W, base: 0, code, functions: vec![layout], entry: "main".into() }
}

fn c12_machine() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut statuses = BTreeSet::new();
    for i in 0..100 {
        let m = random_machine(&mut rng);
        let mut mem = MemState::new();
        mem.poke(0, &[rng.gen(); 32], W);
        let args = [rng.gen_range(0..16), rng.gen_range(0..16)];
        let inputs: Vec<Word> = (0..4).map(|_| rng.gen_range(0..16)).collect();
        let stack = StackLayout { sp0: 1024, reserve: 64 };
        let a = mrun(&m, entry_state(&m, &mem, &args, stack), &inputs, 10_000);
        let b = mrun(&m, entry_state(&m, &mem, &args, stack), &inputs, 10_000);
        ensure(a == b, || format!("program {i}: two runs differ"))?;
        let fetches = a.state.leak.iter().filter(|e| matches!(e, MachineEvent::Fetch(_))).count() as u64;
        ensure(fetches == a.steps, || format!("program {i}: {fetches} fetches for {} steps", a.steps))?;
        statuses.insert(format!("{:?}", a.status).split('(').next().unwrap_or_default().to_string());
    }
    Ok(format!("100 programs deterministic, fetches = steps (statuses seen: {statuses:?})"))
}

fn c13_big_small() -> Check {
    let u = ChoiceUniverse::default();
    let mut total = 0;
    for name in corpus::names() {
        let s = corpus::scenario(name);
        let obs = |os: Vec<Outcome>| os.iter().map(Outcome::observation).collect::<BTreeSet<_>>();
        let big = obs(exec_enumerate(&s.env, &s.args, &u));
        let small = obs(small_step_outcomes(&s.env, &s.args, Resolution::Universe(&u)));
        ensure(big == small, || format!("{name}: {} big-step vs {} small-step observations", big.len(), small.len()))?;
        total += big.len();
    }
    Ok(format!("{total} observations agree across the corpus"))
}

fn c14_semiprime() -> Check {
    let s = corpus::scenario("semiprime");
    let inputs = InputPolicy::Script(vec![3, 5]);
    let secrets = memory_fills(&s.args, &MemState::new(), &inputs, &[(16, 2)], &[0x00, 0xAA]);
    for a in &secrets {
        let o = exec_oracle(&a.env(&s.env), &a.args, &Oracle::Seeded(0));
        ensure(o.io() == &vec![IoEvent::In(3), IoEvent::In(5), IoEvent::Out(15)], || format!("io {:?}", o.io()))?;
    }
    let v = check_naive_ct(&s.env, &PublicProjection::args(&[]).with_public_inputs(&[0, 1]), &secrets);
    ensure(trace_witnesses(&v).len() == 1, || format!("verdict {}", v.name()))?;
    Ok(format!("{} secret fills, io [In 3, In 5, Out 15], one leak", secrets.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 14] = [
        ("swap naive constant time", Duration::from_secs(1), c1_swap),
        ("stack_swap oracle constant time", Duration::from_secs(1), c2_stack_swap),
        ("countdown separation", Duration::from_secs(1), c3_countdown),
        ("login refinement", Duration::from_secs(5), c4_login),
        ("oracle-run / oracle-star equivalence", Duration::from_secs(60), c5_oracle_equivalence),
        ("predictor-run soundness", Duration::from_secs(10), c6_fp_soundness),
        ("tree / predictor equivalence", Duration::from_secs(30), c7_tree_predictor),
        ("predictor concatenation", Duration::from_secs(10), c8_concat),
        ("pass contracts", Duration::from_secs(120), c9_contracts),
        ("reordering separation", Duration::from_secs(1), c10_reorder),
        ("memequal end to end", Duration::from_secs(60), c11_memequal),
        ("machine determinism and fetches", Duration::from_secs(10), c12_machine),
        ("big-step / small-step agreement", Duration::from_secs(60), c13_big_small),
        ("semiprime output independence", Duration::from_secs(1), c14_semiprime),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = run();
        let took = t0.elapsed();
        let (verdict, detail) = match result {
            Ok(d) if took <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("over budget ({budget:?}): {d}")),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("[{verdict}] {:>2}. {name} ({:.2?}): {detail}", i + 1, took);
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

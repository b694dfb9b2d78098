//! Recursive, leakage-instrumented evaluator.

use super::choice::{explore, Chooser, Driver, QueryKind};
use super::env::{ChoiceUniverse, ErrorReason, ExecEnv, Halt, Locals, Outcome, Resolution, Run};
use super::mem::MemState;
use crate::lang::{Expr, Program, Stmt, Width, Word};
use crate::trace::{IoEvent, IoTrace, LeakEvent, LeakTrace, Oracle};
use std::collections::HashSet;

/// Nested calls beyond this depth count as running out of fuel.
pub const MAX_CALL_DEPTH: usize = 128;

pub(crate) fn eval_into(e: &Expr, locals: &Locals, w: Width, leak: &mut LeakTrace) -> Result<Word, ErrorReason> {
    match e {
        Expr::Lit(v) => Ok(w.wrap(*v as u64)),
        Expr::Var(x) => locals.get(x).copied().ok_or_else(|| ErrorReason::UndefinedVariable(x.clone())),
        Expr::Bin(op, a, b) => {
            let a = eval_into(a, locals, w, leak)?;
            let b = eval_into(b, locals, w, leak)?;
            if op.leaks_operands() {
                leak.push(LeakEvent::Leak(a));
                leak.push(LeakEvent::Leak(b));
            }
            Ok(op.eval(w, a, b))
        }
    }
}

/// Evaluates `e` left to right, returning its value and the leakage it appends.
pub fn eval_expr(e: &Expr, locals: &Locals, w: Width) -> Result<(Word, LeakTrace), ErrorReason> {
    let mut leak = Vec::new();
    let v = eval_into(e, locals, w, &mut leak)?;
    Ok((v, leak))
}

struct Exec<'a> {
    program: &'a Program,
    width: Width,
    ch: Chooser<'a>,
    fuel: u64,
    depth: usize,
    mem: MemState,
    io: IoTrace,
    leak: LeakTrace,
}

impl Exec<'_> {
    fn tick(&mut self) -> Result<(), Halt> {
        if self.fuel == 0 {
            return Err(Halt::Fuel);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn eval(&mut self, e: &Expr, locals: &Locals) -> Result<Word, Halt> {
        Ok(eval_into(e, locals, self.width, &mut self.leak)?)
    }

    fn exec(&mut self, s: &Stmt, locals: &mut Locals) -> Result<(), Halt> {
        let mut cur = s;
        while let Stmt::Seq(a, b) = cur {
            self.exec(a, locals)?;
            cur = b;
        }
        self.tick()?;
        let w = self.width;
        match cur {
            Stmt::Seq(..) => unreachable!(),
            Stmt::Skip => {}
            Stmt::Assign(x, e) => {
                let v = self.eval(e, locals)?;
                locals.insert(x.clone(), v);
            }
            Stmt::Load(x, a, size) => {
                let addr = self.eval(a, locals)?;
                self.leak.push(LeakEvent::Leak(addr));
                let v = self.mem.load(addr, size.bytes(w), w).ok_or(ErrorReason::MemoryFault(addr))?;
                locals.insert(x.clone(), v);
            }
            Stmt::Store(a, v, size) => {
                let val = self.eval(v, locals)?;
                let addr = self.eval(a, locals)?;
                self.leak.push(LeakEvent::Leak(addr));
                if !self.mem.store(addr, size.bytes(w), val, w) {
                    return Err(ErrorReason::MemoryFault(addr).into());
                }
            }
            Stmt::StackAlloc { size, var, body } => {
                let (base, bytes) = self.ch.alloc(&self.leak, &self.mem, *size)?;
                self.leak.push(LeakEvent::CompNonDet(base));
                self.mem.poke(base, &bytes, w);
                locals.insert(var.clone(), base);
                self.exec(body, locals)?;
                self.mem.free(base, *size);
            }
            Stmt::Random(x) => {
                let v = self.ch.random(&self.leak);
                self.leak.push(LeakEvent::CompNonDet(v));
                locals.insert(x.clone(), v);
            }
            Stmt::Input(x) => {
                let v = self.ch.input()?;
                self.io.push(IoEvent::In(v));
                locals.insert(x.clone(), v);
            }
            Stmt::Output(e) => {
                let v = self.eval(e, locals)?;
                self.io.push(IoEvent::Out(v));
            }
            Stmt::If(c, s1, s2) => {
                let b = self.eval(c, locals)? != 0;
                self.leak.push(LeakEvent::Leak(b as Word));
                self.exec(if b { s1 } else { s2 }, locals)?;
            }
            Stmt::While(c, body) => loop {
                let b = self.eval(c, locals)? != 0;
                self.leak.push(LeakEvent::Leak(b as Word));
                if !b {
                    break;
                }
                self.exec(body, locals)?;
                self.tick()?;
            },
            Stmt::Call { results, func, args } => {
                let vals = args.iter().map(|a| self.eval(a, locals)).collect::<Result<Vec<_>, _>>()?;
                let rets = self.call(func, &vals)?.1;
                if rets.len() != results.len() {
                    return Err(ErrorReason::ArityMismatch(func.clone()).into());
                }
                for (r, v) in results.iter().zip(rets) {
                    locals.insert(r.clone(), v);
                }
            }
        }
        Ok(())
    }

    fn call(&mut self, func: &str, args: &[Word]) -> Result<(Locals, Vec<Word>), Halt> {
        let program = self.program;
        let f = program.function(func).ok_or_else(|| ErrorReason::UndefinedFunction(func.to_string()))?;
        if f.params.len() != args.len() {
            return Err(ErrorReason::ArityMismatch(func.to_string()).into());
        }
        if self.depth >= MAX_CALL_DEPTH {
            return Err(Halt::Fuel);
        }
        self.depth += 1;
        let mut locals: Locals = f.params.iter().cloned().zip(args.iter().map(|a| self.width.wrap(*a as u64))).collect();
        self.exec(&f.body, &mut locals)?;
        self.depth -= 1;
        let rets = f
            .returns
            .iter()
            .map(|r| locals.get(r).copied().ok_or_else(|| ErrorReason::UndefinedVariable(r.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((locals, rets))
    }
}

fn run_logged(
    env: &ExecEnv,
    args: &[Word],
    res: Resolution<'_>,
    driver: &mut Driver,
    log: bool,
) -> (Outcome, Option<Vec<(LeakTrace, QueryKind)>>) {
    let mut ch = Chooser::new(env.width, res, &env.inputs, &env.contents, driver);
    if log {
        ch.log = Some(Vec::new());
    }
    let mut ex = Exec {
        program: &env.program,
        width: env.width,
        ch,
        fuel: env.fuel,
        depth: 0,
        mem: env.memory.clone(),
        io: Vec::new(),
        leak: Vec::new(),
    };
    let entry = env.program.entry.clone();
    let r = ex.call(&entry, args);
    let log = ex.ch.log.take();
    let out = match r {
        Ok((locals, returns)) => Outcome::Terminated { mem: ex.mem, locals, io: ex.io, leak: ex.leak, returns },
        Err(h) => Outcome::halted(h, ex.io, ex.leak),
    };
    (out, log)
}

/// One execution with every choice taken from `driver`.
pub fn exec_with(env: &ExecEnv, args: &[Word], res: Resolution<'_>, driver: &mut Driver) -> Outcome {
    run_logged(env, args, res, driver, false).0
}

/// Oracle-driven execution; remaining environment choices take their first alternative.
pub fn exec_oracle(env: &ExecEnv, args: &[Word], a: &Oracle) -> Outcome {
    exec_with(env, args, Resolution::Oracle(a), &mut Driver::new())
}

/// Oracle-driven executions over every input and fresh-content choice.
pub fn exec_oracle_all(env: &ExecEnv, args: &[Word], a: &Oracle) -> Vec<Run> {
    enumerate_with(env, args, Resolution::Oracle(a))
}

/// Like [`exec_oracle_all`], also returning the oracle queries each run made.
pub(crate) fn exec_oracle_logged(
    env: &ExecEnv,
    args: &[Word],
    a: &Oracle,
) -> Vec<(Outcome, Vec<(LeakTrace, QueryKind)>)> {
    explore(|d| {
        let (o, log) = run_logged(env, args, Resolution::Oracle(a), d, true);
        (o, log.unwrap_or_default())
    })
    .into_iter()
    .map(|(_, r)| r)
    .collect()
}

pub fn enumerate_with(env: &ExecEnv, args: &[Word], res: Resolution<'_>) -> Vec<Run> {
    explore(|d| exec_with(env, args, res, d))
        .into_iter()
        .map(|(choices, outcome)| Run { choices, outcome })
        .collect()
}

/// Every execution under `u`, with the choices that reproduce it.
pub fn enumerate_runs(env: &ExecEnv, args: &[Word], u: &ChoiceUniverse) -> Vec<Run> {
    enumerate_with(env, args, Resolution::Universe(u))
}

/// The distinct outcomes over all resolutions drawn from `u`, in discovery order.
pub fn exec_enumerate(env: &ExecEnv, args: &[Word], u: &ChoiceUniverse) -> Vec<Outcome> {
    dedup(enumerate_runs(env, args, u).into_iter().map(|r| r.outcome))
}

pub(crate) fn dedup(it: impl IntoIterator<Item = Outcome>) -> Vec<Outcome> {
    let mut seen = HashSet::new();
    it.into_iter().filter(|o| seen.insert(o.clone())).collect()
}

/// Re-executes a recorded run.
pub fn replay(env: &ExecEnv, args: &[Word], res: Resolution<'_>, choices: &[usize]) -> Outcome {
    exec_with(env, args, res, &mut Driver::replaying(choices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::env::{BenignReason, ContentPolicy, InputPolicy};
    use crate::lang::{parse, BinOp};
    use LeakEvent::*;

    fn env(src: &str) -> ExecEnv {
        ExecEnv::new(parse(src).unwrap())
    }

    #[test]
    fn expression_leakage() {
        let w = Width::W32;
        let e = Expr::bin(BinOp::Add, Expr::Lit(3), Expr::Lit(4));
        assert_eq!(eval_expr(&e, &Locals::new(), w), Ok((7, vec![])));
        let locals: Locals = [("x".to_string(), 7), ("y".to_string(), 2)].into_iter().collect();
        let d = Expr::bin(BinOp::Divu, Expr::var("x"), Expr::var("y"));
        assert_eq!(eval_expr(&d, &locals, w), Ok((3, vec![Leak(7), Leak(2)])));
        assert_eq!(eval_expr(&Expr::var("z"), &Locals::new(), w), Err(ErrorReason::UndefinedVariable("z".into())));
    }

    #[test]
    fn allocation_is_scoped() {
        let e = env("fn main() -> (r) { stackalloc 4 as x { store(x, 7); r = load(x); } }")
            .with_contents(ContentPolicy::Constant(0));
        let o = exec_oracle(&e, &[], &Oracle::Bump { base: 64, stride: 16 });
        match o {
            Outcome::Terminated { mem, returns, leak, .. } => {
                assert!(mem.is_empty());
                assert_eq!(returns, vec![7]);
                assert_eq!(leak, vec![CompNonDet(64), Leak(64), Leak(64)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn misaligned_oracle_answer_is_benign() {
        let e = env("fn main() { stackalloc 4 as x { skip; } }");
        let o = exec_oracle(&e, &[], &Oracle::Bump { base: 65, stride: 0 });
        assert!(matches!(o, Outcome::BenignStuck { reason: BenignReason::OutOfMemory, .. }));
    }

    #[test]
    fn input_exhaustion_is_benign() {
        let e = env("fn main() { x = input(); }");
        assert!(matches!(exec_oracle(&e, &[], &Oracle::Seeded(0)), Outcome::BenignStuck { reason: BenignReason::NoInput, .. }));
        let e = e.with_inputs(InputPolicy::Script(vec![4]));
        assert!(exec_oracle(&e, &[], &Oracle::Seeded(0)).is_terminated());
    }

    #[test]
    fn fuel_and_faults() {
        let e = env("fn main() { while (1) { skip; } }").with_fuel(1000);
        assert!(matches!(exec_oracle(&e, &[], &Oracle::Seeded(0)), Outcome::FuelExhausted { .. }));
        let e = env("fn main() { x = load(16); }");
        assert!(matches!(
            exec_oracle(&e, &[], &Oracle::Seeded(0)),
            Outcome::ErrorStuck { reason: ErrorReason::MemoryFault(16), .. }
        ));
        let e = env("fn main() { f(); } fn f() { f(); }");
        assert!(matches!(exec_oracle(&e, &[], &Oracle::Seeded(0)), Outcome::FuelExhausted { .. }));
    }

    #[test]
    fn store_evaluates_value_then_address() {
        let mut e = env("fn main(a, b) { store(a / 1, b / 1); }");
        e.memory.poke(16, &[0; 4], Width::W32);
        let o = exec_oracle(&e, &[16, 5], &Oracle::Seeded(0));
        assert_eq!(o.leak(), &vec![Leak(5), Leak(1), Leak(16), Leak(1), Leak(16)]);
    }

    #[test]
    fn replay_reproduces_runs() {
        let e = env("fn main() { stackalloc 4 as x { y = input(); output(x + y); } }")
            .with_inputs(InputPolicy::Domains(vec![vec![1, 2]]))
            .with_contents(ContentPolicy::Constant(0));
        let u = ChoiceUniverse::with_bases(vec![64, 128]);
        let runs = enumerate_runs(&e, &[], &u);
        assert_eq!(runs.len(), 4);
        for r in &runs {
            assert_eq!(replay(&e, &[], Resolution::Universe(&u), &r.choices), r.outcome);
        }
    }
}

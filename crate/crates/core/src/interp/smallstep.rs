//! Bounded small-step semantics with an explicit continuation stack, used as a
//! differential reference for the big-step evaluator.

use super::bigstep::{dedup, eval_into, MAX_CALL_DEPTH};
use super::choice::seeded_byte;
use super::env::{BenignReason, ContentPolicy, ErrorReason, ExecEnv, Halt, InputPolicy, Locals, Outcome, Resolution};
use super::mem::MemState;
use crate::lang::{Expr, Program, Stmt, Width, Word};
use crate::trace::{IoEvent, IoTrace, LeakEvent, LeakTrace};

/// A pending piece of work on the continuation stack.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Cont {
    Run(Stmt),
    /// Releases an allocation when its body is done.
    EndAlloc { base: Word, size: Word },
    /// Returns from a call: reads `returns` from the callee locals, restores `saved`, binds `results`.
    Return { func: String, saved: Locals, results: Vec<String>, returns: Vec<String> },
    /// Completes the entry function.
    Finish { returns: Vec<String> },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Config {
    /// Top of stack is the last element.
    pub code: Vec<Cont>,
    pub mem: MemState,
    pub locals: Locals,
    pub io: IoTrace,
    pub leak: LeakTrace,
    pub next_input: usize,
    pub returns: Option<Vec<Word>>,
}

impl Config {
    /// A bare statement configuration with no enclosing function frame.
    pub fn of_stmt(s: Stmt, mem: MemState, locals: Locals) -> Config {
        Config { code: vec![Cont::Run(s)], mem, locals, io: vec![], leak: vec![], next_input: 0, returns: None }
    }

    pub fn is_finished(&self) -> bool {
        self.code.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepResult {
    Next(Vec<Config>),
    Finished,
    /// Stuck, with the traces accumulated up to the failure inside the step.
    Stuck { halt: Halt, io: IoTrace, leak: LeakTrace },
}

/// The fixed parameters of stepping: program, width and how choices are resolved.
pub struct Stepper<'a> {
    pub program: &'a Program,
    pub width: Width,
    pub res: Resolution<'a>,
    pub inputs: &'a InputPolicy,
    pub contents: &'a ContentPolicy,
}

impl<'a> Stepper<'a> {
    pub fn new(env: &'a ExecEnv, res: Resolution<'a>) -> Stepper<'a> {
        Stepper { program: &env.program, width: env.width, res, inputs: &env.inputs, contents: &env.contents }
    }

    /// The configuration that calls the entry function on `args`.
    pub fn initial(&self, mem: MemState, args: &[Word]) -> Result<Config, Halt> {
        let entry = &self.program.entry;
        let f = self.program.function(entry).ok_or_else(|| ErrorReason::UndefinedFunction(entry.clone()))?;
        if f.params.len() != args.len() {
            return Err(ErrorReason::ArityMismatch(entry.clone()).into());
        }
        let locals = f.params.iter().cloned().zip(args.iter().map(|a| self.width.wrap(*a as u64))).collect();
        Ok(Config {
            code: vec![Cont::Finish { returns: f.returns.clone() }, Cont::Run(f.body.clone())],
            mem,
            locals,
            io: vec![],
            leak: vec![],
            next_input: 0,
            returns: None,
        })
    }

    /// Successor configurations; empty iff `c` is finished or stuck.
    pub fn step(&self, c: &Config) -> Vec<Config> {
        match self.step_detailed(c) {
            StepResult::Next(v) => v,
            _ => vec![],
        }
    }

    pub fn step_detailed(&self, c: &Config) -> StepResult {
        match self.try_step(c) {
            Ok(Some(v)) => StepResult::Next(v),
            Ok(None) => StepResult::Finished,
            Err((h, io, leak)) => StepResult::Stuck { halt: h, io, leak },
        }
    }

    /// On a stuck step, also returns the traces accumulated up to the failure.
    fn try_step(&self, c: &Config) -> Result<Option<Vec<Config>>, (Halt, IoTrace, LeakTrace)> {
        let Some(top) = c.code.last() else {
            return Ok(None);
        };
        let mut n = c.clone();
        n.code.pop();
        let r = match top {
            Cont::Run(s) => self.step_stmt(s, &mut n),
            other => self.step_cont(other, &mut n),
        };
        r.map_err(|h| (h, n.io, n.leak))
    }

    fn step_cont(&self, top: &Cont, n: &mut Config) -> Result<Option<Vec<Config>>, Halt> {
        match top {
            Cont::EndAlloc { base, size } => {
                n.mem.free(*base, *size);
            }
            Cont::Return { func, saved, results, returns } => {
                let vals = returns
                    .iter()
                    .map(|r| n.locals.get(r).copied().ok_or_else(|| ErrorReason::UndefinedVariable(r.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                if vals.len() != results.len() {
                    return Err(ErrorReason::ArityMismatch(func.clone()).into());
                }
                n.locals = saved.clone();
                for (r, v) in results.iter().zip(vals) {
                    n.locals.insert(r.clone(), v);
                }
            }
            Cont::Finish { returns } => {
                let vals = returns
                    .iter()
                    .map(|r| n.locals.get(r).copied().ok_or_else(|| ErrorReason::UndefinedVariable(r.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                n.returns = Some(vals);
            }
            Cont::Run(_) => unreachable!("statements are stepped by step_stmt"),
        }
        Ok(Some(vec![std::mem::take(n)]))
    }

    fn step_stmt(&self, s: &Stmt, n: &mut Config) -> Result<Option<Vec<Config>>, Halt> {
        let eval = |e: &Expr, n: &mut Config| eval_into(e, &n.locals, self.width, &mut n.leak).map_err(Halt::from);
        let w = self.width;
        let skip = Cont::Run(Stmt::Skip);
        match s {
            Stmt::Skip => {}
            Stmt::Seq(a, b) => {
                n.code.push(Cont::Run((**b).clone()));
                if **a != Stmt::Skip {
                    n.code.push(Cont::Run((**a).clone()));
                }
                return Ok(Some(vec![std::mem::take(n)]));
            }
            Stmt::Assign(x, e) => {
                let v = eval(e, n)?;
                n.locals.insert(x.clone(), v);
                n.code.push(skip);
            }
            Stmt::Load(x, a, size) => {
                let addr = eval(a, n)?;
                n.leak.push(LeakEvent::Leak(addr));
                let v = n.mem.load(addr, size.bytes(w), w).ok_or(ErrorReason::MemoryFault(addr))?;
                n.locals.insert(x.clone(), v);
                n.code.push(skip);
            }
            Stmt::Store(a, v, size) => {
                let val = eval(v, n)?;
                let addr = eval(a, n)?;
                n.leak.push(LeakEvent::Leak(addr));
                if !n.mem.store(addr, size.bytes(w), val, w) {
                    return Err(ErrorReason::MemoryFault(addr).into());
                }
                n.code.push(skip);
            }
            Stmt::StackAlloc { size, var, body } => {
                let ok = |a: Word| a % w.bytes() == 0 && n.mem.range_free(a, *size, w);
                let bases: Vec<Word> = match self.res {
                    Resolution::Oracle(o) => {
                        let a = o.query(&n.leak, w);
                        if !ok(a) {
                            return Err(Halt::Benign(BenignReason::OutOfMemory));
                        }
                        vec![a]
                    }
                    Resolution::Universe(u) => u.bases.iter().copied().filter(|a| ok(*a)).collect(),
                };
                if bases.is_empty() {
                    return Err(Halt::Benign(BenignReason::OutOfMemory));
                }
                let mut out = Vec::new();
                for base in bases {
                    for bytes in self.fresh_contents(base, *size) {
                        let mut m = n.clone();
                        m.leak.push(LeakEvent::CompNonDet(base));
                        m.mem.poke(base, &bytes, w);
                        m.locals.insert(var.clone(), base);
                        m.code.push(Cont::EndAlloc { base, size: *size });
                        m.code.push(Cont::Run((**body).clone()));
                        out.push(m);
                    }
                }
                return Ok(Some(out));
            }
            Stmt::Random(x) => {
                let vals = match self.res {
                    Resolution::Oracle(o) => vec![o.query(&n.leak, w)],
                    Resolution::Universe(u) if u.randoms.is_empty() => vec![0],
                    Resolution::Universe(u) => u.randoms.clone(),
                };
                return Ok(Some(
                    vals.into_iter()
                        .map(|v| {
                            let mut m = n.clone();
                            m.leak.push(LeakEvent::CompNonDet(v));
                            m.locals.insert(x.clone(), v);
                            m.code.push(Cont::Run(Stmt::Skip));
                            m
                        })
                        .collect(),
                ));
            }
            Stmt::Input(x) => {
                let i = n.next_input;
                let vals = match self.inputs {
                    InputPolicy::Script(s) => s.get(i).map(|v| vec![*v]),
                    InputPolicy::Domains(ds) => ds.get(i).filter(|d| !d.is_empty()).cloned(),
                }
                .ok_or(Halt::Benign(BenignReason::NoInput))?;
                return Ok(Some(
                    vals.into_iter()
                        .map(|v| {
                            let v = w.wrap(v as u64);
                            let mut m = n.clone();
                            m.next_input += 1;
                            m.io.push(IoEvent::In(v));
                            m.locals.insert(x.clone(), v);
                            m.code.push(Cont::Run(Stmt::Skip));
                            m
                        })
                        .collect(),
                ));
            }
            Stmt::Output(e) => {
                let v = eval(e, n)?;
                n.io.push(IoEvent::Out(v));
                n.code.push(skip);
            }
            Stmt::If(c, s1, s2) => {
                let b = eval(c, n)? != 0;
                n.leak.push(LeakEvent::Leak(b as Word));
                n.code.push(Cont::Run(if b { (**s1).clone() } else { (**s2).clone() }));
            }
            Stmt::While(c, body) => {
                let b = eval(c, n)? != 0;
                n.leak.push(LeakEvent::Leak(b as Word));
                if b {
                    n.code.push(Cont::Run(Stmt::While(c.clone(), body.clone())));
                    n.code.push(Cont::Run((**body).clone()));
                } else {
                    n.code.push(skip);
                }
            }
            Stmt::Call { results, func, args } => {
                let vals = args.iter().map(|a| eval(a, n)).collect::<Result<Vec<_>, _>>()?;
                let f = self.program.function(func).ok_or_else(|| ErrorReason::UndefinedFunction(func.clone()))?;
                if f.params.len() != args.len() {
                    return Err(ErrorReason::ArityMismatch(func.clone()).into());
                }
                let depth = n.code.iter().filter(|c| matches!(c, Cont::Return { .. })).count();
                if depth >= MAX_CALL_DEPTH {
                    return Err(Halt::Fuel);
                }
                let saved = std::mem::replace(&mut n.locals, f.params.iter().cloned().zip(vals).collect());
                n.code.push(Cont::Return {
                    func: func.clone(),
                    saved,
                    results: results.clone(),
                    returns: f.returns.clone(),
                });
                n.code.push(Cont::Run(f.body.clone()));
            }
        }
        Ok(Some(vec![std::mem::take(n)]))
    }

    fn fresh_contents(&self, base: Word, size: Word) -> Vec<Vec<u8>> {
        match self.contents {
            ContentPolicy::Constant(b) => vec![vec![*b; size as usize]],
            ContentPolicy::Seeded(s) => vec![(0..size).map(|i| seeded_byte(*s, self.width.add(base, i))).collect()],
            ContentPolicy::Domain(d) if d.is_empty() => vec![vec![0; size as usize]],
            ContentPolicy::Domain(d) => {
                let mut acc: Vec<Vec<u8>> = vec![vec![]];
                for _ in 0..size {
                    acc = acc
                        .into_iter()
                        .flat_map(|p| {
                            d.iter().map(move |b| {
                                let mut q = p.clone();
                                q.push(*b);
                                q
                            })
                        })
                        .collect();
                }
                acc
            }
        }
    }
}

/// Exhaustive bounded search over small-step runs from the entry call. Each path may
/// take at most `env.fuel` steps.
pub fn small_step_outcomes(env: &ExecEnv, args: &[Word], res: Resolution<'_>) -> Vec<Outcome> {
    let st = Stepper::new(env, res);
    let init = match st.initial(env.memory.clone(), args) {
        Ok(c) => c,
        Err(h) => return vec![Outcome::halted(h, vec![], vec![])],
    };
    let mut out = Vec::new();
    let mut stack = vec![(init, env.fuel)];
    while let Some((c, fuel)) = stack.pop() {
        match st.step_detailed(&c) {
            StepResult::Finished => out.push(Outcome::Terminated {
                mem: c.mem,
                locals: c.locals,
                io: c.io,
                leak: c.leak,
                returns: c.returns.unwrap_or_default(),
            }),
            StepResult::Stuck { halt, io, leak } => out.push(Outcome::halted(halt, io, leak)),
            StepResult::Next(_) if fuel == 0 => out.push(Outcome::FuelExhausted { io: c.io, leak: c.leak }),
            StepResult::Next(next) => stack.extend(next.into_iter().rev().map(|n| (n, fuel - 1))),
        }
    }
    dedup(out)
}

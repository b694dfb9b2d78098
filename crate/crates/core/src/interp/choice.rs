//! Enumeration of nondeterministic choices by replay.
//!
//! An execution asks a [`Driver`] for an index whenever it faces `n` alternatives. Runs
//! are repeated with successive choice prefixes in depth-first order until every
//! combination has been visited, so ordinary recursive interpreters enumerate exhaustively.

use super::env::{BenignReason, ContentPolicy, Halt, InputPolicy, Resolution};
use super::mem::MemState;
use crate::lang::{Width, Word};
use crate::trace::LeakEvent;

#[derive(Clone, Debug, Default)]
pub struct Driver {
    prefix: Vec<usize>,
    pos: usize,
    taken: Vec<(usize, usize)>,
}

impl Driver {
    pub fn new() -> Driver {
        Driver::default()
    }

    pub fn replaying(choices: &[usize]) -> Driver {
        Driver { prefix: choices.to_vec(), ..Default::default() }
    }

    pub fn choose(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = self.prefix.get(self.pos).copied().unwrap_or(0).min(n - 1);
        self.taken.push((i, n));
        self.pos += 1;
        i
    }

    pub fn choices(&self) -> Vec<usize> {
        self.taken.iter().map(|(i, _)| *i).collect()
    }

    fn next_prefix(&self) -> Option<Vec<usize>> {
        let j = self.taken.iter().rposition(|(i, n)| i + 1 < *n)?;
        let mut p: Vec<usize> = self.taken[..j].iter().map(|(i, _)| *i).collect();
        p.push(self.taken[j].0 + 1);
        Some(p)
    }
}

/// Runs `exec` once per choice combination, collecting the results with their choices.
pub fn explore<T>(mut exec: impl FnMut(&mut Driver) -> T) -> Vec<(Vec<usize>, T)> {
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    loop {
        let mut d = Driver::replaying(&prefix);
        let r = exec(&mut d);
        out.push((d.choices(), r));
        match d.next_prefix() {
            Some(p) => prefix = p,
            None => return out,
        }
    }
}

pub(crate) fn seeded_byte(seed: u64, addr: Word) -> u8 {
    let mut z = seed ^ (addr as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) as u8
}

/// Resolves every kind of choice an execution can face.
pub(crate) struct Chooser<'a> {
    pub width: Width,
    pub res: Resolution<'a>,
    pub inputs: &'a InputPolicy,
    pub contents: &'a ContentPolicy,
    pub driver: &'a mut Driver,
    pub inputs_used: usize,
    /// Oracle queries made so far, when logging is on.
    pub log: Option<Vec<(Vec<LeakEvent>, QueryKind)>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    Alloc,
    Random,
}

impl<'a> Chooser<'a> {
    pub fn new(
        width: Width,
        res: Resolution<'a>,
        inputs: &'a InputPolicy,
        contents: &'a ContentPolicy,
        driver: &'a mut Driver,
    ) -> Chooser<'a> {
        Chooser { width, res, inputs, contents, driver, inputs_used: 0, log: None }
    }

    fn note(&mut self, leak: &[LeakEvent], kind: QueryKind) {
        if let Some(log) = &mut self.log {
            log.push((leak.to_vec(), kind));
        }
    }

    /// Picks a base for an `n`-byte allocation and its fresh contents.
    pub fn alloc(&mut self, leak: &[LeakEvent], mem: &MemState, n: Word) -> Result<(Word, Vec<u8>), Halt> {
        let w = self.width;
        let ok = |a: Word| a % w.bytes() == 0 && mem.range_free(a, n, w);
        let base = match self.res {
            Resolution::Oracle(o) => {
                self.note(leak, QueryKind::Alloc);
                let a = o.query(leak, w);
                if !ok(a) {
                    return Err(Halt::Benign(BenignReason::OutOfMemory));
                }
                a
            }
            Resolution::Universe(u) => {
                let cands: Vec<Word> = u.bases.iter().copied().filter(|a| ok(*a)).collect();
                if cands.is_empty() {
                    return Err(Halt::Benign(BenignReason::OutOfMemory));
                }
                cands[self.driver.choose(cands.len())]
            }
        };
        let bytes = (0..n).map(|i| self.fresh_byte(w.add(base, i))).collect();
        Ok((base, bytes))
    }

    fn fresh_byte(&mut self, addr: Word) -> u8 {
        match self.contents {
            ContentPolicy::Constant(b) => *b,
            ContentPolicy::Seeded(s) => seeded_byte(*s, addr),
            ContentPolicy::Domain(d) if d.is_empty() => 0,
            ContentPolicy::Domain(d) => d[self.driver.choose(d.len())],
        }
    }

    pub fn random(&mut self, leak: &[LeakEvent]) -> Word {
        match self.res {
            Resolution::Oracle(o) => {
                self.note(leak, QueryKind::Random);
                o.query(leak, self.width)
            }
            Resolution::Universe(u) if u.randoms.is_empty() => 0,
            Resolution::Universe(u) => u.randoms[self.driver.choose(u.randoms.len())],
        }
    }

    pub fn input(&mut self) -> Result<Word, Halt> {
        let i = self.inputs_used;
        let v = match self.inputs {
            InputPolicy::Script(s) => s.get(i).copied(),
            InputPolicy::Domains(ds) => match ds.get(i) {
                Some(d) if !d.is_empty() => Some(d[self.driver.choose(d.len())]),
                _ => None,
            },
        };
        let v = v.ok_or(Halt::Benign(BenignReason::NoInput))?;
        self.inputs_used += 1;
        Ok(self.width.wrap(v as u64))
    }
}

use super::mem::MemState;
use crate::lang::{Program, Width, Word};
use crate::trace::{IoTrace, LeakTrace, Oracle};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub type Locals = BTreeMap<String, Word>;

pub const DEFAULT_FUEL: u64 = 1_000_000;

/// Where `x = input();` gets its value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputPolicy {
    /// Fixed script; running past its end is benign stuckness.
    Script(Vec<Word>),
    /// The i-th input call draws from the i-th set; calls past the list are benign stuckness.
    Domains(Vec<Vec<Word>>),
}

impl Default for InputPolicy {
    fn default() -> Self {
        InputPolicy::Script(Vec::new())
    }
}

/// Contents of freshly stack-allocated bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentPolicy {
    Constant(u8),
    Seeded(u64),
    Domain(Vec<u8>),
}

impl Default for ContentPolicy {
    fn default() -> Self {
        ContentPolicy::Domain(vec![0x00, 0xAA])
    }
}

/// Everything an execution needs besides entry arguments and a resolution mode.
#[derive(Clone, Debug)]
pub struct ExecEnv {
    pub program: Arc<Program>,
    pub width: Width,
    pub memory: MemState,
    pub inputs: InputPolicy,
    pub contents: ContentPolicy,
    pub fuel: u64,
}

impl ExecEnv {
    pub fn new(program: Program) -> ExecEnv {
        ExecEnv {
            program: Arc::new(program),
            width: Width::W32,
            memory: MemState::new(),
            inputs: InputPolicy::default(),
            contents: ContentPolicy::default(),
            fuel: DEFAULT_FUEL,
        }
    }

    pub fn with_width(mut self, w: Width) -> Self {
        self.width = w;
        self
    }

    pub fn with_memory(mut self, m: MemState) -> Self {
        self.memory = m;
        self
    }

    pub fn with_inputs(mut self, i: InputPolicy) -> Self {
        self.inputs = i;
        self
    }

    pub fn with_contents(mut self, c: ContentPolicy) -> Self {
        self.contents = c;
        self
    }

    pub fn with_fuel(mut self, f: u64) -> Self {
        self.fuel = f;
        self
    }
}

/// Finite candidate sets for compiler-resolved choices during enumeration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceUniverse {
    pub bases: Vec<Word>,
    pub randoms: Vec<Word>,
}

impl Default for ChoiceUniverse {
    fn default() -> Self {
        ChoiceUniverse { bases: vec![64, 128, 192], randoms: vec![0, 1] }
    }
}

impl ChoiceUniverse {
    pub fn with_bases(bases: Vec<Word>) -> Self {
        ChoiceUniverse { bases, ..Default::default() }
    }
}

/// How `StackAlloc` and `Random` are resolved.
#[derive(Clone, Copy, Debug)]
pub enum Resolution<'a> {
    Oracle(&'a Oracle),
    Universe(&'a ChoiceUniverse),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenignReason {
    OutOfMemory,
    NoInput,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorReason {
    UndefinedVariable(String),
    UndefinedFunction(String),
    ArityMismatch(String),
    MemoryFault(Word),
}

impl fmt::Display for ErrorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorReason::UndefinedVariable(x) => write!(f, "undefined variable {x}"),
            ErrorReason::UndefinedFunction(g) => write!(f, "undefined function {g}"),
            ErrorReason::ArityMismatch(g) => write!(f, "arity mismatch calling {g}"),
            ErrorReason::MemoryFault(a) => write!(f, "memory fault at {a}"),
        }
    }
}

/// Why an execution stopped early.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Halt {
    Benign(BenignReason),
    Error(ErrorReason),
    Fuel,
}

impl From<ErrorReason> for Halt {
    fn from(e: ErrorReason) -> Halt {
        Halt::Error(e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Terminated { mem: MemState, locals: Locals, io: IoTrace, leak: LeakTrace, returns: Vec<Word> },
    BenignStuck { reason: BenignReason, io: IoTrace, leak: LeakTrace },
    ErrorStuck { reason: ErrorReason, io: IoTrace, leak: LeakTrace },
    /// Budget exhausted; traces are those accumulated so far.
    FuelExhausted { io: IoTrace, leak: LeakTrace },
}

impl Outcome {
    pub(crate) fn halted(h: Halt, io: IoTrace, leak: LeakTrace) -> Outcome {
        match h {
            Halt::Benign(reason) => Outcome::BenignStuck { reason, io, leak },
            Halt::Error(reason) => Outcome::ErrorStuck { reason, io, leak },
            Halt::Fuel => Outcome::FuelExhausted { io, leak },
        }
    }

    pub fn leak(&self) -> &LeakTrace {
        match self {
            Outcome::Terminated { leak, .. }
            | Outcome::BenignStuck { leak, .. }
            | Outcome::ErrorStuck { leak, .. }
            | Outcome::FuelExhausted { leak, .. } => leak,
        }
    }

    pub fn io(&self) -> &IoTrace {
        match self {
            Outcome::Terminated { io, .. }
            | Outcome::BenignStuck { io, .. }
            | Outcome::ErrorStuck { io, .. }
            | Outcome::FuelExhausted { io, .. } => io,
        }
    }

    pub fn returns(&self) -> Option<&[Word]> {
        match self {
            Outcome::Terminated { returns, .. } => Some(returns),
            _ => None,
        }
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self, Outcome::Terminated { .. })
    }

    pub fn is_benign(&self) -> bool {
        matches!(self, Outcome::BenignStuck { .. })
    }

    /// ErrorStuck or FuelExhausted: hard failures in every check mode.
    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::ErrorStuck { .. } | Outcome::FuelExhausted { .. })
    }

    pub fn status(&self) -> &'static str {
        match self {
            Outcome::Terminated { .. } => "terminated",
            Outcome::BenignStuck { .. } => "benign_stuck",
            Outcome::ErrorStuck { .. } => "error_stuck",
            Outcome::FuelExhausted { .. } => "fuel_exhausted",
        }
    }

    pub fn reason(&self) -> Option<String> {
        match self {
            Outcome::BenignStuck { reason, .. } => Some(format!("{reason:?}")),
            Outcome::ErrorStuck { reason, .. } => Some(reason.to_string()),
            _ => None,
        }
    }

    /// The `(io, leak, returns)` triple compared across semantics.
    pub fn observation(&self) -> (IoTrace, LeakTrace, Option<Vec<Word>>) {
        (self.io().clone(), self.leak().clone(), self.returns().map(|r| r.to_vec()))
    }
}

#[derive(Serialize)]
struct OutcomeRecord<'a> {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    io: &'a IoTrace,
    leak: &'a LeakTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    returns: Option<&'a [Word]>,
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        OutcomeRecord {
            status: self.status(),
            reason: self.reason(),
            io: self.io(),
            leak: self.leak(),
            returns: self.returns(),
        }
        .serialize(s)
    }
}

/// One enumerated execution and the choice indices that reproduce it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Run {
    pub choices: Vec<usize>,
    pub outcome: Outcome,
}

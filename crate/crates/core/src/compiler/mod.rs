//! A contract-carrying compiler: source programs to three-address code to register
//! machine code. Every pass returns a [`PassArtifact`] bundling the compiled program with
//! its leakage, oracle and predictor transformations.
//!
//! Pipeline: [`flatten`] → [`use_immediates`] → [`dead_code_elim`] → [`frame_alloc`] →
//! [`codegen`]. [`reorder_random`] is a standalone pass that has a predictor
//! transformation but provably no oracle transformation.

pub mod codegen;
pub mod contract;
pub mod dce;
pub mod flat;
pub mod flatten;
pub mod frame;
pub mod immediates;
pub mod reorder;
pub mod walk;

use crate::lang::{format, Program, Width, Word};
use crate::machine::{MachineProgram, MachineTrace};
use crate::predict::{Predictor, PredictorOut};
use crate::trace::{LeakEvent, LeakTrace, Oracle};
use codegen::{generate, machine_walk, CompiledMachine, MachineWalkEnd};
use flat::FlatProgram;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;
use walk::{transformed_predict, LowStatus, Lowered, Replayer};

pub use codegen::MachineLayout;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
}

/// A transformation was handed a trace or context it cannot process.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("event {position}: expected {expected}, found {found}")]
    Mismatch { position: usize, expected: &'static str, found: LeakEvent },
    #[error("trace continues past the end of the program at event {position}")]
    Trailing { position: usize },
    #[error("trace ends before the program does")]
    Truncated,
    #[error("call to unknown function `{0}`")]
    UnknownFunction(String),
    #[error("replay exceeded its depth or step budget")]
    TooDeep,
    #[error("jump to {0:#x} outside the code")]
    BadTarget(Word),
    #[error("context lacks the {0}")]
    MissingContext(&'static str),
    #[error("context code position {found:#x} differs from the compiled base {expected:#x}")]
    WrongPosition { expected: Word, found: Word },
    #[error("stage produced machine leakage where leakage events were expected")]
    LevelMismatch,
    #[error("source predictor ends before the program does")]
    PredictorEnded,
}

impl ReplayError {
    /// The trace position the replay rejected, if it is about one event.
    pub fn position(&self) -> Option<usize> {
        match self {
            ReplayError::Mismatch { position, .. } | ReplayError::Trailing { position } => Some(*position),
            _ => None,
        }
    }
}

/// A program at one of the three compilation levels.
#[derive(Clone, Debug)]
pub enum Level {
    Source(Program),
    Flat(FlatProgram),
    Machine(MachineProgram),
}

impl Level {
    pub fn name(&self) -> &'static str {
        match self {
            Level::Source(_) => "source",
            Level::Flat(_) => "flat",
            Level::Machine(_) => "machine",
        }
    }

    /// The program as executable source, for the two levels the interpreter runs.
    pub fn as_program(&self) -> Option<Program> {
        match self {
            Level::Source(p) => Some(p.clone()),
            Level::Flat(f) => Some(f.to_program()),
            Level::Machine(_) => None,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Source(p) => f.write_str(&format(p)),
            Level::Flat(p) => write!(f, "{p}"),
            Level::Machine(m) => f.write_str(&m.listing()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LowTrace {
    Leak(LeakTrace),
    Machine(MachineTrace),
}

impl LowTrace {
    pub fn len(&self) -> usize {
        match self {
            LowTrace::Leak(k) => k.len(),
            LowTrace::Machine(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A target-level predictor. Machine code has no nondeterminism left, so a machine
/// predictor is just the trace it predicts.
#[derive(Clone, Debug)]
pub enum LowPredictor {
    Leak(Predictor),
    Machine(MachineTrace),
}

/// What the target level contributes to a transformation.
#[derive(Clone, Debug, Default)]
pub struct LowContext {
    pub oracle: Option<Oracle>,
    /// `sp` inside the entry function's body.
    pub sp: Option<Word>,
    /// Position of the first instruction.
    pub position: Option<Word>,
}

impl LowContext {
    pub fn with_oracle(a: Oracle) -> LowContext {
        LowContext { oracle: Some(a), ..LowContext::default() }
    }

    pub fn machine(sp: Word, position: Word) -> LowContext {
        LowContext { oracle: None, sp: Some(sp), position: Some(position) }
    }
}

/// Which context fields a pass's gamma reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ContextSchema {
    pub oracle: bool,
    pub sp: bool,
    pub position: bool,
}

impl fmt::Display for ContextSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.oracle, "low oracle"), (self.sp, "sp"), (self.position, "code position")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(", "))
        }
    }
}

pub type GammaFn = dyn Fn(&[LeakEvent], &LowContext) -> Result<LowTrace, ReplayError> + Send + Sync;
pub type OracleTransformFn = dyn Fn(&LowContext) -> Result<Oracle, ReplayError> + Send + Sync;
pub type PredictorTransformFn = dyn Fn(&Predictor, &LowContext) -> Result<LowPredictor, ReplayError> + Send + Sync;

/// A compiled program together with its transformation functions. The transformations
/// see only leakage and the declared context, never the source state.
#[derive(Clone)]
pub struct PassArtifact {
    pub name: String,
    pub width: Width,
    pub source: Level,
    pub target: Level,
    pub schema: ContextSchema,
    pub gamma: Arc<GammaFn>,
    pub oracle_transform: Option<Arc<OracleTransformFn>>,
    pub predictor_transform: Option<Arc<PredictorTransformFn>>,
    /// Machine code with its walk tags, when the target is machine code.
    pub compiled: Option<Arc<CompiledMachine>>,
}

impl fmt::Debug for PassArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PassArtifact")
            .field("name", &self.name)
            .field("source", &self.source.name())
            .field("target", &self.target.name())
            .field("schema", &self.schema)
            .field("oracle_transform", &self.oracle_transform.is_some())
            .field("predictor_transform", &self.predictor_transform.is_some())
            .finish()
    }
}

impl PassArtifact {
    pub fn gamma(&self, k: &[LeakEvent], ctx: &LowContext) -> Result<LowTrace, ReplayError> {
        (self.gamma)(k, ctx)
    }

    /// `None` when the pass has no oracle transformation.
    pub fn transform_oracle(&self, ctx: &LowContext) -> Option<Result<Oracle, ReplayError>> {
        self.oracle_transform.as_ref().map(|f| f(ctx))
    }

    pub fn transform_predictor(&self, p: &Predictor, ctx: &LowContext) -> Option<Result<LowPredictor, ReplayError>> {
        self.predictor_transform.as_ref().map(|f| f(p, ctx))
    }

    pub fn target_flat(&self) -> Option<&FlatProgram> {
        match &self.target {
            Level::Flat(f) => Some(f),
            _ => None,
        }
    }

    pub fn target_machine(&self) -> Option<&MachineProgram> {
        match &self.target {
            Level::Machine(m) => Some(m),
            _ => None,
        }
    }

    pub fn layout(&self) -> Option<MachineLayout> {
        self.compiled.as_ref().map(|c| c.layout)
    }
}

fn leakage_preserving(name: &str, width: Width, source: Level, target: Level) -> PassArtifact {
    PassArtifact {
        name: name.into(),
        width,
        source,
        target,
        schema: ContextSchema::default(),
        gamma: Arc::new(|k, _| Ok(LowTrace::Leak(k.to_vec()))),
        oracle_transform: Some(Arc::new(|ctx| ctx.oracle.clone().ok_or(ReplayError::MissingContext("low oracle")))),
        predictor_transform: Some(Arc::new(|p, _| Ok(LowPredictor::Leak(p.clone())))),
        compiled: None,
    }
}

/// Wraps a flat-to-flat replay into the three transformations.
fn replaying(name: &str, width: Width, source: FlatProgram, target: FlatProgram, r: Arc<dyn Replayer>, schema: ContextSchema) -> PassArtifact {
    let rg = r.clone();
    let gamma = move |k: &[LeakEvent], ctx: &LowContext| {
        let mut low = |out: &[LeakEvent]| ctx.oracle.as_ref().map(|a| a.query(out, width));
        let l = rg.lower(k, &mut low)?;
        match l.status {
            LowStatus::Complete => Ok(LowTrace::Leak(l.out)),
            LowStatus::NeedLow => Err(ReplayError::MissingContext("low oracle")),
            LowStatus::NeedSource { .. } => Err(ReplayError::Truncated),
        }
    };
    let ro = r.clone();
    let oracle_transform = move |ctx: &LowContext| {
        let a = ctx.oracle.clone().ok_or(ReplayError::MissingContext("low oracle"))?;
        let r = ro.clone();
        Ok(Oracle::derived(move |k| {
            let mut low = |out: &[LeakEvent]| Some(a.query(out, width));
            match r.lower(k, &mut low) {
                Ok(Lowered { status: LowStatus::NeedSource { answer: Some(x), .. }, .. }) => x,
                Ok(Lowered { out, status: LowStatus::NeedSource { answer: None, .. } }) => a.query(&out, width),
                _ => 0,
            }
        }))
    };
    let predictor_transform = move |p: &Predictor, _: &LowContext| {
        let (r, p) = (r.clone(), p.clone());
        Ok(LowPredictor::Leak(Predictor::derived(move |kl| transformed_predict(&*r, &p, kl))))
    };
    PassArtifact {
        name: name.into(),
        width,
        source: Level::Flat(source),
        target: Level::Flat(target),
        schema,
        gamma: Arc::new(gamma),
        oracle_transform: Some(Arc::new(oracle_transform)),
        predictor_transform: Some(Arc::new(predictor_transform)),
        compiled: None,
    }
}

pub fn flatten(p: &Program, width: Width) -> Result<PassArtifact, CompileError> {
    let f = flatten::flatten_program(p)?;
    Ok(leakage_preserving("flatten", width, Level::Source(p.clone()), Level::Flat(f)))
}

pub fn use_immediates(p: &FlatProgram, width: Width) -> PassArtifact {
    let q = immediates::fold_immediates(p);
    leakage_preserving("use_immediates", width, Level::Flat(p.clone()), Level::Flat(q))
}

pub fn dead_code_elim(p: &FlatProgram, width: Width) -> PassArtifact {
    let (q, dead) = dce::eliminate(p);
    let r = Arc::new(dce::DceReplay { source: p.clone(), dead });
    replaying("dead_code_elim", width, p.clone(), q, r, ContextSchema::default())
}

pub fn frame_alloc(p: &FlatProgram, width: Width) -> PassArtifact {
    let (q, layouts) = frame::allocate_frames(p);
    let r = Arc::new(frame::FrameReplay { source: p.clone(), layouts });
    replaying("frame_alloc", width, p.clone(), q, r, ContextSchema { oracle: true, ..ContextSchema::default() })
}

/// Step budget for machine walks.
const WALK_LIMIT: u64 = 1 << 22;

fn machine_sp(c: &CompiledMachine, ctx: &LowContext) -> Result<Word, ReplayError> {
    if let Some(pos) = ctx.position {
        if pos != c.layout.base {
            return Err(ReplayError::WrongPosition { expected: c.layout.base, found: pos });
        }
    }
    Ok(ctx.sp.unwrap_or(c.layout.stack.sp0))
}

pub fn codegen(p: &FlatProgram, width: Width, layout: MachineLayout) -> Result<PassArtifact, CompileError> {
    let c = Arc::new(generate(p, width, layout)?);
    let cg = c.clone();
    let gamma = move |k: &[LeakEvent], ctx: &LowContext| {
        let sp = machine_sp(&cg, ctx)?;
        match machine_walk(&cg, k, sp, WALK_LIMIT)? {
            (t, MachineWalkEnd::Complete) => Ok(LowTrace::Machine(t)),
            (_, MachineWalkEnd::Exhausted(_)) => Err(ReplayError::Truncated),
        }
    };
    let co = c.clone();
    let oracle_transform = move |ctx: &LowContext| {
        let sp = machine_sp(&co, ctx)?;
        let c = co.clone();
        Ok(Oracle::derived(move |k| match machine_walk(&c, k, sp, WALK_LIMIT) {
            Ok((_, MachineWalkEnd::Exhausted(Some(a)))) => a,
            _ => 0,
        }))
    };
    let cp = c.clone();
    let predictor_transform = move |p: &Predictor, ctx: &LowContext| {
        let sp = machine_sp(&cp, ctx)?;
        let mut kh: LeakTrace = Vec::new();
        loop {
            match machine_walk(&cp, &kh, sp, WALK_LIMIT)? {
                (t, MachineWalkEnd::Complete) => return Ok(LowPredictor::Machine(t)),
                (_, MachineWalkEnd::Exhausted(answer)) => match p.predict(&kh) {
                    PredictorOut::PLeak(w) => kh.push(LeakEvent::Leak(w)),
                    PredictorOut::PBranch => kh.push(LeakEvent::CompNonDet(answer.unwrap_or(0))),
                    PredictorOut::PEnd => return Err(ReplayError::PredictorEnded),
                },
            }
        }
    };
    Ok(PassArtifact {
        name: "codegen".into(),
        width,
        source: Level::Flat(p.clone()),
        target: Level::Machine(c.program.clone()),
        schema: ContextSchema { oracle: false, sp: true, position: true },
        gamma: Arc::new(gamma),
        oracle_transform: Some(Arc::new(oracle_transform)),
        predictor_transform: Some(Arc::new(predictor_transform)),
        compiled: Some(c),
    })
}

pub fn reorder_random(p: &Program, width: Width) -> Result<PassArtifact, CompileError> {
    let (q, site) = reorder::reorder_program(p)?;
    let gamma = move |k: &[LeakEvent], ctx: &LowContext| {
        reorder::reorder_gamma(site, k, ctx.oracle.as_ref(), width).map(LowTrace::Leak).ok_or(ReplayError::Truncated)
    };
    let predictor_transform = move |p: &Predictor, _: &LowContext| {
        let p = p.clone();
        Ok(LowPredictor::Leak(Predictor::derived(move |kl| reorder::reorder_predictor(site, &p, kl))))
    };
    Ok(PassArtifact {
        name: "reorder_random".into(),
        width,
        source: Level::Source(p.clone()),
        target: Level::Source(q),
        schema: ContextSchema { oracle: true, ..ContextSchema::default() },
        gamma: Arc::new(gamma),
        oracle_transform: None,
        predictor_transform: Some(Arc::new(predictor_transform)),
        compiled: None,
    })
}

/// `a` followed by `b`. Gammas chain forward; `b`'s oracle transformation supplies the
/// oracle `a` runs against, so oracle transformations compose right to left, and
/// predictor transformations compose left to right.
pub fn compose(a: PassArtifact, b: PassArtifact) -> PassArtifact {
    let inner = {
        let bo = b.oracle_transform.clone();
        move |ctx: &LowContext| LowContext {
            oracle: match &bo {
                Some(f) => f(ctx).ok(),
                None => ctx.oracle.clone(),
            },
            ..ctx.clone()
        }
    };
    let inner = Arc::new(inner);
    let gamma = {
        let (ga, gb, inner) = (a.gamma.clone(), b.gamma.clone(), inner.clone());
        move |k: &[LeakEvent], ctx: &LowContext| match ga(k, &inner(ctx))? {
            LowTrace::Leak(mid) => gb(&mid, ctx),
            LowTrace::Machine(_) => Err(ReplayError::LevelMismatch),
        }
    };
    let oracle_transform = match (&a.oracle_transform, &b.oracle_transform) {
        (Some(oa), Some(ob)) => {
            let (oa, ob) = (oa.clone(), ob.clone());
            let f = move |ctx: &LowContext| {
                let mid = ob(ctx)?;
                oa(&LowContext { oracle: Some(mid), ..ctx.clone() })
            };
            Some(Arc::new(f) as Arc<OracleTransformFn>)
        }
        _ => None,
    };
    let predictor_transform = match (&a.predictor_transform, &b.predictor_transform) {
        (Some(pa), Some(pb)) => {
            let (pa, pb, inner) = (pa.clone(), pb.clone(), inner.clone());
            let f = move |p: &Predictor, ctx: &LowContext| match pa(p, &inner(ctx))? {
                LowPredictor::Leak(mid) => pb(&mid, ctx),
                LowPredictor::Machine(_) => Err(ReplayError::LevelMismatch),
            };
            Some(Arc::new(f) as Arc<PredictorTransformFn>)
        }
        _ => None,
    };
    let schema = ContextSchema {
        oracle: b.schema.oracle || (a.schema.oracle && b.oracle_transform.is_none()),
        sp: a.schema.sp || b.schema.sp,
        position: a.schema.position || b.schema.position,
    };
    PassArtifact {
        name: format!("{};{}", a.name, b.name),
        width: b.width,
        source: a.source,
        target: b.target,
        schema,
        gamma: Arc::new(gamma),
        oracle_transform,
        predictor_transform,
        compiled: b.compiled,
    }
}

pub const PIPELINE: [&str; 5] = ["flatten", "use_immediates", "dead_code_elim", "frame_alloc", "codegen"];

/// Applies the named pass to `input`.
pub fn apply_pass(name: &str, input: &Level, width: Width, layout: MachineLayout) -> Result<PassArtifact, CompileError> {
    let flat = || match input {
        Level::Flat(f) => Ok(f),
        other => Err(CompileError::Invalid(format!("{name} expects flat code, got {} code", other.name()))),
    };
    match name {
        "flatten" => match input {
            Level::Source(p) => flatten(p, width),
            other => Err(CompileError::Invalid(format!("flatten expects source code, got {} code", other.name()))),
        },
        "reorder_random" => match input {
            Level::Source(p) => reorder_random(p, width),
            other => Err(CompileError::Invalid(format!("reorder_random expects source code, got {} code", other.name()))),
        },
        "use_immediates" => Ok(use_immediates(flat()?, width)),
        "dead_code_elim" => Ok(dead_code_elim(flat()?, width)),
        "frame_alloc" => Ok(frame_alloc(flat()?, width)),
        "codegen" => codegen(flat()?, width, layout),
        other => Err(CompileError::UnknownPass(other.to_string())),
    }
}

/// Runs the named passes in order, each on the previous target. The first error wins.
pub fn run_stages(p: &Program, names: &[&str], width: Width, layout: MachineLayout) -> Result<Vec<PassArtifact>, CompileError> {
    let mut level = Level::Source(p.clone());
    let mut out = Vec::new();
    for name in names {
        let a = apply_pass(name, &level, width, layout)?;
        level = a.target.clone();
        out.push(a);
    }
    Ok(out)
}

pub fn pipeline_stages(p: &Program, width: Width, layout: MachineLayout) -> Result<Vec<PassArtifact>, CompileError> {
    run_stages(p, &PIPELINE, width, layout)
}

pub fn compose_all(stages: Vec<PassArtifact>) -> Option<PassArtifact> {
    stages.into_iter().reduce(compose)
}

pub fn compose_pipeline(p: &Program, width: Width, layout: MachineLayout) -> Result<PassArtifact, CompileError> {
    Ok(compose_all(pipeline_stages(p, width, layout)?).expect("pipeline is non-empty"))
}

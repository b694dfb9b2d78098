//! Run specifications: one JSON or TOML file describing a program, its environment,
//! and the labeling of public and secret inputs.

use anyhow::{anyhow, bail, Context, Result};
use ctleak::compiler::MachineLayout;
use ctleak::corpus;
use ctleak::ctcheck::{memory_fills, PublicProjection, SecretAssignment};
use ctleak::interp::{ChoiceUniverse, ContentPolicy, ExecEnv, InputPolicy, MemState, DEFAULT_FUEL};
use ctleak::lang::{parse, validate_with, Program, ValidateOptions, Width, Word};
use ctleak::trace::{inputs_of, LeakTrace, Oracle};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// An initial memory write: raw bytes or one little-endian word.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Poke {
    Bytes { addr: Word, bytes: Vec<u8> },
    Word { addr: Word, word: Word },
}

impl Poke {
    fn apply(&self, m: &mut MemState, w: Width) {
        match self {
            Poke::Bytes { addr, bytes } => m.poke(*addr, bytes, w),
            Poke::Word { addr, word } => m.poke_word(*addr, w.bytes(), *word, w),
        }
    }
}

/// A declassified predicate of the secret state.
#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Declassify {
    /// Whether input `value_input` equals the word stored at `args[base_arg] + stride * input[index_input]`.
    TableMatch { base_arg: usize, stride: Word, index_input: usize, value_input: usize },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicSpec {
    #[serde(default)]
    pub args: Vec<usize>,
    /// Positions of public input values.
    #[serde(default)]
    pub inputs: Vec<usize>,
    /// Only the number of inputs is public.
    #[serde(default)]
    pub input_count: bool,
    /// Only the number of inputs before this terminator is public.
    pub line_length: Option<Word>,
    #[serde(default)]
    pub declassify: Vec<Declassify>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub addr: Word,
    pub len: u32,
}

/// The secret space: the product of argument vectors, memory fills and input policies.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecretSpec {
    pub args: Option<Vec<Vec<Word>>>,
    /// Each entry is a list of writes applied on top of the base memory.
    pub memories: Option<Vec<Vec<Poke>>>,
    /// Every byte of each region ranges over `values`.
    #[serde(default)]
    pub regions: Vec<Region>,
    pub values: Option<Vec<u8>>,
    pub inputs: Option<Vec<InputPolicy>>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct TableSpec {
    pub table: Vec<(LeakTrace, Word)>,
    pub default: Word,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// `corpus:NAME` or a path relative to the spec file.
    pub program: String,
    pub entry: Option<String>,
    pub args: Option<Vec<Word>>,
    pub memory: Option<Vec<Poke>>,
    pub oracle: Option<Oracle>,
    pub inputs: Option<InputPolicy>,
    pub contents: Option<ContentPolicy>,
    pub universe: Option<ChoiceUniverse>,
    pub width: Option<Width>,
    pub fuel: Option<u64>,
    /// Admit `random`.
    pub demo: Option<bool>,
    #[serde(default)]
    pub public: PublicSpec,
    #[serde(default)]
    pub secrets: SecretSpec,
    /// Oracles quantified over by the oracle-indexed notions.
    pub oracles: Option<Vec<Oracle>>,
    /// Low oracles for pass contracts.
    pub contexts: Option<Vec<Oracle>>,
    /// Argument vectors for pass contracts.
    pub check_args: Option<Vec<Vec<Word>>>,
    pub counterexample: Option<TableSpec>,
    pub layout: Option<MachineLayout>,
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub width: Option<Width>,
    pub fuel: Option<u64>,
    pub seed: Option<u64>,
}

/// A spec with every default filled in.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: RunSpec,
    pub name: String,
    pub env: ExecEnv,
    pub args: Vec<Word>,
    pub oracle: Oracle,
    pub universe: ChoiceUniverse,
    pub layout: MachineLayout,
}

pub fn load(path: &Path) -> Result<RunSpec> {
    if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("corpus:")) {
        corpus::entry(name).ok_or_else(|| anyhow!("no corpus program named {name}"))?;
        return Ok(RunSpec { program: format!("corpus:{name}"), ..Default::default() });
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec: RunSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    if !spec.program.starts_with("corpus:") {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        spec.program = dir.join(&spec.program).to_string_lossy().into_owned();
    }
    Ok(spec)
}

fn load_program(spec: &RunSpec, width: Width) -> Result<(String, Program)> {
    let (name, text, demo) = match spec.program.strip_prefix("corpus:") {
        Some(name) => {
            let e = corpus::entry(name).ok_or_else(|| anyhow!("no corpus program named {name}"))?;
            (name.to_string(), e.source.to_string(), e.demo)
        }
        None => {
            let path = PathBuf::from(&spec.program);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (name, text, false)
        }
    };
    let mut p = parse(&text).map_err(|e| anyhow!("{name}: {e}"))?;
    if let Some(entry) = &spec.entry {
        p = p.with_entry(entry);
    }
    let opts = ValidateOptions { width, demo_constructs: spec.demo.unwrap_or(demo) };
    let diags = validate_with(&p, &opts);
    if !diags.is_empty() {
        let list: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        bail!("{name} does not validate: {}", list.join("; "));
    }
    Ok((name, p))
}

impl RunSpec {
    pub fn resolve(self, o: &Overrides) -> Result<Resolved> {
        let width = o.width.or(self.width).unwrap_or(Width::W32);
        let (name, program) = load_program(&self, width)?;
        let scenario = match self.program.strip_prefix("corpus:") {
            Some(n) if width == Width::W32 => Some(corpus::scenario(n)),
            _ => None,
        };
        let mut memory = scenario.as_ref().map(|s| s.env.memory.clone()).unwrap_or_default();
        if let Some(pokes) = &self.memory {
            memory = MemState::new();
            for p in pokes {
                p.apply(&mut memory, width);
            }
        }
        let inputs = self
            .inputs
            .clone()
            .or_else(|| scenario.as_ref().map(|s| s.env.inputs.clone()))
            .unwrap_or_default();
        let args = self.args.clone().or_else(|| scenario.as_ref().map(|s| s.args.clone())).unwrap_or_default();
        let fuel = o.fuel.or(self.fuel).unwrap_or(DEFAULT_FUEL);
        if fuel == 0 {
            bail!("fuel must be positive");
        }
        let mut env = ExecEnv::new(program).with_width(width).with_memory(memory).with_inputs(inputs).with_fuel(fuel);
        if let Some(c) = &self.contents {
            env = env.with_contents(c.clone());
        }
        let oracle = match o.seed {
            Some(seed) => Oracle::Seeded(seed),
            None => self.oracle.clone().unwrap_or(Oracle::Bump { base: 64, stride: 16 }),
        };
        let universe = self.universe.clone().unwrap_or_default();
        if universe.bases.is_empty() || universe.randoms.is_empty() {
            bail!("the choice universe must be nonempty");
        }
        let layout = self.layout.unwrap_or_default();
        Ok(Resolved { spec: self, name, env, args, oracle, universe, layout })
    }
}

impl Resolved {
    pub fn width(&self) -> Width {
        self.env.width
    }

    pub fn publics(&self) -> PublicProjection {
        let p = &self.spec.public;
        let mut proj = PublicProjection::args(&p.args);
        if let Some(t) = p.line_length {
            proj = proj.with_line_length(t);
        } else if p.input_count {
            proj = proj.with_input_count();
        } else if !p.inputs.is_empty() {
            proj = proj.with_public_inputs(&p.inputs);
        }
        if !p.declassify.is_empty() {
            let rules = p.declassify.clone();
            let w = self.width();
            proj = proj.with_declassify(move |args, mem, io| {
                rules.iter().map(|r| declassified(r, args, mem, io, w)).collect()
            });
        }
        proj
    }

    pub fn secrets(&self) -> Vec<SecretAssignment> {
        let s = &self.spec.secrets;
        let w = self.width();
        let args = s.args.clone().unwrap_or_else(|| vec![self.args.clone()]);
        let inputs = s.inputs.clone().unwrap_or_else(|| vec![self.env.inputs.clone()]);
        let mut memories = match &s.memories {
            Some(fills) => fills
                .iter()
                .map(|pokes| {
                    let mut m = self.env.memory.clone();
                    for p in pokes {
                        p.apply(&mut m, w);
                    }
                    m
                })
                .collect(),
            None => vec![self.env.memory.clone()],
        };
        if !s.regions.is_empty() {
            let regions: Vec<(Word, u32)> = s.regions.iter().map(|r| (r.addr, r.len)).collect();
            let values = s.values.clone().unwrap_or_else(|| vec![0x00, 0xAA]);
            memories = memories
                .iter()
                .flat_map(|m| memory_fills(&[], m, &InputPolicy::default(), &regions, &values))
                .map(|a| a.memory)
                .collect();
        }
        let mut out = Vec::new();
        for a in &args {
            for m in &memories {
                for i in &inputs {
                    out.push(SecretAssignment { args: a.clone(), memory: m.clone(), inputs: i.clone() });
                }
            }
        }
        out
    }

    pub fn oracles(&self) -> Vec<Oracle> {
        self.spec.oracles.clone().unwrap_or_else(|| vec![self.oracle.clone()])
    }
}

fn declassified(r: &Declassify, args: &[Word], mem: &MemState, io: &[ctleak::trace::IoEvent], w: Width) -> Word {
    match r {
        Declassify::TableMatch { base_arg, stride, index_input, value_input } => {
            let ins = inputs_of(io);
            let (Some(base), Some(i), Some(v)) = (args.get(*base_arg), ins.get(*index_input), ins.get(*value_input))
            else {
                return Word::MAX;
            };
            let addr = w.wrap(*base as u64 + *stride as u64 * *i as u64);
            (mem.load(addr, w.bytes(), w) == Some(*v)) as Word
        }
    }
}

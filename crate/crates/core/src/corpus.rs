//! The bundled example programs, each with a default execution scenario.

use crate::interp::{ExecEnv, InputPolicy, MemState};
use crate::lang::{parse, validate_with, Program, ValidateOptions, Width, Word};

pub struct Entry {
    pub name: &'static str,
    pub source: &'static str,
    /// Uses `random`, which needs demo constructs enabled.
    pub demo: bool,
}

pub const ENTRIES: &[Entry] = &[
    Entry { name: "swap", source: include_str!("../corpus/swap.ct"), demo: false },
    Entry { name: "stack_swap", source: include_str!("../corpus/stack_swap.ct"), demo: false },
    Entry { name: "stackalloc_and_print", source: include_str!("../corpus/stackalloc_and_print.ct"), demo: false },
    Entry { name: "login", source: include_str!("../corpus/login.ct"), demo: false },
    Entry { name: "countdown", source: include_str!("../corpus/countdown.ct"), demo: false },
    Entry { name: "memequal", source: include_str!("../corpus/memequal.ct"), demo: false },
    Entry { name: "password_checker", source: include_str!("../corpus/password_checker.ct"), demo: false },
    Entry { name: "semiprime", source: include_str!("../corpus/semiprime.ct"), demo: false },
    Entry { name: "mod_const", source: include_str!("../corpus/mod_const.ct"), demo: false },
    Entry { name: "reorder_p", source: include_str!("../corpus/reorder_p.ct"), demo: true },
    Entry { name: "reorder_p_prime", source: include_str!("../corpus/reorder_p_prime.ct"), demo: true },
];

/// Names of every corpus program.
pub fn names() -> impl Iterator<Item = &'static str> {
    ENTRIES.iter().map(|e| e.name)
}

pub fn entry(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name)
}

pub fn source(name: &str) -> Option<&'static str> {
    entry(name).map(|e| e.source)
}

/// Parses and validates a corpus program. Panics on unknown names or broken sources.
pub fn program(name: &str) -> Program {
    let e = entry(name).unwrap_or_else(|| panic!("no corpus program named {name}"));
    let p = parse(e.source).unwrap_or_else(|err| panic!("{name}: {err}"));
    let opts = ValidateOptions { width: Width::W32, demo_constructs: e.demo };
    let diags = validate_with(&p, &opts);
    assert!(diags.is_empty(), "{name}: {diags:?}");
    p
}

/// The password stored in memory by the `password_checker` scenario.
pub const PASSWORD: &[u8; 8] = b"hunter2!";
pub const PASSWORD_ADDR: Word = 32;
/// The character offered to `getline` besides the newline.
pub const LINE_CHAR: Word = b'h' as Word;

/// A ready-to-run configuration: environment plus entry arguments.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub env: ExecEnv,
    pub args: Vec<Word>,
}

/// The default scenario of a corpus program at W = 32. Data lives below address 64 so
/// that the default allocation bases never collide with it.
pub fn scenario(name: &str) -> Scenario {
    let w = Width::W32;
    let mut mem = MemState::new();
    let mut inputs = InputPolicy::default();
    let args = match name {
        "swap" => {
            mem.poke_word(16, 4, 0, w);
            mem.poke_word(20, 4, 1, w);
            vec![16, 20]
        }
        "login" => {
            mem.poke_word(16, 4, 7, w);
            mem.poke_word(20, 4, 8, w);
            inputs = InputPolicy::Domains(vec![vec![0, 1], vec![7, 9]]);
            vec![16]
        }
        "countdown" => vec![2],
        "memequal" => {
            mem.poke(16, &[0, 1], w);
            mem.poke(48, &[0, 1], w);
            vec![16, 48, 2]
        }
        "password_checker" => {
            mem.poke(PASSWORD_ADDR, PASSWORD, w);
            inputs = InputPolicy::Domains(vec![vec![LINE_CHAR, 10]; 9]);
            vec![PASSWORD_ADDR]
        }
        "semiprime" => {
            inputs = InputPolicy::Script(vec![3, 5]);
            vec![]
        }
        "mod_const" => vec![7],
        "reorder_p" | "reorder_p_prime" => {
            mem.poke_word(16, 4, 0, w);
            mem.poke_word(20, 4, 0, w);
            vec![16]
        }
        _ => vec![],
    };
    let env = ExecEnv::new(program(name)).with_memory(mem).with_inputs(inputs);
    Scenario { env, args }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{format, Stmt};

    #[test]
    fn every_program_validates_and_round_trips() {
        for name in names() {
            let p = program(name);
            assert_eq!(parse(&format(&p)).unwrap(), p, "{name}");
            assert_eq!(p.entry, name);
        }
    }

    #[test]
    fn memequal_shape() {
        let p = program("memequal");
        let body = p.functions[0].body.flatten_seq();
        assert_eq!(body.len(), 3);
        let Stmt::While(_, inner) = body[1] else { panic!("expected a loop") };
        assert_eq!(inner.flatten_seq().len(), 6);
    }
}

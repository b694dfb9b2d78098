//! Canned walkthroughs over the bundled specs.

use crate::commands::{self, Notion, EXIT_CONFIG, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_OK};
use crate::spec::{Overrides, RunSpec};
use anyhow::{Context, Result};
use ctleak::ctcheck::CtVerdict;
use std::fmt::Write as _;

pub const SPECS: &[(&str, &str)] = &[
    ("countdown", include_str!("../specs/countdown.json")),
    ("login", include_str!("../specs/login.json")),
    ("login_declassified", include_str!("../specs/login_declassified.json")),
    ("memequal", include_str!("../specs/memequal.json")),
    ("mod_const", include_str!("../specs/mod_const.json")),
    ("password_checker", include_str!("../specs/password_checker.json")),
    ("reorder", include_str!("../specs/reorder.json")),
    ("semiprime", include_str!("../specs/semiprime.json")),
    ("stack_swap", include_str!("../specs/stack_swap.json")),
    ("stackalloc_and_print", include_str!("../specs/stackalloc_and_print.json")),
    ("swap", include_str!("../specs/swap.json")),
];

pub fn bundled(name: &str) -> Option<RunSpec> {
    let text = SPECS.iter().find(|(n, _)| *n == name)?.1;
    Some(serde_json::from_str(text).expect("bundled specs parse"))
}

enum Action {
    Run,
    Ct(Notion),
    Pass { pass: &'static str, contract: &'static str, expect_fail: bool },
    Compile,
}

struct Step {
    spec: &'static str,
    action: Action,
    expect: i32,
}

const fn step(spec: &'static str, action: Action, expect: i32) -> Step {
    Step { spec, action, expect }
}

struct Demo {
    name: &'static str,
    about: &'static str,
    steps: &'static [Step],
}

const DEMOS: &[Demo] = &[
    Demo {
        name: "swap",
        about: "addresses are public, contents secret: naive constant time holds",
        steps: &[step("swap", Action::Ct(Notion::Naive), EXIT_OK)],
    },
    Demo {
        name: "stack_swap",
        about: "a stack buffer address leaks, but only the oracle decides it",
        steps: &[
            step("stack_swap", Action::Run, EXIT_OK),
            step("stack_swap", Action::Ct(Notion::Naive), EXIT_INCONCLUSIVE),
            step("stack_swap", Action::Ct(Notion::Oracle), EXIT_OK),
            step("stack_swap", Action::Ct(Notion::Predictor), EXIT_OK),
        ],
    },
    Demo {
        name: "countdown",
        about: "the allocation count reveals the secret; the flawed notion misses it",
        steps: &[
            step("countdown", Action::Ct(Notion::Predictor), EXIT_FAIL),
            step("countdown", Action::Ct(Notion::Flawed), EXIT_OK),
        ],
    },
    Demo {
        name: "login",
        about: "leaky for a public username alone, constant time once the match bit is declassified",
        steps: &[
            step("login", Action::Ct(Notion::Naive), EXIT_FAIL),
            step("login_declassified", Action::Ct(Notion::Naive), EXIT_OK),
        ],
    },
    Demo {
        name: "semiprime",
        about: "outputs depend only on the inputs, not on memory",
        steps: &[
            step("semiprime", Action::Run, EXIT_OK),
            step("semiprime", Action::Ct(Notion::Naive), EXIT_OK),
            step("semiprime", Action::Ct(Notion::Output), EXIT_OK),
        ],
    },
    Demo {
        name: "mod_const",
        about: "remainder leaks its operands",
        steps: &[step("mod_const", Action::Ct(Notion::Naive), EXIT_FAIL)],
    },
    Demo {
        name: "password_checker",
        about: "leakage depends on the length of the typed line, not on its characters or the password",
        steps: &[step("password_checker", Action::Ct(Notion::Predictor), EXIT_OK)],
    },
    Demo {
        name: "memequal",
        about: "compiled to machine code, every pass meets its contracts",
        steps: &[
            step("memequal", Action::Ct(Notion::Naive), EXIT_OK),
            step("memequal", Action::Compile, EXIT_OK),
            step("memequal", Action::Pass { pass: "pipeline", contract: "leakage", expect_fail: false }, EXIT_OK),
            step("memequal", Action::Pass { pass: "pipeline", contract: "oracle", expect_fail: false }, EXIT_OK),
        ],
    },
    Demo {
        name: "reorder",
        about: "moving a random past a load admits a predictor transformation but no oracle transformation",
        steps: &[
            step("reorder", Action::Pass { pass: "reorder_random", contract: "predictor", expect_fail: false }, EXIT_OK),
            step("reorder", Action::Pass { pass: "reorder_random", contract: "oracle", expect_fail: true }, EXIT_OK),
        ],
    },
];

pub fn names() -> Vec<&'static str> {
    DEMOS.iter().map(|d| d.name).collect()
}

fn summary(v: &CtVerdict) -> String {
    match v {
        CtVerdict::ConstantTime { witnesses } => format!("constant_time ({} classes)", witnesses.len()),
        CtVerdict::Leaky { reason, .. } => format!("leaky: {reason}"),
        CtVerdict::Inconclusive { reason, .. } => format!("inconclusive: {reason}"),
    }
}

fn perform(s: &Step, o: &Overrides) -> Result<(String, String, i32)> {
    let r = bundled(s.spec).with_context(|| format!("no bundled spec {}", s.spec))?.resolve(o)?;
    let spec = format!("specs/{}.json", s.spec);
    Ok(match &s.action {
        Action::Run => {
            let rep = commands::run(&r)?;
            (format!("run {spec}"), rep.text.trim_end().to_string(), rep.code)
        }
        Action::Ct(n) => {
            let v = commands::verdict(&r, *n);
            let name = format!("{n:?}").to_lowercase();
            let code = match &v {
                CtVerdict::ConstantTime { .. } => EXIT_OK,
                CtVerdict::Leaky { .. } => EXIT_FAIL,
                CtVerdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
            };
            (format!("check-ct {spec} --notion {name}"), summary(&v), code)
        }
        Action::Pass { pass, contract, expect_fail } => {
            let rep = commands::check_pass(&r, pass, contract, *expect_fail, false)?;
            let flag = if *expect_fail { " --expect-fail" } else { "" };
            (format!("check-pass {spec} --pass {pass} --contract {contract}{flag}"), rep.text.trim_end().to_string(), rep.code)
        }
        Action::Compile => {
            let rep = commands::compile(&r, &commands::parse_passes("pipeline"), None, None, false)?;
            let lines = rep.text.lines().count();
            (format!("compile {spec}"), format!("{lines} lines of machine code"), rep.code)
        }
    })
}

pub fn demo(name: Option<&str>, o: &Overrides) -> Result<commands::Report> {
    let Some(name) = name else {
        let mut t = String::new();
        for d in DEMOS {
            writeln!(t, "{:<17} {}", d.name, d.about)?;
        }
        return Ok(commands::Report { text: t, code: EXIT_OK });
    };
    let Some(d) = DEMOS.iter().find(|d| d.name == name) else {
        return Ok(commands::Report {
            text: format!("no demo named {name}; available: {}\n", names().join(", ")),
            code: EXIT_CONFIG,
        });
    };
    let mut t = format!("# {}: {}\n", d.name, d.about);
    let mut ok = true;
    for s in d.steps {
        let (cmd, out, code) = perform(s, o)?;
        let matched = code == s.expect;
        ok &= matched;
        writeln!(t, "\n$ ctleak {cmd}")?;
        writeln!(t, "{out}")?;
        writeln!(t, "exit {code} ({})", if matched { "as expected" } else { "UNEXPECTED" })?;
    }
    Ok(commands::Report { text: t, code: if ok { EXIT_OK } else { EXIT_FAIL } })
}

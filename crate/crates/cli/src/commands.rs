use crate::spec::Resolved;
use anyhow::{anyhow, bail, Result};
use ctleak::compiler::contract::{check_contract, default_contexts, reorder_counterexample, Contract, ContractReport, Setup};
use ctleak::compiler::{compose_all, run_stages, CompileError, Level, PassArtifact, PIPELINE};
use ctleak::ctcheck::{
    check_flawed_ct, check_naive_ct, check_oracle_ct, check_output_independence, check_predictor_ct, CtVerdict,
};
use ctleak::interp::{enumerate_runs, exec_oracle, Outcome};
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

/// What a command produced: text for standard output and an exit code.
pub struct Report {
    pub text: String,
    pub code: i32,
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn run(r: &Resolved) -> Result<Report> {
    let o = exec_oracle(&r.env, &r.args, &r.oracle);
    let code = match o {
        Outcome::Terminated { .. } | Outcome::BenignStuck { .. } => EXIT_OK,
        Outcome::ErrorStuck { .. } | Outcome::FuelExhausted { .. } => EXIT_FAIL,
    };
    Ok(Report { text: to_json(&o)?, code })
}

pub fn enumerate(r: &Resolved) -> Result<Report> {
    let runs = enumerate_runs(&r.env, &r.args, &r.universe);
    let code = if runs.iter().any(|x| x.outcome.is_failure()) { EXIT_FAIL } else { EXIT_OK };
    Ok(Report { text: to_json(&runs)?, code })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Notion {
    Naive,
    Oracle,
    Predictor,
    Flawed,
    Output,
}

pub fn verdict(r: &Resolved, notion: Notion) -> CtVerdict {
    let publics = r.publics();
    let secrets = r.secrets();
    match notion {
        Notion::Naive => check_naive_ct(&r.env, &publics, &secrets),
        Notion::Oracle => check_oracle_ct(&r.env, &publics, &secrets, &r.oracles()),
        Notion::Predictor => check_predictor_ct(&r.env, &publics, &secrets, &r.universe),
        Notion::Flawed => check_flawed_ct(&r.env, &publics, &secrets, &r.universe),
        Notion::Output => check_output_independence(&r.env, &publics, &secrets, &r.oracles()),
    }
}

fn verdict_code(v: &CtVerdict) -> i32 {
    match v {
        CtVerdict::ConstantTime { .. } => EXIT_OK,
        CtVerdict::Leaky { .. } => EXIT_FAIL,
        CtVerdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
    }
}

pub fn check_ct(r: &Resolved, notion: Notion) -> Result<Report> {
    let v = verdict(r, notion);
    Ok(Report { text: to_json(&v)?, code: verdict_code(&v) })
}

fn compile_error_report(e: CompileError) -> Report {
    Report { text: format!("compile error: {e}\n"), code: EXIT_FAIL }
}

fn stages(r: &Resolved, passes: &[String]) -> Result<Result<Vec<PassArtifact>, CompileError>> {
    let names: Vec<&str> = passes.iter().map(String::as_str).collect();
    if names.is_empty() {
        bail!("no passes given");
    }
    Ok(run_stages(&r.env.program, &names, r.width(), r.layout))
}

pub fn parse_passes(s: &str) -> Vec<String> {
    match s {
        "pipeline" => PIPELINE.iter().map(|p| p.to_string()).collect(),
        _ => s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Emit {
    Flat,
    Machine,
    Json,
}

fn level_json(l: &Level) -> Result<String> {
    match l {
        Level::Source(p) => to_json(p),
        Level::Flat(f) => to_json(f),
        Level::Machine(m) => to_json(m),
    }
}

pub fn compile(r: &Resolved, passes: &[String], emit: Option<Emit>, out: Option<&Path>, as_json: bool) -> Result<Report> {
    let arts = match stages(r, passes)? {
        Ok(a) => a,
        Err(e) => return Ok(compile_error_report(e)),
    };
    let target = &arts.last().expect("at least one pass").target;
    let want = match emit {
        Some(Emit::Flat) => Some("flat"),
        Some(Emit::Machine) => Some("machine"),
        _ => None,
    };
    if let Some(level) = want {
        if target.name() != level {
            bail!("cannot emit {level} code: the last pass produces {} code", target.name());
        }
    }
    let listing = target.to_string();
    let json_text = level_json(target)?;
    let layout = match target {
        Level::Machine(m) => Some(json!({
            "base": m.base,
            "sp0": r.layout.stack.sp0,
            "reserve": r.layout.stack.reserve,
            "halt": m.halt_position(),
            "functions": m.functions,
        })),
        _ => None,
    };
    let Some(dir) = out else {
        let text = if as_json || emit == Some(Emit::Json) { json_text } else { listing };
        return Ok(Report { text, code: EXIT_OK });
    };
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}.{}", r.name, target.name());
    let (listing_file, json_file) = (format!("{stem}.txt"), format!("{stem}.json"));
    std::fs::write(dir.join(&listing_file), &listing)?;
    std::fs::write(dir.join(&json_file), &json_text)?;
    let manifest = json!({
        "program": r.name,
        "passes": passes,
        "width": r.width(),
        "target": target.name(),
        "layout": layout,
        "files": [listing_file, json_file],
    });
    let manifest_text = to_json(&manifest)?;
    std::fs::write(dir.join("manifest.json"), &manifest_text)?;
    let text = if as_json { manifest_text } else { format!("wrote {listing_file}, {json_file}, manifest.json to {}\n", dir.display()) };
    Ok(Report { text, code: EXIT_OK })
}

/// The artifact for `pass` on the spec's program: a single pipeline pass (applied after
/// the passes preceding it), `reorder_random`, or `pipeline` for the composition.
fn artifact(r: &Resolved, pass: &str) -> Result<Result<PassArtifact, CompileError>> {
    let names: Vec<String> = if pass == "pipeline" {
        parse_passes("pipeline")
    } else if let Some(i) = PIPELINE.iter().position(|p| *p == pass) {
        PIPELINE[..=i].iter().map(|p| p.to_string()).collect()
    } else {
        vec![pass.to_string()]
    };
    Ok(stages(r, &names)?.map(|arts| {
        if pass == "pipeline" {
            compose_all(arts).expect("pipeline is non-empty")
        } else {
            arts.into_iter().last().expect("at least one pass")
        }
    }))
}

#[derive(Serialize)]
struct PassCheck {
    report: ContractReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    counterexample: Option<ctleak::compiler::contract::Counterexample>,
    expected_failure: bool,
}

pub fn check_pass(r: &Resolved, pass: &str, contract: &str, expect_fail: bool, as_json: bool) -> Result<Report> {
    let contract = Contract::from_str(contract).map_err(|e| anyhow!("{e}"))?;
    let art = match artifact(r, pass)? {
        Ok(a) => a,
        Err(e) => return Ok(compile_error_report(e)),
    };
    let setup = Setup {
        env: r.env.clone(),
        args: r.spec.check_args.clone().unwrap_or_else(|| vec![r.args.clone()]),
        contexts: r.spec.contexts.clone().unwrap_or_else(default_contexts),
    };
    let report = check_contract(&art, &setup, contract);
    let counterexample = match (&r.spec.counterexample, art.target.as_program()) {
        (Some(t), Some(q)) if contract == Contract::Oracle && !report.passed() => {
            Some(reorder_counterexample(&r.env, &r.env.program, &q, &setup.args, &t.table, t.default))
        }
        _ => None,
    };
    let failed = !report.passed();
    let code = if failed == expect_fail { EXIT_OK } else { EXIT_FAIL };
    let text = if as_json {
        to_json(&PassCheck { report, counterexample, expected_failure: expect_fail })?
    } else {
        let mut t = format!("{report}\n");
        if let Some(c) = &counterexample {
            writeln!(t, "{c}")?;
        }
        if expect_fail {
            let note = if failed { "failure expected and observed" } else { "failure expected but the contract holds" };
            writeln!(t, "{note}")?;
        }
        t
    };
    Ok(Report { text, code })
}

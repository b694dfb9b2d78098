//! Leakage-instrumented execution.
//!
//! Three big-step modes share one evaluator: oracle-driven ([`exec_oracle`]),
//! exhaustive over a finite [`ChoiceUniverse`] ([`exec_enumerate`]), and guarded by
//! oracle compatibility ([`check_post`] with [`PostMode::OracleStar`]). A bounded
//! small-step stepper ([`smallstep`]) serves as an independent reference.

pub mod bigstep;
pub mod choice;
pub mod env;
pub mod mem;
pub mod post;
pub mod smallstep;

pub use bigstep::{
    enumerate_runs, enumerate_with, eval_expr, exec_enumerate, exec_oracle, exec_oracle_all, exec_with, replay,
};
pub use choice::{explore, Driver};
pub use env::{
    BenignReason, ChoiceUniverse, ContentPolicy, ErrorReason, ExecEnv, InputPolicy, Locals, Outcome, Resolution, Run,
    DEFAULT_FUEL,
};
pub use mem::MemState;
pub use post::{check_post, universe_oracles, Explorer, PostMode, PostVerdict};
pub use smallstep::{small_step_outcomes, Config, Cont, StepResult, Stepper};

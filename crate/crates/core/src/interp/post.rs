//! Postcondition checking in the three execution modes, and enumeration of the
//! table oracles a choice universe induces.

use super::bigstep::{exec_enumerate, exec_oracle_all, exec_oracle_logged};
use super::choice::QueryKind;
use super::env::{ChoiceUniverse, ExecEnv, Outcome};
use crate::lang::Word;
use crate::trace::{compatible, LeakTrace, Oracle};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug)]
pub enum PostMode<'a> {
    /// Every enumerated outcome.
    OmniAll,
    /// The oracle-driven executions (over all environment choices).
    OracleRun(&'a Oracle),
    /// Every enumerated outcome whose leak is compatible with the oracle.
    OracleStar(&'a Oracle),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PostVerdict {
    pub holds: bool,
    pub counterexample: Option<Outcome>,
}

impl PostVerdict {
    fn judge<'o>(outcomes: impl IntoIterator<Item = &'o Outcome>, guard: impl Fn(&Outcome) -> bool, post: &dyn Fn(&Outcome) -> bool) -> PostVerdict {
        for o in outcomes {
            let bad = o.is_failure() || (o.is_terminated() && guard(o) && !post(o));
            if bad {
                return PostVerdict { holds: false, counterexample: Some(o.clone()) };
            }
        }
        PostVerdict { holds: true, counterexample: None }
    }
}

/// Caches the enumeration of one `(env, args, universe)` so many checks can share it.
pub struct Explorer {
    pub env: ExecEnv,
    pub args: Vec<Word>,
    pub universe: ChoiceUniverse,
    outcomes: OnceLock<Vec<Outcome>>,
}

impl Explorer {
    pub fn new(env: ExecEnv, args: Vec<Word>, universe: ChoiceUniverse) -> Explorer {
        Explorer { env, args, universe, outcomes: OnceLock::new() }
    }

    pub fn outcomes(&self) -> &[Outcome] {
        self.outcomes.get_or_init(|| exec_enumerate(&self.env, &self.args, &self.universe))
    }

    pub fn check(&self, post: &dyn Fn(&Outcome) -> bool, mode: PostMode<'_>) -> PostVerdict {
        let w = self.env.width;
        match mode {
            PostMode::OmniAll => PostVerdict::judge(self.outcomes(), |_| true, post),
            PostMode::OracleStar(a) => PostVerdict::judge(self.outcomes(), |o| compatible(o.leak(), a, w), post),
            PostMode::OracleRun(a) => {
                let runs = exec_oracle_all(&self.env, &self.args, a);
                PostVerdict::judge(runs.iter().map(|r| &r.outcome), |_| true, post)
            }
        }
    }
}

/// Checks `post` under `mode`. Benign stuckness satisfies every postcondition; error
/// stuckness and fuel exhaustion never do.
pub fn check_post(
    env: &ExecEnv,
    args: &[Word],
    u: &ChoiceUniverse,
    post: &dyn Fn(&Outcome) -> bool,
    mode: PostMode<'_>,
) -> PostVerdict {
    Explorer::new(env.clone(), args.to_vec(), u.clone()).check(post, mode)
}

/// All table oracles whose answers on the query points reachable from `(env, args)` lie in
/// `u` (bases for allocations, random values for `random`), up to `max_points` assigned
/// points per oracle. Points beyond the bound fall back to the table default, `u.bases[0]`.
pub fn universe_oracles(env: &ExecEnv, args: &[Word], u: &ChoiceUniverse, max_points: usize) -> Vec<Oracle> {
    let default = u.bases.first().copied().unwrap_or(0);
    let mut done = Vec::new();
    let mut todo: Vec<BTreeMap<LeakTrace, Word>> = vec![BTreeMap::new()];
    while let Some(table) = todo.pop() {
        let oracle = Oracle::table(table.clone(), default);
        let missing = if table.len() >= max_points {
            None
        } else {
            exec_oracle_logged(env, args, &oracle)
                .into_iter()
                .flat_map(|(_, log)| log)
                .find(|(k, _)| !table.contains_key(k))
        };
        match missing {
            None => done.push(oracle),
            Some((point, kind)) => {
                let answers = match kind {
                    QueryKind::Alloc => &u.bases,
                    QueryKind::Random => &u.randoms,
                };
                for a in answers.iter().rev() {
                    let mut t = table.clone();
                    t.insert(point.clone(), *a);
                    todo.push(t);
                }
            }
        }
    }
    done
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::env::ContentPolicy;
    use crate::lang::parse;
    use crate::trace::LeakEvent::*;

    #[test]
    fn oracles_cover_reachable_points() {
        let p = parse("fn main() { stackalloc 4 as a { stackalloc 4 as b { skip; } } }").unwrap();
        let env = ExecEnv::new(p).with_contents(ContentPolicy::Constant(0));
        let u = ChoiceUniverse::default();
        let os = universe_oracles(&env, &[], &u, 3);
        // Both points take all three bases; overlapping answers end benign-stuck.
        assert_eq!(os.len(), 9);
        let answers: Vec<Word> = os.iter().map(|o| o.query(&[], env.width)).collect();
        assert_eq!(answers.iter().filter(|a| **a == 64).count(), 3);
        for o in &os {
            let a = o.query(&[], env.width);
            let b = o.query(&[CompNonDet(a)], env.width);
            assert!(u.bases.contains(&b));
        }
    }

    #[test]
    fn star_guard_filters() {
        let p = parse("fn main() { stackalloc 4 as a { skip; } }").unwrap();
        let env = ExecEnv::new(p).with_contents(ContentPolicy::Constant(0));
        let u = ChoiceUniverse::with_bases(vec![64, 128]);
        let bump = Oracle::Bump { base: 64, stride: 16 };
        let post = |o: &Outcome| o.leak() == &vec![CompNonDet(64)];
        assert!(check_post(&env, &[], &u, &post, PostMode::OracleStar(&bump)).holds);
        assert!(check_post(&env, &[], &u, &post, PostMode::OracleRun(&bump)).holds);
        let v = check_post(&env, &[], &u, &post, PostMode::OmniAll);
        assert!(!v.holds);
        assert_eq!(v.counterexample.unwrap().leak(), &vec![CompNonDet(128)]);
    }
}

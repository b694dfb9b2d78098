//! Leakage and I/O events, traces, and oracles.
//!
//! Traces are stored oldest-first. An [`Oracle`] is a deterministic function from a
//! leakage-trace prefix to a word; it resolves compiler-chosen nondeterminism such as
//! stack-allocation addresses using only what has already leaked.

use crate::lang::{Width, Word};
use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LeakEvent {
    #[serde(rename = "leak")]
    Leak(Word),
    #[serde(rename = "nondet")]
    CompNonDet(Word),
}

impl LeakEvent {
    pub fn payload(self) -> Word {
        match self {
            LeakEvent::Leak(w) | LeakEvent::CompNonDet(w) => w,
        }
    }
}

impl fmt::Display for LeakEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeakEvent::Leak(w) => write!(f, "Leak {w}"),
            LeakEvent::CompNonDet(w) => write!(f, "CompNonDet {w}"),
        }
    }
}

pub type LeakTrace = Vec<LeakEvent>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IoEvent {
    #[serde(rename = "in")]
    In(Word),
    #[serde(rename = "out")]
    Out(Word),
}

pub type IoTrace = Vec<IoEvent>;

/// Values of the `In` events, in order.
pub fn inputs_of(io: &[IoEvent]) -> Vec<Word> {
    io.iter().filter_map(|e| if let IoEvent::In(w) = e { Some(*w) } else { None }).collect()
}

/// Values of the `Out` events, in order.
pub fn outputs_of(io: &[IoEvent]) -> Vec<Word> {
    io.iter().filter_map(|e| if let IoEvent::Out(w) = e { Some(*w) } else { None }).collect()
}

/// Renders a trace as `[Leak 1; CompNonDet 64]`.
pub fn show_trace(k: &[LeakEvent]) -> String {
    let parts: Vec<String> = k.iter().map(|e| e.to_string()).collect();
    format!("[{}]", parts.join("; "))
}

pub fn count_nondet(k: &[LeakEvent]) -> usize {
    k.iter().filter(|e| matches!(e, LeakEvent::CompNonDet(_))).count()
}

/// Splits a trace into its `CompNonDet` payloads and its `Leak` payloads, discarding interleaving.
pub fn split_events(k: &[LeakEvent]) -> (Vec<Word>, Vec<Word>) {
    let mut branches = Vec::new();
    let mut leaks = Vec::new();
    for e in k {
        match e {
            LeakEvent::CompNonDet(w) => branches.push(*w),
            LeakEvent::Leak(w) => leaks.push(*w),
        }
    }
    (branches, leaks)
}

type OracleFn = dyn Fn(&[LeakEvent]) -> Word + Send + Sync;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableOracle {
    pub entries: BTreeMap<LeakTrace, Word>,
    pub default: Word,
}

/// Resolver of compiler nondeterminism.
#[derive(Clone)]
pub enum Oracle {
    Table(TableOracle),
    /// Keyed SHA-256 of the serialized trace, truncated to the word width and
    /// rounded down to word alignment so every answer is a usable allocation base.
    Seeded(u64),
    /// `base + stride * (number of CompNonDet events in the query)`.
    Bump { base: Word, stride: Word },
    /// A computed oracle, e.g. the output of an oracle transformation.
    Derived(Arc<OracleFn>),
}

impl Oracle {
    pub fn table(entries: impl IntoIterator<Item = (LeakTrace, Word)>, default: Word) -> Oracle {
        Oracle::Table(TableOracle { entries: entries.into_iter().collect(), default })
    }

    pub fn derived(f: impl Fn(&[LeakEvent]) -> Word + Send + Sync + 'static) -> Oracle {
        Oracle::Derived(Arc::new(f))
    }

    /// Table oracle that reproduces the `CompNonDet` answers recorded in `k`.
    pub fn replaying(k: &[LeakEvent], default: Word) -> Oracle {
        let entries = k
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e {
                LeakEvent::CompNonDet(w) => Some((k[..i].to_vec(), *w)),
                LeakEvent::Leak(_) => None,
            })
            .collect::<Vec<_>>();
        Oracle::table(entries, default)
    }

    pub fn query(&self, k: &[LeakEvent], width: Width) -> Word {
        match self {
            Oracle::Table(t) => t.entries.get(k).copied().unwrap_or(t.default),
            Oracle::Seeded(seed) => seeded_answer(*seed, k, width),
            Oracle::Bump { base, stride } => {
                let n = count_nondet(k) as u64;
                width.wrap(*base as u64 + (*stride as u64).wrapping_mul(n))
            }
            Oracle::Derived(f) => f(k),
        }
    }

    pub fn is_serializable(&self) -> bool {
        !matches!(self, Oracle::Derived(_))
    }
}

fn seeded_answer(seed: u64, k: &[LeakEvent], width: Width) -> Word {
    let mut h = Sha256::new();
    h.update(b"ctleak-oracle");
    h.update(seed.to_le_bytes());
    for e in k {
        let (tag, w) = match e {
            LeakEvent::Leak(w) => (0u8, *w),
            LeakEvent::CompNonDet(w) => (1u8, *w),
        };
        h.update([tag]);
        h.update(w.to_le_bytes());
    }
    let digest = h.finalize();
    let raw = u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]]);
    width.wrap(raw as u64) & !(width.bytes() - 1)
}

impl fmt::Debug for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Oracle::Table(t) => write!(f, "Table({} entries, default {})", t.entries.len(), t.default),
            Oracle::Seeded(s) => write!(f, "Seeded({s})"),
            Oracle::Bump { base, stride } => write!(f, "Bump({base}, {stride})"),
            Oracle::Derived(_) => write!(f, "Derived"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OracleDesc {
    Table {
        entries: Vec<(LeakTrace, Word)>,
        default: Word,
    },
    Seeded {
        seed: u64,
    },
    Bump {
        base: Word,
        stride: Word,
    },
}

impl Serialize for Oracle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let desc = match self {
            Oracle::Table(t) => OracleDesc::Table {
                entries: t.entries.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                default: t.default,
            },
            Oracle::Seeded(seed) => OracleDesc::Seeded { seed: *seed },
            Oracle::Bump { base, stride } => OracleDesc::Bump { base: *base, stride: *stride },
            Oracle::Derived(_) => return Err(S::Error::custom("derived oracles have no serialized form")),
        };
        desc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Oracle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match OracleDesc::deserialize(d)? {
            OracleDesc::Table { entries, default } => Oracle::table(entries, default),
            OracleDesc::Seeded { seed } => Oracle::Seeded(seed),
            OracleDesc::Bump { base, stride } => Oracle::Bump { base, stride },
        })
    }
}

/// `oracle_query(a, k)`.
pub fn oracle_query(a: &Oracle, k: &[LeakEvent], width: Width) -> Word {
    a.query(k, width)
}

/// True iff every `CompNonDet x` in `k` equals the oracle's answer on the prefix before it.
pub fn compatible(k: &[LeakEvent], a: &Oracle, width: Width) -> bool {
    k.iter().enumerate().all(|(i, e)| match e {
        LeakEvent::CompNonDet(x) => a.query(&k[..i], width) == *x,
        LeakEvent::Leak(_) => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use LeakEvent::*;

    const W: Width = Width::W32;

    #[test]
    fn bump_examples() {
        let a = Oracle::Bump { base: 64, stride: 16 };
        assert_eq!(a.query(&[], W), 64);
        assert_eq!(a.query(&[CompNonDet(64), Leak(64)], W), 80);
    }

    #[test]
    fn table_default() {
        let a = Oracle::table([(vec![], 5)], 9);
        assert_eq!(a.query(&[], W), 5);
        assert_eq!(a.query(&[Leak(1)], W), 9);
    }

    #[test]
    fn seeded_is_deterministic_aligned_and_truncated() {
        let k = [Leak(3), CompNonDet(64)];
        for seed in 0..20 {
            let a = Oracle::Seeded(seed);
            assert_eq!(a.query(&k, W), a.query(&k, W));
            assert_eq!(a.query(&k, W) % 4, 0);
            assert!(Oracle::Seeded(seed).query(&k, Width::W8) <= 0xff);
            assert_eq!(Oracle::Seeded(seed).query(&k, Width::W16) % 2, 0);
        }
        assert_ne!(Oracle::Seeded(1).query(&[], W), Oracle::Seeded(2).query(&[], W));
    }

    // Brute force over every split point, independent of `compatible`'s own loop.
    fn compatible_by_splits(k: &[LeakEvent], a: &Oracle) -> bool {
        (0..=k.len()).all(|cut| match k.get(cut) {
            Some(CompNonDet(x)) => {
                let k1: Vec<LeakEvent> = k.iter().take(cut).copied().collect();
                a.query(&k1, W) == *x
            }
            _ => true,
        })
    }

    #[test]
    fn compatibility_examples() {
        let a = Oracle::Bump { base: 64, stride: 16 };
        assert!(compatible(&[], &a, W));
        let k = [CompNonDet(64), Leak(64)];
        assert_eq!(compatible(&k, &a, W), compatible_by_splits(&k, &a));
        assert!(compatible(&k, &a, W));
        assert!(!compatible(&[CompNonDet(65)], &a, W));
        assert!(!compatible_by_splits(&[CompNonDet(65)], &a));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_events(&[]), (vec![], vec![]));
        assert_eq!(split_events(&[Leak(1), CompNonDet(7), Leak(0)]), (vec![7], vec![1, 0]));
    }

    #[test]
    fn replaying_oracle_is_compatible() {
        let k = vec![Leak(1), CompNonDet(70), Leak(3), CompNonDet(9)];
        assert!(compatible(&k, &Oracle::replaying(&k, 0), W));
    }

    #[test]
    fn json_forms() {
        let k = vec![Leak(5), CompNonDet(64)];
        assert_eq!(serde_json::to_string(&k).unwrap(), r#"[{"leak":5},{"nondet":64}]"#);
        let io = vec![IoEvent::In(3), IoEvent::Out(15)];
        assert_eq!(serde_json::to_string(&io).unwrap(), r#"[{"in":3},{"out":15}]"#);
        let a = Oracle::Bump { base: 64, stride: 16 };
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"bump":{"base":64,"stride":16}}"#);
        assert_eq!(serde_json::to_string(&Oracle::Seeded(7)).unwrap(), r#"{"seeded":{"seed":7}}"#);
        let t: Oracle = serde_json::from_str(r#"{"table":{"entries":[[[{"leak":16}],7]],"default":3}}"#).unwrap();
        assert_eq!(t.query(&[Leak(16)], W), 7);
        assert_eq!(t.query(&[], W), 3);
        assert!(serde_json::to_string(&Oracle::derived(|_| 0)).is_err());
    }
}

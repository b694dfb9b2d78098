use crate::lang::{Width, Word};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Sparse byte-addressed memory. Accesses outside the domain fault.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemState {
    bytes: BTreeMap<Word, u8>,
}

impl MemState {
    pub fn new() -> MemState {
        MemState::default()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn get(&self, addr: Word) -> Option<u8> {
        self.bytes.get(&addr).copied()
    }

    pub fn contains(&self, addr: Word) -> bool {
        self.bytes.contains_key(&addr)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Word, u8)> + '_ {
        self.bytes.iter().map(|(a, b)| (*a, *b))
    }

    /// Adds or overwrites bytes without a domain check (initial memory set-up).
    pub fn poke(&mut self, addr: Word, bytes: &[u8], width: Width) {
        for (i, b) in bytes.iter().enumerate() {
            self.bytes.insert(width.add(addr, i as Word), *b);
        }
    }

    /// Adds a little-endian word of `nbytes` bytes without a domain check.
    pub fn poke_word(&mut self, addr: Word, nbytes: u32, value: Word, width: Width) {
        let bytes: Vec<u8> = (0..nbytes).map(|i| (value >> (8 * i)) as u8).collect();
        self.poke(addr, &bytes, width);
    }

    /// Little-endian load; `None` if any byte lies outside the domain.
    pub fn load(&self, addr: Word, nbytes: u32, width: Width) -> Option<Word> {
        let mut v: u64 = 0;
        for i in 0..nbytes {
            let b = self.get(width.add(addr, i))?;
            v |= (b as u64) << (8 * i);
        }
        Some(width.wrap(v))
    }

    /// Little-endian store; returns false (and writes nothing) on a fault.
    pub fn store(&mut self, addr: Word, nbytes: u32, value: Word, width: Width) -> bool {
        if (0..nbytes).any(|i| !self.contains(width.add(addr, i))) {
            return false;
        }
        for i in 0..nbytes {
            self.bytes.insert(width.add(addr, i), (value >> (8 * i)) as u8);
        }
        true
    }

    /// Whether `[base, base + n)` fits the address space and is disjoint from the domain.
    pub fn range_free(&self, base: Word, n: u32, width: Width) -> bool {
        if n == 0 {
            return true;
        }
        if !width.fits(base, n as u64) {
            return false;
        }
        self.bytes.range(base..=base + (n - 1)).next().is_none()
    }

    pub fn free(&mut self, base: Word, n: u32) {
        if n == 0 {
            return;
        }
        let end = base.saturating_add(n - 1);
        let keys: Vec<Word> = self.bytes.range(base..=end).map(|(k, _)| *k).collect();
        for k in keys {
            self.bytes.remove(&k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    const W: Width = Width::W32;

    #[test]
    fn little_endian_round_trip() {
        let mut m = MemState::new();
        m.poke_word(16, 4, 0x0403_0201, W);
        assert_eq!(m.get(16), Some(1));
        assert_eq!(m.get(19), Some(4));
        assert_eq!(m.load(16, 4, W), Some(0x0403_0201));
        assert_eq!(m.load(17, 4, W), None);
        assert!(m.store(16, 1, 0xff, W));
        assert_eq!(m.load(16, 4, W), Some(0x0403_02ff));
        assert!(!m.store(18, 4, 0, W));
        assert_eq!(m.load(16, 4, W), Some(0x0403_02ff));
    }

    #[test]
    fn free_ranges() {
        let mut m = MemState::new();
        m.poke(64, &[0; 4], W);
        assert!(!m.range_free(60, 8, W));
        assert!(m.range_free(68, 4, W));
        assert!(!m.range_free(u32::MAX - 2, 4, W));
        assert!(!Width::W8.fits(0xfe, 4));
        m.free(64, 4);
        assert!(m.is_empty());
    }
}

//! Machine words of a configurable width.
//!
//! Values are stored in a `u32` and always kept reduced modulo `2^W`.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A machine word. Only the low `W` bits are ever set.
pub type Word = u32;

/// Word width in bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Width {
    W8,
    W16,
    #[default]
    W32,
}

impl Width {
    pub fn from_bits(bits: u32) -> Option<Width> {
        match bits {
            8 => Some(Width::W8),
            16 => Some(Width::W16),
            32 => Some(Width::W32),
            _ => None,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
        }
    }

    /// Bytes per word.
    pub fn bytes(self) -> u32 {
        self.bits() / 8
    }

    pub fn mask(self) -> Word {
        match self {
            Width::W32 => u32::MAX,
            w => (1u32 << w.bits()) - 1,
        }
    }

    /// Number of distinct words, `2^W`.
    pub fn modulus(self) -> u64 {
        1u64 << self.bits()
    }

    pub fn wrap(self, v: u64) -> Word {
        (v as u32) & self.mask()
    }

    pub fn from_i64(self, v: i64) -> Word {
        self.wrap(v as u64)
    }

    /// Two's-complement reading of a word.
    pub fn signed(self, w: Word) -> i64 {
        let w = (w & self.mask()) as i64;
        let half = 1i64 << (self.bits() - 1);
        if w >= half {
            w - (1i64 << self.bits())
        } else {
            w
        }
    }

    pub fn add(self, a: Word, b: Word) -> Word {
        self.wrap(a as u64 + b as u64)
    }

    pub fn sub(self, a: Word, b: Word) -> Word {
        self.wrap((a as u64).wrapping_sub(b as u64))
    }

    pub fn mul(self, a: Word, b: Word) -> Word {
        self.wrap((a as u64).wrapping_mul(b as u64))
    }

    /// Unsigned division; a zero divisor yields all ones.
    pub fn divu(self, a: Word, b: Word) -> Word {
        if b == 0 {
            self.mask()
        } else {
            a / b
        }
    }

    /// Unsigned remainder; a zero divisor yields the dividend.
    pub fn remu(self, a: Word, b: Word) -> Word {
        if b == 0 {
            a
        } else {
            a % b
        }
    }

    fn shamt(self, b: Word) -> u32 {
        b & (self.bits() - 1)
    }

    pub fn shl(self, a: Word, b: Word) -> Word {
        self.wrap((a as u64) << self.shamt(b))
    }

    pub fn shr(self, a: Word, b: Word) -> Word {
        (a & self.mask()) >> self.shamt(b)
    }

    pub fn lts(self, a: Word, b: Word) -> bool {
        self.signed(a) < self.signed(b)
    }

    /// Whether `[base, base + len)` stays inside the address space without wrapping.
    pub fn fits(self, base: Word, len: u64) -> bool {
        base as u64 + len <= self.modulus()
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

impl TryFrom<u32> for Width {
    type Error = String;
    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        Width::from_bits(bits).ok_or_else(|| format!("unsupported word width {bits} (expected 8, 16 or 32)"))
    }
}

impl From<Width> for u32 {
    fn from(w: Width) -> u32 {
        w.bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_at_each_width() {
        assert_eq!(Width::W8.add(200, 100), 44);
        assert_eq!(Width::W16.sub(0, 1), 0xffff);
        assert_eq!(Width::W32.mul(0x8000_0000, 2), 0);
    }

    #[test]
    fn division_by_zero_follows_riscv() {
        assert_eq!(Width::W8.divu(7, 0), 255);
        assert_eq!(Width::W32.divu(7, 0), u32::MAX);
        assert_eq!(Width::W16.remu(7, 0), 7);
        assert_eq!(Width::W32.divu(7, 2), 3);
    }

    #[test]
    fn shifts_mask_their_amount() {
        assert_eq!(Width::W8.shl(1, 9), 2);
        assert_eq!(Width::W32.shl(1, 33), 2);
        assert_eq!(Width::W16.shr(0x8000, 15), 1);
    }

    #[test]
    fn signed_reading() {
        assert_eq!(Width::W8.signed(0xff), -1);
        assert!(Width::W8.lts(0x80, 0));
        assert!(!Width::W32.lts(0, 0xffff_ffff));
        assert_eq!(Width::W16.from_i64(-2), 0xfffe);
    }
}

//! FP32 bit addressing.
//!
//! Positions are counted from the most significant end of the IEEE-754
//! single-precision word: position 0 is the sign, 1..=8 are the exponent
//! bits (1 = exponent MSB) and 9..=31 the mantissa, most significant first.

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Position of the exponent MSB.
pub const MSB: BitIndex = BitIndex(1);

/// A bit position in an FP32 word, sign-first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitIndex(u8);

impl BitIndex {
    pub const SIGN: BitIndex = BitIndex(0);

    pub fn new(position: u8) -> Result<Self, Error> {
        if position < 32 {
            Ok(BitIndex(position))
        } else {
            Err(Error::Config(alloc::format!(
                "bit position {position} outside [0, 31]"
            )))
        }
    }

    pub fn position(self) -> u8 {
        self.0
    }

    /// LSB-0 bit number inside `f32::to_bits()`.
    pub fn physical(self) -> u32 {
        31 - u32::from(self.0)
    }

    pub fn mask(self) -> u32 {
        1u32 << self.physical()
    }

    pub fn is_exponent(self) -> bool {
        (1..=8).contains(&self.0)
    }

    pub fn is_mantissa(self) -> bool {
        self.0 >= 9
    }

    /// Every position 0..=31 in order.
    pub fn all() -> impl Iterator<Item = BitIndex> {
        (0u8..32).map(BitIndex)
    }
}

impl TryFrom<u8> for BitIndex {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        BitIndex::new(value)
    }
}

impl From<BitIndex> for u8 {
    fn from(b: BitIndex) -> u8 {
        b.0
    }
}

impl fmt::Display for BitIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Toggle one bit of `value`. NaN payloads pass through untouched.
#[inline]
pub fn flip_bit(value: f32, bit: BitIndex) -> f32 {
    f32::from_bits(value.to_bits() ^ bit.mask())
}

/// Stored state (0 or 1) of one bit of `value`.
#[inline]
pub fn bit_state(value: f32, bit: BitIndex) -> u8 {
    ((value.to_bits() & bit.mask()) != 0) as u8
}

/// Biased exponent field of `value`.
#[inline]
pub fn exponent_field(value: f32) -> u32 {
    (value.to_bits() >> 23) & 0xff
}

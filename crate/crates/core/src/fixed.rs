//! Two's complement helpers shared by the reference model and the macro model.

use serde::{Deserialize, Serialize};

/// What happens when a Vmem update leaves the representable range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overflow {
    /// Plain ripple-adder behaviour: results are taken mod 2^bits.
    #[default]
    Wrap,
    /// Clamp to the most positive / most negative value.
    Saturate,
}

pub fn min_value(bits: u32) -> i32 {
    -(1i32 << (bits - 1))
}

pub fn max_value(bits: u32) -> i32 {
    (1i32 << (bits - 1)) - 1
}

pub fn in_range(v: i64, bits: u32) -> bool {
    v >= min_value(bits) as i64 && v <= max_value(bits) as i64
}

/// Reduce `v` mod 2^bits and reinterpret as signed.
pub fn wrap(v: i64, bits: u32) -> i32 {
    let shift = 64 - bits;
    ((v << shift) >> shift) as i32
}

pub fn saturate(v: i64, bits: u32) -> i32 {
    v.clamp(min_value(bits) as i64, max_value(bits) as i64) as i32
}

pub fn fit(v: i64, bits: u32, overflow: Overflow) -> i32 {
    match overflow {
        Overflow::Wrap => wrap(v, bits),
        Overflow::Saturate => saturate(v, bits),
    }
}

pub fn add(a: i32, b: i32, bits: u32, overflow: Overflow) -> i32 {
    fit(a as i64 + b as i64, bits, overflow)
}

pub fn sub(a: i32, b: i32, bits: u32, overflow: Overflow) -> i32 {
    fit(a as i64 - b as i64, bits, overflow)
}

/// Low `bits` bits of `v` as an unsigned pattern.
pub fn to_bits(v: i32, bits: u32) -> u64 {
    (v as i64 as u64) & ((1u64 << bits) - 1)
}

/// Sign-extend a `bits`-wide pattern.
pub fn from_bits(pattern: u64, bits: u32) -> i32 {
    wrap(pattern as i64, bits)
}

//! Bit-accurate model of the compute macro (160x48) and neuron macro (72x48).
//!
//! Columns are numbered 0..47; inside a field the LSB sits at the lowest
//! column. Weight fields are `W_b` columns wide and numbered from 0. The
//! RBL switches connect field `j` onto the Vmem field of pair `j / 2`, which
//! spans columns `[2 * (j / 2) * W_b, 2 * (j / 2) * W_b + B_Vmem - 1]`.
//! Fields `0, 2, 4, ...` (columns 0-3, 8-11, ... at 4 bits) take part in the
//! odd accumulation and land in Vmem row `2X + 1`; fields `1, 3, 5, ...` take
//! part in the even accumulation and land in row `2X`.

mod compute;
mod neuron;

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    PrecisionMode, COMPUTE_MACRO_ROWS, IFSPAD_COLS, MACRO_COLS, NEURON_FULL_ROWS,
    NEURON_MACRO_ROWS, NEURON_PARAM_ROWS, NEURON_PARTIAL_ROWS, VMEM_ROWS, WEIGHT_ROWS,
};
use crate::fixed::Overflow;

pub use compute::{ComputeMacro, OpSequenceRun, PipelineEvent, PipelineTrace, Stage};
pub use neuron::{NeuronMacro, NeuronPass, NEURON_PASS_CYCLES, PARAM_LEAK_ROW, PARAM_THRESHOLD_ROW};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MacroError {
    #[error("macro peripherals configured for {configured:?} parity, tuple needs {requested:?}")]
    ParityMismatch { configured: Parity, requested: Parity },
    #[error("address out of bounds: {0}")]
    OutOfBounds(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn other(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    /// Offset of this parity's Vmem row inside a row pair.
    pub fn row_offset(self) -> usize {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }

    /// Parity of weight field `j` (see module docs).
    pub fn of_field(j: usize) -> Parity {
        if j.is_multiple_of(2) {
            Parity::Odd
        } else {
            Parity::Even
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        }
    }
}

/// One unit of in-memory work: add weight row `y` into Vmem row `2x + parity`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddressTuple {
    pub y: usize,
    pub x: usize,
    pub parity: Parity,
}

impl AddressTuple {
    pub fn new(y: usize, x: usize, parity: Parity) -> Self {
        AddressTuple { y, x, parity }
    }

    pub fn vmem_row(&self) -> usize {
        2 * self.x + self.parity.row_offset()
    }

    pub fn check(&self) -> Result<(), MacroError> {
        if self.y >= WEIGHT_ROWS || self.x >= IFSPAD_COLS {
            return Err(MacroError::OutOfBounds(format!(
                "tuple (y={}, x={}) outside {WEIGHT_ROWS}x{IFSPAD_COLS}",
                self.y, self.x
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowRole {
    Weight,
    Vmem,
    Partial,
    Full,
    Param,
}

impl RowRole {
    fn label(self) -> &'static str {
        match self {
            RowRole::Weight => "weight",
            RowRole::Vmem => "vmem",
            RowRole::Partial => "partial",
            RowRole::Full => "full",
            RowRole::Param => "param",
        }
    }
}

/// Bit matrix backing one macro. Each row is 48 bits kept in a `u64`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SramState {
    rows: Vec<u64>,
    roles: Vec<RowRole>,
}

const ROW_MASK: u64 = (1u64 << MACRO_COLS) - 1;

impl SramState {
    pub fn compute_macro() -> Self {
        let mut roles = vec![RowRole::Weight; WEIGHT_ROWS];
        roles.extend(std::iter::repeat_n(RowRole::Vmem, VMEM_ROWS));
        debug_assert_eq!(roles.len(), COMPUTE_MACRO_ROWS);
        SramState {
            rows: vec![0; COMPUTE_MACRO_ROWS],
            roles,
        }
    }

    pub fn neuron_macro() -> Self {
        let mut roles = vec![RowRole::Partial; NEURON_PARTIAL_ROWS];
        roles.extend(std::iter::repeat_n(RowRole::Full, NEURON_FULL_ROWS));
        roles.extend(std::iter::repeat_n(RowRole::Param, NEURON_PARAM_ROWS));
        SramState {
            rows: vec![0; NEURON_MACRO_ROWS],
            roles,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        MACRO_COLS
    }

    pub fn role(&self, row: usize) -> RowRole {
        self.roles[row]
    }

    pub fn row(&self, row: usize) -> u64 {
        self.rows[row]
    }

    pub fn set_row(&mut self, row: usize, bits: u64) {
        self.rows[row] = bits & ROW_MASK;
    }

    pub fn bit(&self, row: usize, col: usize) -> bool {
        (self.rows[row] >> col) & 1 == 1
    }

    pub fn set_bit(&mut self, row: usize, col: usize, v: bool) {
        if v {
            self.rows[row] |= 1 << col;
        } else {
            self.rows[row] &= !(1 << col);
        }
    }

    /// Unsigned pattern of `width` bits starting at column `start`.
    pub fn field(&self, row: usize, start: usize, width: u32) -> u64 {
        (self.rows[row] >> start) & ((1u64 << width) - 1)
    }

    pub fn set_field(&mut self, row: usize, start: usize, width: u32, pattern: u64) {
        let mask = ((1u64 << width) - 1) << start;
        self.rows[row] = (self.rows[row] & !mask) | ((pattern << start) & mask);
    }

    /// Hex dump, one line per row: `RRR role    0xHHHHHHHHHHHH`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, (bits, role)) in self.rows.iter().zip(&self.roles).enumerate() {
            let _ = writeln!(out, "{i:03} {:<7} 0x{bits:012x}", role.label());
        }
        out
    }
}

impl fmt::Debug for SramState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SramState({}x{})", self.rows.len(), MACRO_COLS)
    }
}

/// Column span, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpan {
    pub first: usize,
    pub last: usize,
}

impl ColumnSpan {
    pub fn width(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchGroup {
    pub field: usize,
    pub weight: ColumnSpan,
    pub vmem: ColumnSpan,
}

/// RBL switch connectivity for one precision and parity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchMap {
    pub precision: PrecisionMode,
    pub parity: Parity,
    pub groups: Vec<SwitchGroup>,
}

pub fn switch_map(p: PrecisionMode, parity: Parity) -> SwitchMap {
    let wb = p.weight_bits() as usize;
    let vb = p.vmem_bits() as usize;
    let groups = (0..p.vmem_fields_per_row())
        .map(|g| {
            let field = 2 * g + if parity == Parity::Odd { 0 } else { 1 };
            SwitchGroup {
                field,
                weight: ColumnSpan {
                    first: field * wb,
                    last: field * wb + wb - 1,
                },
                vmem: ColumnSpan {
                    first: 2 * g * wb,
                    last: 2 * g * wb + vb - 1,
                },
            }
        })
        .collect();
    SwitchMap {
        precision: p,
        parity,
        groups,
    }
}

/// Read stage: the shared bit line yields NOR and AND of the two cells.
pub fn bitline_read(weight_bit: bool, vmem_bit: bool) -> (bool, bool) {
    (!(weight_bit || vmem_bit), weight_bit && vmem_bit)
}

/// Compute stage full adder driven by the latched NOR/AND pair.
pub fn column_add(nor: bool, and: bool, carry_in: bool) -> (bool, bool) {
    let xor = !nor && !and;
    (xor ^ carry_in, and || (xor && carry_in))
}

/// Result of a `width`-bit ripple through the column peripherals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RippleSum {
    pub sum: u64,
    /// Carry into the most significant column.
    pub carry_into_msb: bool,
    pub carry_out: bool,
}

impl RippleSum {
    /// Signed overflow of the `width`-bit addition.
    pub fn overflowed(&self) -> bool {
        self.carry_into_msb != self.carry_out
    }
}

/// Ripple `a + b + carry_in` LSB to MSB over `width` columns.
pub fn ripple_add(a: u64, b: u64, width: u32, carry_in: bool) -> RippleSum {
    let mut carry = carry_in;
    let mut sum = 0u64;
    let mut carry_into_msb = false;
    for i in 0..width {
        if i == width - 1 {
            carry_into_msb = carry;
        }
        let (nor, and) = bitline_read((a >> i) & 1 == 1, (b >> i) & 1 == 1);
        let (s, c) = column_add(nor, and, carry);
        sum |= (s as u64) << i;
        carry = c;
    }
    RippleSum {
        sum,
        carry_into_msb,
        carry_out: carry,
    }
}

/// Replicate the MSB of a `from`-bit pattern up to `to` bits.
pub fn sign_extend(pattern: u64, from: u32, to: u32) -> u64 {
    let msb = (pattern >> (from - 1)) & 1;
    let mut out = pattern & ((1u64 << from) - 1);
    if msb == 1 {
        out |= ((1u64 << to) - 1) & !((1u64 << from) - 1);
    }
    out
}

/// Pattern written back for an addition `a + b` of `width` bits under the
/// given overflow policy. On saturation the result takes the sign of `a`.
pub(crate) fn resolve_overflow(a: u64, r: RippleSum, width: u32, overflow: Overflow) -> u64 {
    if overflow == Overflow::Saturate && r.overflowed() {
        let a_negative = (a >> (width - 1)) & 1 == 1;
        if a_negative {
            1u64 << (width - 1)
        } else {
            (1u64 << (width - 1)) - 1
        }
    } else {
        r.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed;

    #[test]
    fn bitline_truth_table() {
        assert_eq!(bitline_read(false, false), (true, false));
        assert_eq!(bitline_read(true, false), (false, false));
        assert_eq!(bitline_read(false, true), (false, false));
        assert_eq!(bitline_read(true, true), (false, true));
    }

    #[test]
    fn full_adder_from_latches() {
        let add = |w, v, c| {
            let (nor, and) = bitline_read(w, v);
            column_add(nor, and, c)
        };
        assert_eq!(add(true, true, false), (false, true));
        assert_eq!(add(true, false, true), (false, true));
        assert_eq!(add(false, false, false), (false, false));
        for bits in 0..8u8 {
            let (w, v, c) = (bits & 1 == 1, bits & 2 == 2, bits & 4 == 4);
            let total = w as u8 + v as u8 + c as u8;
            assert_eq!(add(w, v, c), (total & 1 == 1, total >= 2));
        }
    }

    #[test]
    fn switch_map_four_bit() {
        let odd = switch_map(PrecisionMode::W4, Parity::Odd);
        let spans: Vec<_> = odd.groups.iter().map(|g| (g.weight.first, g.weight.last)).collect();
        assert_eq!(spans, vec![(0, 3), (8, 11), (16, 19), (24, 27), (32, 35), (40, 43)]);
        let even = switch_map(PrecisionMode::W4, Parity::Even);
        let spans: Vec<_> = even.groups.iter().map(|g| (g.weight.first, g.weight.last)).collect();
        assert_eq!(spans, vec![(4, 7), (12, 15), (20, 23), (28, 31), (36, 39), (44, 47)]);
        for (o, e) in odd.groups.iter().zip(&even.groups) {
            assert_eq!(o.vmem, e.vmem);
            assert_eq!(o.vmem.width(), 7);
        }
    }

    #[test]
    fn switch_map_eight_bit() {
        for parity in [Parity::Even, Parity::Odd] {
            let m = switch_map(PrecisionMode::W8, parity);
            assert_eq!(m.groups.len(), 3);
            assert!(m.groups.iter().all(|g| g.vmem.width() == 15 && g.weight.width() == 8));
            assert_eq!(m.groups.last().unwrap().vmem.first + 16, 48);
        }
    }

    #[test]
    fn switch_spans_are_disjoint() {
        for p in PrecisionMode::ALL {
            for parity in [Parity::Even, Parity::Odd] {
                let m = switch_map(p, parity);
                assert_eq!(m.groups.len(), 48 / (2 * p.weight_bits() as usize));
                let mut used = [false; 48];
                for g in &m.groups {
                    for c in g.vmem.first..=g.vmem.last {
                        assert!(!used[c]);
                        used[c] = true;
                    }
                }
            }
        }
    }

    #[test]
    fn ripple_matches_integer_addition() {
        for a in -64..64 {
            for b in -64..64 {
                let r = ripple_add(fixed::to_bits(a, 7), fixed::to_bits(b, 7), 7, false);
                assert_eq!(fixed::from_bits(r.sum, 7), fixed::wrap(a as i64 + b as i64, 7));
                assert_eq!(r.overflowed(), !fixed::in_range(a as i64 + b as i64, 7));
            }
        }
    }

    #[test]
    fn dump_format_is_stable() {
        let mut s = SramState::neuron_macro();
        s.set_row(0, 0xabc);
        s.set_row(64, 0xffff_ffff_ffff_ffff);
        let dump = s.dump();
        let lines: Vec<_> = dump.lines().collect();
        assert_eq!(lines.len(), 72);
        assert_eq!(lines[0], "000 partial 0x000000000abc");
        assert_eq!(lines[32], "032 full    0x000000000000");
        assert_eq!(lines[64], "064 param   0xffffffffffff");
    }
}

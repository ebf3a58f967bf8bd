use super::{resolve_overflow, ripple_add, sign_extend, Parity, SramState};
use crate::arch::{
    NeuronModel, NeuronSpec, PrecisionMode, Reset, IFSPAD_COLS, NEURON_FULL_ROWS, NEURON_PARTIAL_ROWS,
    VMEM_ROWS,
};
use crate::fixed::{self, Overflow};

pub const NEURON_PASS_CYCLES: u64 = 2 * NEURON_PARTIAL_ROWS as u64 + 2;
pub const PARAM_THRESHOLD_ROW: usize = NEURON_PARTIAL_ROWS + NEURON_FULL_ROWS;
pub const PARAM_LEAK_ROW: usize = PARAM_THRESHOLD_ROW + 1;

/// Spike flags of one neuron pass, indexed by `(x, field)` like the
/// compute macro's weight fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeuronPass {
    fields: usize,
    flags: Vec<bool>,
    pub cycles: u64,
}

impl NeuronPass {
    pub fn spiked(&self, x: usize, field: usize) -> bool {
        self.flags[x * self.fields + field]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

/// One 72x48 neuron macro holding partial and full Vmems plus θ/leak.
#[derive(Clone, Debug)]
pub struct NeuronMacro {
    sram: SramState,
    precision: PrecisionMode,
    overflow: Overflow,
}

impl NeuronMacro {
    pub fn new(precision: PrecisionMode, overflow: Overflow, neuron: &NeuronSpec) -> Self {
        let mut m = NeuronMacro {
            sram: SramState::neuron_macro(),
            precision,
            overflow,
        };
        m.load_params(neuron);
        m
    }

    pub fn sram(&self) -> &SramState {
        &self.sram
    }

    fn col(&self, g: usize) -> usize {
        2 * g * self.precision.weight_bits() as usize
    }

    /// Write θ and leak into every field of the parameter rows.
    pub fn load_params(&mut self, n: &NeuronSpec) {
        let vb = self.precision.vmem_bits();
        for g in 0..self.precision.vmem_fields_per_row() {
            let col = self.col(g);
            self.sram
                .set_field(PARAM_THRESHOLD_ROW, col, vb, fixed::to_bits(n.threshold, vb));
            self.sram
                .set_field(PARAM_LEAK_ROW, col, vb, fixed::to_bits(n.effective_leak(), vb));
        }
    }

    pub fn load_partial(&mut self, rows: &[u64; VMEM_ROWS]) {
        for (r, bits) in rows.iter().enumerate() {
            self.sram.set_row(r, *bits);
        }
    }

    pub fn clear_full(&mut self) {
        for r in 0..NEURON_FULL_ROWS {
            self.sram.set_row(NEURON_PARTIAL_ROWS + r, 0);
        }
    }

    /// Full Vmem of field group `g` in row pair entry `r` (0..32).
    pub fn full(&self, r: usize, g: usize) -> i32 {
        let vb = self.precision.vmem_bits();
        fixed::from_bits(self.sram.field(NEURON_PARTIAL_ROWS + r, self.col(g), vb), vb)
    }

    pub fn set_full(&mut self, r: usize, g: usize, v: i32) {
        let vb = self.precision.vmem_bits();
        let col = self.col(g);
        self.sram
            .set_field(NEURON_PARTIAL_ROWS + r, col, vb, fixed::to_bits(v, vb));
    }

    pub fn set_partial(&mut self, r: usize, g: usize, v: i32) {
        let vb = self.precision.vmem_bits();
        let col = self.col(g);
        self.sram.set_field(r, col, vb, fixed::to_bits(v, vb));
    }

    /// Full Vmem for compute-macro coordinates `(x, field)`.
    pub fn full_at(&self, x: usize, field: usize) -> i32 {
        self.full(2 * x + Parity::of_field(field).row_offset(), field / 2)
    }

    pub fn set_full_at(&mut self, x: usize, field: usize, v: i32) {
        self.set_full(2 * x + Parity::of_field(field).row_offset(), field / 2, v)
    }

    /// Integrate, leak, compare and reset every Vmem field. Each partial row
    /// takes two cycles (accumulate, compare + conditional write), plus two
    /// cycles of fill; the count never depends on the data.
    pub fn neuron_pass(&mut self, n: &NeuronSpec) -> NeuronPass {
        let vb = self.precision.vmem_bits();
        let fields = self.precision.fields_per_row();
        let mut flags = vec![false; IFSPAD_COLS * fields];
        for r in 0..NEURON_PARTIAL_ROWS {
            let full_row = NEURON_PARTIAL_ROWS + r;
            for g in 0..self.precision.vmem_fields_per_row() {
                let col = self.col(g);
                let full = self.sram.field(full_row, col, vb);
                let partial = self.sram.field(r, col, vb);
                let sum = ripple_add(full, partial, vb, false);
                let mut v = resolve_overflow(full, sum, vb, self.overflow);
                if n.model == NeuronModel::Lif {
                    let leak = self.sram.field(PARAM_LEAK_ROW, col, vb);
                    let mask = (1u64 << vb) - 1;
                    let diff = ripple_add(v, !leak & mask, vb, true);
                    v = resolve_overflow(v, diff, vb, self.overflow);
                }

                // v - θ in B+1 bits cannot overflow; its sign decides the spike.
                let theta = self.sram.field(PARAM_THRESHOLD_ROW, col, vb);
                let wide = vb + 1;
                let wmask = (1u64 << wide) - 1;
                let cmp = ripple_add(
                    sign_extend(v, vb, wide),
                    !sign_extend(theta, vb, wide) & wmask,
                    wide,
                    true,
                );
                let fire = (cmp.sum >> vb) & 1 == 0;
                let written = if fire {
                    match n.reset {
                        Reset::Hard => 0,
                        Reset::Soft => fixed::to_bits(
                            fixed::fit(fixed::from_bits(cmp.sum, wide) as i64, vb, self.overflow),
                            vb,
                        ),
                    }
                } else {
                    v
                };
                self.sram.set_field(full_row, col, vb, written);

                let parity = if r % 2 == 0 { Parity::Even } else { Parity::Odd };
                let field = 2 * g + if parity == Parity::Odd { 0 } else { 1 };
                flags[(r / 2) * fields + field] = fire;
            }
        }
        NeuronPass {
            fields,
            flags,
            cycles: NEURON_PASS_CYCLES,
        }
    }
}

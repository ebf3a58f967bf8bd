use serde::{Deserialize, Serialize};

use super::{
    resolve_overflow, ripple_add, sign_extend, switch_map, AddressTuple, MacroError, Parity,
    SramState, SwitchMap,
};
use crate::arch::{PrecisionMode, VMEM_ROWS, WEIGHT_ROWS};
use crate::fixed::{self, Overflow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Read,
    Compute,
    Store,
    Switch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub cycle: u64,
    pub stage: Stage,
    /// Index of the op in the issued sequence; `None` for switch cycles.
    pub op: Option<usize>,
    pub parity: Parity,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub events: Vec<PipelineEvent>,
}

impl PipelineTrace {
    /// Events in one stage, in cycle order.
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &PipelineEvent> {
        self.events.iter().filter(move |e| e.stage == stage)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSequenceRun {
    pub trace: PipelineTrace,
    pub cycles: u64,
    pub switches: u64,
}

/// One 160x48 compute macro with its RBL switch configuration.
#[derive(Clone, Debug)]
pub struct ComputeMacro {
    sram: SramState,
    precision: PrecisionMode,
    overflow: Overflow,
    parity: Parity,
    map: SwitchMap,
}

impl ComputeMacro {
    pub fn new(precision: PrecisionMode, overflow: Overflow) -> Self {
        ComputeMacro {
            sram: SramState::compute_macro(),
            precision,
            overflow,
            parity: Parity::Even,
            map: switch_map(precision, Parity::Even),
        }
    }

    pub fn precision(&self) -> PrecisionMode {
        self.precision
    }

    pub fn sram(&self) -> &SramState {
        &self.sram
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Reconfigure the RBL switches. Returns whether the parity changed.
    pub fn configure(&mut self, parity: Parity) -> bool {
        if parity == self.parity {
            return false;
        }
        self.parity = parity;
        self.map = switch_map(self.precision, parity);
        true
    }

    pub fn set_weight(&mut self, y: usize, j: usize, w: i32) {
        let wb = self.precision.weight_bits();
        debug_assert!(fixed::in_range(w as i64, wb));
        self.sram.set_field(y, j * wb as usize, wb, fixed::to_bits(w, wb));
    }

    pub fn weight(&self, y: usize, j: usize) -> i32 {
        let wb = self.precision.weight_bits();
        fixed::from_bits(self.sram.field(y, j * wb as usize, wb), wb)
    }

    fn vmem_col(&self, g: usize) -> usize {
        2 * g * self.precision.weight_bits() as usize
    }

    /// Vmem field `g` of Vmem row `r` (0..32).
    pub fn vmem(&self, r: usize, g: usize) -> i32 {
        let vb = self.precision.vmem_bits();
        fixed::from_bits(self.sram.field(WEIGHT_ROWS + r, self.vmem_col(g), vb), vb)
    }

    pub fn set_vmem(&mut self, r: usize, g: usize, v: i32) {
        let vb = self.precision.vmem_bits();
        let col = self.vmem_col(g);
        self.sram.set_field(WEIGHT_ROWS + r, col, vb, fixed::to_bits(v, vb));
    }

    /// Raw Vmem rows, as shipped to the next unit.
    pub fn vmem_rows(&self) -> [u64; VMEM_ROWS] {
        std::array::from_fn(|r| self.sram.row(WEIGHT_ROWS + r))
    }

    pub fn load_vmem_rows(&mut self, rows: &[u64; VMEM_ROWS]) {
        for (r, bits) in rows.iter().enumerate() {
            self.sram.set_row(WEIGHT_ROWS + r, *bits);
        }
    }

    pub fn clear_vmem(&mut self) {
        self.load_vmem_rows(&[0; VMEM_ROWS]);
    }

    pub fn clear_weights(&mut self) {
        for y in 0..WEIGHT_ROWS {
            self.sram.set_row(y, 0);
        }
    }

    /// Read, compute and store for one tuple, bit by bit through the
    /// column peripherals. Every connected field group is updated.
    pub fn accumulate(&mut self, t: AddressTuple) -> Result<(), MacroError> {
        t.check()?;
        if t.parity != self.parity {
            return Err(MacroError::ParityMismatch {
                configured: self.parity,
                requested: t.parity,
            });
        }
        let wb = self.precision.weight_bits();
        let vb = self.precision.vmem_bits();
        let vrow = WEIGHT_ROWS + t.vmem_row();
        for g in &self.map.groups {
            let w = self.sram.field(t.y, g.weight.first, wb);
            let v = self.sram.field(vrow, g.vmem.first, vb);
            let r = ripple_add(v, sign_extend(w, wb, vb), vb, false);
            let out = resolve_overflow(v, r, vb, self.overflow);
            self.sram.set_field(vrow, g.vmem.first, vb, out);
        }
        Ok(())
    }

    /// Issue `ops` back to back through the three-stage pipeline, switching
    /// parity where consecutive tuples differ. The first tuple's parity is
    /// set up before issue at no cost.
    pub fn run_op_sequence(
        &mut self,
        ops: &[AddressTuple],
        parity_switch_cycles: u64,
    ) -> Result<OpSequenceRun, MacroError> {
        let mut trace = PipelineTrace::default();
        let Some(first) = ops.first() else {
            return Ok(OpSequenceRun {
                trace,
                cycles: 0,
                switches: 0,
            });
        };
        self.configure(first.parity);
        let mut issue = 0u64;
        let mut switches = 0u64;
        for (i, t) in ops.iter().enumerate() {
            if i > 0 {
                issue += 1;
                if t.parity != self.parity {
                    for k in 0..parity_switch_cycles {
                        trace.events.push(PipelineEvent {
                            cycle: issue + k,
                            stage: Stage::Switch,
                            op: None,
                            parity: t.parity,
                        });
                    }
                    issue += parity_switch_cycles;
                    self.configure(t.parity);
                    switches += 1;
                }
            }
            self.accumulate(*t)?;
            for (k, stage) in [Stage::Read, Stage::Compute, Stage::Store].into_iter().enumerate() {
                trace.events.push(PipelineEvent {
                    cycle: issue + k as u64,
                    stage,
                    op: Some(i),
                    parity: t.parity,
                });
            }
        }
        trace.events.sort_by_key(|e| e.cycle);
        Ok(OpSequenceRun {
            trace,
            cycles: issue + 3,
            switches,
        })
    }
}
